//! Ground-truth simulation by thinning and plain-text dataset files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::filters::ObservationSet;
use crate::model::{CoxModel, InitialLaw};
use crate::rng::{tags, StreamKey};
use crate::sde::LinearSdeSpec;

/// Exact sequential draws of the state at `times` (strictly increasing,
/// `times[0] ≥ 0`); the initial law applies at time 0. Returns states
/// row-major.
pub fn simulate_state_path<R: Rng + ?Sized>(
    sde: &LinearSdeSpec,
    init: &InitialLaw,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = sde.dim();
    ensure(init.dim() == dim, || "initial law dimension mismatch".into())?;
    if let Some(&t0) = times.first() {
        ensure(t0 >= 0.0, || format!("times must be non-negative, got {t0}"))?;
    }
    for w in times.windows(2) {
        ensure(w[1] > w[0], || format!("times not strictly increasing at {}", w[1]))?;
    }
    let mut out = vec![0.0; times.len() * dim];
    let mut cur = vec![0.0; dim];
    init.sample_into(&mut cur, rng);
    let mut t = 0.0;
    for (k, &tk) in times.iter().enumerate() {
        let slot = &mut out[k * dim..(k + 1) * dim];
        sde.sample_transition_into(t, tk, &cur, slot, rng)?;
        cur.copy_from_slice(slot);
        t = tk;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinningMode {
    /// Candidates are evaluated at a fresh draw from the last accepted
    /// arrival; the state only advances on acceptance.
    #[default]
    Listing,
    /// The state is propagated through every candidate.
    Textbook,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub obs: ObservationSet,
    /// States at the accepted arrival times, row-major.
    pub truth: Vec<f64>,
    pub candidates: usize,
}

/// Thinning with dominating rate `lambda_max` on `[0, horizon]`.
pub fn simulate_observations(
    model: &CoxModel,
    lambda_max: f64,
    horizon: f64,
    key: StreamKey,
    mode: ThinningMode,
) -> Result<SimulatedData> {
    ensure(lambda_max >= 0.0 && lambda_max.is_finite(), || "λ_max must be non-negative".into())?;
    ensure(horizon > 0.0, || "horizon must be positive".into())?;
    let dim = model.dim();
    let mark_dim = model.marks.mark_dim(dim);
    let mut rng = key.child(tags::THINNING).stream(0, 0);
    let mut mark_rng = key.child(tags::MARKS).stream(0, 0);
    let count = if lambda_max * horizon > 0.0 {
        Poisson::new(lambda_max * horizon)
            .map_err(|e| Error::InvalidInput(format!("Poisson rate: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut cand: Vec<f64> = (0..count).map(|_| horizon * rng.random::<f64>()).collect();
    cand.sort_unstable_by(|a, b| a.total_cmp(b));
    cand.dedup();
    cand.retain(|&t| t > 0.0);

    let mut x_tau = vec![0.0; dim];
    model.init.sample_into(&mut x_tau, &mut rng);
    let mut tau = 0.0;
    let mut x = vec![0.0; dim];
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut truth = Vec::new();
    for &t in &cand {
        model.sde.sample_transition_into(tau, t, &x_tau, &mut x, &mut rng)?;
        let lam = model.intensity.eval(&x)?;
        if lam > lambda_max {
            return Err(Error::DominatingRate {
                value: lam,
                lambda_max,
                t,
            });
        }
        let u: f64 = rng.random();
        let accept = u * lambda_max <= lam && lam > 0.0;
        if accept {
            times.push(t);
            truth.extend_from_slice(&x);
            marks.extend(model.marks.sample(&x, &mut mark_rng)?);
        }
        if accept || mode == ThinningMode::Textbook {
            tau = t;
            x_tau.copy_from_slice(&x);
        }
    }
    Ok(SimulatedData {
        obs: ObservationSet::new(times, marks, mark_dim, horizon)?,
        truth,
        candidates: cand.len(),
    })
}

pub const DATASET_MAGIC: &str = "coxfilter-dataset";
pub const TRUTH_MAGIC: &str = "coxfilter-truth";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub model: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
}

fn fmt_row(out: &mut String, t: f64, vals: &[f64]) {
    write!(out, "{t:.16e}").unwrap();
    for v in vals {
        write!(out, ",{v:.16e}").unwrap();
    }
    out.push('\n');
}

/// Renders a dataset file; marks and times are written with 17 significant
/// digits so that parsing restores them bit for bit.
pub fn format_dataset(obs: &ObservationSet, header: &DatasetHeader) -> String {
    let mut s = String::new();
    writeln!(s, "# {DATASET_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "# model: {}", header.model).unwrap();
    writeln!(s, "# parameters: {}", header.parameters).unwrap();
    match header.seed {
        Some(seed) => writeln!(s, "# seed: {seed}").unwrap(),
        None => writeln!(s, "# seed: none").unwrap(),
    }
    writeln!(s, "# horizon: {:.16e}", obs.horizon()).unwrap();
    writeln!(s, "# mark_dim: {}", obs.mark_dim()).unwrap();
    let cols: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=obs.mark_dim()).map(|i| format!("y{i}")))
        .collect();
    writeln!(s, "{}", cols.join(",")).unwrap();
    for (i, &t) in obs.times().iter().enumerate() {
        fmt_row(&mut s, t, obs.mark(i));
    }
    s
}

pub fn format_truth(times: &[f64], states: &[f64], dim: usize) -> String {
    let mut s = String::new();
    writeln!(s, "# {TRUTH_MAGIC} {FORMAT_VERSION}").unwrap();
    let cols: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=dim).map(|i| format!("x{i}")))
        .collect();
    writeln!(s, "{}", cols.join(",")).unwrap();
    for (i, &t) in times.iter().enumerate() {
        fmt_row(&mut s, t, &states[i * dim..(i + 1) * dim]);
    }
    s
}

/// Writes the dataset and, when `truth` (states at the arrival times) is
/// given, a sibling `<stem>.truth.csv`.
pub fn write_dataset(path: &Path, obs: &ObservationSet, truth: Option<(&[f64], usize)>, header: &DatasetHeader) -> Result<()> {
    fs::write(path, format_dataset(obs, header))?;
    if let Some((states, dim)) = truth {
        fs::write(truth_path(path), format_truth(obs.times(), states, dim))?;
    }
    Ok(())
}

pub fn truth_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.truth.csv"))
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix('#')
        .map(str::trim)
        .and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(':'))
        .map(str::trim)
        .ok_or_else(|| Error::Dataset(format!("expected header `{key}`, found `{line}`")))
}

pub fn parse_dataset(text: &str) -> Result<(DatasetHeader, ObservationSet)> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Dataset(format!("missing {what}")));
    let magic = next("format line")?;
    let mut parts = magic.trim_start_matches('#').split_whitespace();
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(Error::Dataset(format!("not a dataset file: `{magic}`")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Dataset("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Dataset(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let model = header_value(next("model")?, "model")?.to_string();
    let parameters = serde_json::from_str(header_value(next("parameters")?, "parameters")?)
        .map_err(|e| Error::Dataset(format!("parameters: {e}")))?;
    let seed = match header_value(next("seed")?, "seed")? {
        "none" => None,
        s => Some(s.parse().map_err(|e| Error::Dataset(format!("seed: {e}")))?),
    };
    let horizon: f64 = header_value(next("horizon")?, "horizon")?
        .parse()
        .map_err(|e| Error::Dataset(format!("horizon: {e}")))?;
    let mark_dim: usize = header_value(next("mark_dim")?, "mark_dim")?
        .parse()
        .map_err(|e| Error::Dataset(format!("mark_dim: {e}")))?;
    let cols = next("column header")?;
    if cols.split(',').count() != mark_dim + 1 {
        return Err(Error::Dataset(format!("column header `{cols}` does not match mark_dim {mark_dim}")));
    }
    let mut times = Vec::new();
    let mut marks = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("row {}: {e}", ln + 1)))?;
        if vals.len() != mark_dim + 1 {
            return Err(Error::Dataset(format!("row {} has {} fields, expected {}", ln + 1, vals.len(), mark_dim + 1)));
        }
        times.push(vals[0]);
        marks.extend_from_slice(&vals[1..]);
    }
    let obs = ObservationSet::new(times, marks, mark_dim, horizon).map_err(|e| Error::Dataset(e.to_string()))?;
    Ok((
        DatasetHeader {
            model,
            parameters,
            seed,
        },
        obs,
    ))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, ObservationSet)> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// Reads a truth file into `(times, states, dim)`.
pub fn read_truth(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if !magic.contains(TRUTH_MAGIC) {
        return Err(Error::Dataset("not a truth file".into()));
    }
    let dim = lines.next().map(|c| c.split(',').count().saturating_sub(1)).unwrap_or(0);
    let mut times = Vec::new();
    let mut states = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(e.to_string()))?;
        if vals.len() != dim + 1 {
            return Err(Error::Dataset("ragged truth row".into()));
        }
        times.push(vals[0]);
        states.extend_from_slice(&vals[1..]);
    }
    Ok((times, states, dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_version() {
        let text = "# coxfilter-dataset 9\n# model: x\n# parameters: {}\n# seed: 1\n# horizon: 1\n# mark_dim: 0\nt\n";
        assert!(matches!(parse_dataset(text), Err(Error::Dataset(_))));
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = "# coxfilter-dataset 1\n# model: x\n# parameters: {}\n# seed: 1\n# horizon: 1\n# mark_dim: 1\nt,y1\n0.5\n";
        assert!(parse_dataset(text).is_err());
    }
}

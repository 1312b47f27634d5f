use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use coxfilter::calibration::{
    fit_rmse_model, format_chain, pmmh_run, rmse_cell, summarize, Backend, ChainSummary, Method, PmmhConfig, RmseModel,
};
use coxfilter::datagen::{read_dataset, simulate_observations, write_dataset, DatasetHeader};
use coxfilter::estimator::{
    choose_step_size, neg_prob_bound_endpoint, neg_prob_bound_marginal, step_constraints, truncation_bias_bound,
    EstimatorConfig,
};
use coxfilter::filters::{
    build_time_grid, run_continuous_pf, run_discretised_pf, FilterOptions, FilterOutput, FilterReport, ObservationSet,
};
use coxfilter::oracles::run_exact_weight_pf;
use coxfilter::rng::StreamKey;
use coxfilter::CoxModel;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{require, BackendKind, BoundsConfig, Config, EstimatorSettings, ModelFactory};
use crate::error::{CliError, CliResult};

pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.out_path(name)?;
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    fn out_path(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Io {
            path: self.out_dir.clone(),
            source,
        })?;
        Ok(self.out_dir.join(name))
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialise");
    s.push('\n');
    s
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let mc = ctx.config.model()?;
    let sc = require(&ctx.config.simulate, "simulate")?;
    positive("simulate.horizon", sc.horizon)?;
    let lambda_max = sc
        .lambda_max
        .or_else(|| mc.default_lambda_max())
        .ok_or_else(|| CliError::config("simulate.lambda_max is required for an affine intensity"))?;
    let factory = ModelFactory::new(mc)?;
    let model = factory.build()?;
    let data = simulate_observations(&model, lambda_max, sc.horizon, StreamKey::new(ctx.seed), sc.mode)?;
    let parameters = serde_json::json!({
        "model": mc,
        "horizon": sc.horizon,
        "lambda_max": lambda_max,
        "mode": sc.mode,
    });
    let header = DatasetHeader {
        model: mc.name.clone(),
        parameters,
        seed: Some(ctx.seed),
    };
    let path = ctx.out_path(&sc.output)?;
    write_dataset(&path, &data.obs, Some((&data.truth, model.dim())), &header)?;
    eprintln!(
        "{} arrivals from {} candidates written to {}",
        data.obs.len(),
        data.candidates,
        path.display()
    );
    Ok(())
}

fn estimator_config(delta: f64, est: &EstimatorSettings) -> EstimatorConfig {
    EstimatorConfig {
        delta,
        epsilon: est.epsilon,
        d: est.d,
        policy: est.policy,
    }
}

/// Grid step for a backend: explicit, or the budget-driven choice for the
/// continuous filter.
fn resolve_delta(
    backend: BackendKind,
    delta: Option<f64>,
    est: &EstimatorSettings,
    model: &CoxModel,
    horizon: f64,
    particles: usize,
) -> CliResult<f64> {
    let delta = match (backend, delta) {
        (_, Some(d)) => d,
        (BackendKind::Discretised, None) => return Err(CliError::config("the discretised backend needs a delta")),
        (BackendKind::ExactOracle, None) => horizon,
        (BackendKind::Continuous, None) => {
            let l = est.lipschitz.or_else(|| model.intensity.lipschitz_hint()).unwrap_or(0.0);
            if l > 0.0 {
                choose_step_size(particles, horizon, l, est.d, est.epsilon)?
            } else {
                horizon
            }
        }
    };
    positive("delta", delta)?;
    Ok(delta)
}

fn run_backend(
    backend: BackendKind,
    model: &CoxModel,
    obs: &ObservationSet,
    cfg: &EstimatorConfig,
    n: usize,
    key: StreamKey,
    opts: FilterOptions,
) -> coxfilter::Result<FilterOutput> {
    match backend {
        BackendKind::Discretised => run_discretised_pf(model, obs, cfg.delta, n, key, opts),
        BackendKind::Continuous => run_continuous_pf(model, obs, cfg, n, key, opts),
        BackendKind::ExactOracle => run_exact_weight_pf(model, obs, cfg.delta, n, key),
    }
}

#[derive(Serialize)]
struct FilterResult {
    backend: &'static str,
    seed: u64,
    delta: f64,
    particles: usize,
    observations: usize,
    log_likelihoods: Vec<f64>,
    likelihood_mean: f64,
    /// Standard error of the mean over replicates.
    likelihood_se: Option<f64>,
    negatives: u64,
    /// Full report of the first replicate.
    report: FilterReport,
}

pub fn filter(ctx: &Context, data: &Path) -> CliResult<()> {
    let fc = require(&ctx.config.filter, "filter")?;
    if fc.particles == 0 || fc.replicates == 0 {
        return Err(CliError::config("filter.particles and filter.replicates must be positive"));
    }
    let factory = ModelFactory::new(ctx.config.model()?)?;
    let model = factory.build()?;
    let (_, obs) = read_dataset(data)?;
    let delta = resolve_delta(fc.backend, fc.delta, &fc.estimator, &model, obs.horizon(), fc.particles)?;
    let cfg = estimator_config(delta, &fc.estimator);
    let opts = FilterOptions {
        store_trajectories: fc.trajectories,
    };
    let key = StreamKey::new(ctx.seed);
    let mut runs = Vec::with_capacity(fc.replicates);
    for r in 0..fc.replicates {
        runs.push(run_backend(fc.backend, &model, &obs, &cfg, fc.particles, key.child(r as u64), opts)?);
    }
    let log_likelihoods: Vec<f64> = runs.iter().map(|o| o.log_likelihood).collect();
    let values: Vec<f64> = runs.iter().map(FilterOutput::likelihood).collect();
    let (mean, se) = coxfilter::special::mean_se(&values);
    let result = FilterResult {
        backend: fc.backend.name(),
        seed: ctx.seed,
        delta,
        particles: fc.particles,
        observations: obs.len(),
        log_likelihoods,
        likelihood_mean: mean,
        likelihood_se: (values.len() > 1).then_some(se),
        negatives: runs.iter().map(|o| o.negatives).sum(),
        report: FilterReport::from_output(&runs[0])?,
    };
    let path = ctx.write(&fc.output, &to_json(&result))?;
    eprintln!("log-likelihood {} written to {}", runs[0].log_likelihood, path.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct CellSpec {
    method: Method,
    delta: f64,
    n: usize,
    budget: Option<f64>,
}

fn method_tag(m: Method) -> u64 {
    match m {
        Method::Discretised => 1,
        Method::Continuous => 2,
    }
}

#[derive(Serialize)]
struct BenchSummary {
    seed: u64,
    log_truth: f64,
    /// Log-log slope of the best grid rMSE against the budget, per method.
    exponents: BTreeMap<&'static str, f64>,
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn likelihood_bench(ctx: &Context, data: Option<&Path>) -> CliResult<()> {
    let bc = require(&ctx.config.bench, "bench")?;
    if bc.replicates < 2 {
        return Err(CliError::config("bench.replicates must be at least 2"));
    }
    if bc.deltas.is_empty() || bc.methods.is_empty() {
        return Err(CliError::config("bench.deltas and bench.methods must be non-empty"));
    }
    for &d in &bc.deltas {
        positive("bench.deltas", d)?;
    }
    let factory = ModelFactory::new(ctx.config.model()?)?;
    let model = factory.build()?;
    let obs = match data {
        Some(p) => read_dataset(p)?.1,
        None => {
            let horizon = bc
                .horizon
                .ok_or_else(|| CliError::config("bench.horizon is required without a dataset"))?;
            let mark_dim = model.marks.mark_dim(model.dim());
            ObservationSet::new(bc.times.clone(), bc.marks.clone(), mark_dim, horizon)
                .map_err(|e| CliError::config(format!("bench observations: {e}")))?
        }
    };
    let log_truth = factory.config.exact_log_likelihood(&obs)?;
    let truth = log_truth.exp();

    let mut specs = Vec::new();
    match (&bc.particles, &bc.budgets) {
        (Some(ns), None) => {
            for &method in &bc.methods {
                for &delta in &bc.deltas {
                    for &n in ns {
                        if n == 0 {
                            return Err(CliError::config("bench.particles must be positive"));
                        }
                        specs.push(CellSpec {
                            method,
                            delta,
                            n,
                            budget: None,
                        });
                    }
                }
            }
        }
        (None, Some(budgets)) => {
            for &method in &bc.methods {
                for &c in budgets {
                    positive("bench.budgets", c)?;
                    for &delta in &bc.deltas {
                        let segments = build_time_grid(&obs, delta)?.segments();
                        let n = ((c / segments as f64).round() as usize).max(1);
                        specs.push(CellSpec {
                            method,
                            delta,
                            n,
                            budget: Some(c),
                        });
                    }
                }
            }
        }
        _ => return Err(CliError::config("give exactly one of bench.particles and bench.budgets")),
    }

    // Repeated cells are run once per repeat and averaged.
    let mut unique: Vec<(CellSpec, usize)> = Vec::new();
    for s in specs {
        match unique.iter_mut().find(|(u, _)| *u == s) {
            Some((_, k)) => *k += 1,
            None => unique.push((s, 1)),
        }
    }

    let key = StreamKey::new(ctx.seed);
    let mut rows = String::from("method,delta,n,budget,cost,replicates,rmse,rmse_se\n");
    let mut timing = String::from("method,delta,n,seconds_per_run\n");
    let mut results = Vec::new();
    for (spec, copies) in &unique {
        let cell_key = key
            .child(method_tag(spec.method))
            .child(spec.delta.to_bits())
            .child(spec.n as u64);
        let mut rmse = 0.0;
        let mut var = 0.0;
        let mut seconds = 0.0;
        let mut cost = 0.0;
        for c in 0..*copies {
            let cell = rmse_cell(spec.method, &model, &obs, spec.delta, spec.n, bc.replicates, truth, cell_key.child(c as u64))?;
            rmse += cell.rmse;
            var += cell.rmse_se.powi(2);
            seconds += cell.seconds;
            cost = cell.cost;
        }
        let k = *copies as f64;
        let (rmse, se) = (rmse / k, var.sqrt() / k);
        let budget = spec.budget.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            rows,
            "{},{},{},{budget},{cost},{},{rmse:e},{se:e}",
            spec.method.name(),
            spec.delta,
            spec.n,
            bc.replicates * copies
        )
        .unwrap();
        writeln!(timing, "{},{},{},{:e}", spec.method.name(), spec.delta, spec.n, seconds / k).unwrap();
        eprintln!("{} Δ={} N={}: rMSE {rmse:.3e} ± {se:.1e}", spec.method.name(), spec.delta, spec.n);
        results.push((*spec, rmse));
    }
    ctx.write("bench.csv", &rows)?;
    ctx.write("bench_timing.csv", &timing)?;

    if let Some(budgets) = &bc.budgets {
        let mut fits =
            String::from("method,budget,c1,c2,delta_star,delta_min,fitted_min_rmse,grid_argmin_delta,grid_min_rmse\n");
        let mut exponents = BTreeMap::new();
        for &method in &bc.methods {
            let model_kind = match method {
                Method::Discretised => RmseModel::Discretised,
                Method::Continuous => RmseModel::Poisson,
            };
            let (mut lc, mut lr) = (Vec::new(), Vec::new());
            let mut seen = Vec::new();
            for &c in budgets {
                if seen.contains(&c.to_bits()) {
                    continue;
                }
                seen.push(c.to_bits());
                let points: Vec<(f64, f64)> = results
                    .iter()
                    .filter(|(s, _)| s.method == method && s.budget == Some(c))
                    .map(|(s, r)| (s.delta, *r))
                    .collect();
                let (arg, best) = points
                    .iter()
                    .copied()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty delta grid");
                let fit = match fit_rmse_model(&points, c, model_kind) {
                    Ok(f) => format!(
                        "{:e},{:e},{},{},{:e}",
                        f.c1,
                        f.c2,
                        f.delta_star,
                        f.delta_min,
                        f.eval(model_kind, c, f.delta_min)
                    ),
                    Err(_) => ",,,,".into(),
                };
                writeln!(fits, "{},{c},{fit},{arg},{best:e}", method.name()).unwrap();
                lc.push(c.ln());
                lr.push(best.ln());
            }
            if lc.len() >= 2 {
                exponents.insert(method.name(), slope(&lc, &lr));
            }
        }
        ctx.write("bench_fit.csv", &fits)?;
        let summary = BenchSummary {
            seed: ctx.seed,
            log_truth,
            exponents,
        };
        ctx.write("bench_summary.json", &to_json(&summary))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PmmhResult {
    backend: &'static str,
    seed: u64,
    iterations: usize,
    burn_in: usize,
    particles: usize,
    delta: Option<f64>,
    summary: ChainSummary,
}

pub fn pmmh(ctx: &Context, data: &Path) -> CliResult<()> {
    let pc = require(&ctx.config.pmmh, "pmmh")?;
    let factory = ModelFactory::new(ctx.config.model()?)?;
    let (_, obs) = read_dataset(data)?;
    let names: Vec<String> = pc.parameters.iter().map(|p| p.name.clone()).collect();
    for p in &pc.parameters {
        factory.config.clone().set(&p.name, p.initial).map_err(CliError::config)?;
    }
    let mut cfg = PmmhConfig::new(
        names.clone(),
        pc.parameters.iter().map(|p| p.lower).collect(),
        pc.parameters.iter().map(|p| p.upper).collect(),
        pc.parameters.iter().map(|p| p.initial).collect(),
        pc.iterations,
        pc.burn_in,
    );
    positive("pmmh.initial_cov_scale", pc.initial_cov_scale)?;
    let d = names.len();
    cfg.initial_cov = DMatrix::identity(d, d) * pc.initial_cov_scale;
    cfg.adaptation = pc.adaptation;
    cfg.validate().map_err(|e| CliError::config(format!("pmmh: {e}")))?;
    if pc.backend != BackendKind::ExactOracle && pc.particles == 0 {
        return Err(CliError::config("pmmh.particles must be positive"));
    }

    let build = |theta: &[f64]| factory.build_params(&names, theta);
    let oracle = |theta: &[f64]| factory.config_with(&names, theta)?.exact_log_likelihood(&obs);
    let delta = pc.delta.unwrap_or(obs.horizon());
    positive("pmmh.delta", delta)?;
    let backend = match pc.backend {
        BackendKind::Discretised => Backend::Discretised {
            delta,
            n: pc.particles,
        },
        BackendKind::Continuous => Backend::Continuous {
            cfg: estimator_config(delta, &pc.estimator),
            n: pc.particles,
        },
        BackendKind::ExactOracle => Backend::ExactOracle(&oracle),
    };
    let chain = pmmh_run(&cfg, &obs, &build, &backend, StreamKey::new(ctx.seed))?;
    let summary = summarize(&chain, pc.burn_in);
    ctx.write("chain.csv", &format_chain(&chain))?;
    let result = PmmhResult {
        backend: pc.backend.name(),
        seed: ctx.seed,
        iterations: pc.iterations,
        burn_in: pc.burn_in,
        particles: pc.particles,
        delta: (pc.backend != BackendKind::ExactOracle).then_some(delta),
        summary,
    };
    ctx.write("summary.json", &to_json(&result))?;
    for (j, name) in names.iter().enumerate() {
        eprintln!("{name}: mean {:.4} sd {:.4}", result.summary.mean[j], result.summary.sd[j]);
    }
    eprintln!("acceptance rate {:.3}", result.summary.acceptance_rate);
    Ok(())
}

pub fn bounds(ctx: &Context) -> CliResult<()> {
    let default = BoundsConfig::default();
    let bc = ctx.config.bounds.as_ref().unwrap_or(&default);
    positive("bounds.l", bc.l)?;
    positive("bounds.horizon", bc.horizon)?;
    positive("bounds.d", bc.d)?;
    if bc.particles == 0 || !(bc.gap_scale >= 0.0) || !bc.eta_power.is_finite() {
        return Err(CliError::config("bounds: need particles > 0, gap_scale ≥ 0 and a finite eta_power"));
    }
    for &d in &bc.deltas {
        positive("bounds.deltas", d)?;
    }
    for &s in &bc.eta_scales {
        if !(s > 0.0) {
            return Err(CliError::config(format!("bounds.eta_scales must be positive, got {s}")));
        }
    }
    let nt = bc.particles as f64 * bc.horizon;
    let ln10 = std::f64::consts::LN_10;
    let mut out = String::from(
        "delta,eta,gap,endpoint_log10,marginal_log10,marginal_steps_log10,truncation_bias_log10,constraint_endpoint_log10,constraint_marginal_log10\n",
    );
    for &delta in &bc.deltas {
        let gap = bc.gap_scale * delta.sqrt();
        let (ce, cm) = step_constraints(nt, delta, bc.l, bc.d)?;
        let steps = (bc.horizon / delta).ceil();
        let bias = truncation_bias_bound(delta, bc.l, bc.horizon, steps as usize)
            .map(|b| b.log10())
            .unwrap_or(f64::NAN);
        for &s in &bc.eta_scales {
            let eta = s * delta.powf(bc.eta_power) * bc.l;
            let e = neg_prob_bound_endpoint(eta, delta, bc.l, gap)?;
            let m = neg_prob_bound_marginal(eta, delta, bc.l)?;
            writeln!(
                out,
                "{delta},{eta},{gap},{},{},{},{bias},{},{}",
                e.log10(),
                m.log10(),
                m.log10() + (bc.horizon / delta).log10(),
                ce / ln10,
                cm / ln10
            )
            .unwrap();
        }
    }
    let path = ctx.write("bounds.csv", &out)?;
    match choose_step_size(bc.particles, bc.horizon, bc.l, bc.d, 1e-6) {
        Ok(d) => eprintln!("largest step within a 1e-6 budget: {d:.5}"),
        Err(e) => eprintln!("no step within a 1e-6 budget: {e}"),
    }
    eprintln!("bounds written to {}", path.display());
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coxfilter::datagen::{format_dataset, read_dataset, DatasetHeader};
use coxfilter::filters::ObservationSet;
use coxfilter::oracles::{likelihood_no_obs, likelihood_two_obs};
use serde_json::Value;
use tempfile::TempDir;

const BENCHMARK_MODEL: &str = r#"
[model]
name = "benchmark"
dynamics = { kind = "brownian", dim = 1 }
initial = { kind = "point", x = [0.0] }
intensity = { kind = "affine", slope = [1.0], intercept = 10.0 }
marks = { kind = "gaussian", sigma = 1.0 }
"#;

fn coxfilter(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coxfilter"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn two_obs_dataset(dir: &Path) -> PathBuf {
    let obs = ObservationSet::new(vec![0.5, 1.4], vec![0.3, -0.2], 1, 2.0).unwrap();
    let p = dir.join("two.csv");
    fs::write(&p, format_dataset(&obs, &DatasetHeader::default())).unwrap();
    p
}

fn empty_dataset(dir: &Path, horizon: f64, mark_dim: usize) -> PathBuf {
    let obs = ObservationSet::empty(horizon, mark_dim).unwrap();
    let p = dir.join("empty.csv");
    fs::write(&p, format_dataset(&obs, &DatasetHeader::default())).unwrap();
    p
}

#[test]
fn zero_rate_simulation_gives_empty_dataset() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
[model]
dynamics = { kind = "brownian", dim = 1 }
initial = { kind = "point", x = [0.0] }
intensity = { kind = "constant", rate = 0.0 }

[simulate]
horizon = 3.0
"#,
    );
    let out = coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    ok(&out);
    let path = dir.path().join("dataset.csv");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# coxfilter-dataset"));
    let (header, obs) = read_dataset(&path).unwrap();
    assert!(obs.is_empty());
    assert_eq!(obs.horizon(), 3.0);
    assert_eq!(header.seed, Some(0));
}

#[test]
fn simulate_is_byte_identical_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let text = format!("{BENCHMARK_MODEL}\n[simulate]\nhorizon = 2.0\nlambda_max = 25.0\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&coxfilter(&a, &["--config", cfg.to_str().unwrap(), "--seed", "11", "simulate"]));
    ok(&coxfilter(&b, &["--config", cfg.to_str().unwrap(), "--seed", "11", "simulate"]));
    for f in ["dataset.csv", "dataset.truth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&coxfilter(&c, &["--config", cfg.to_str().unwrap(), "--seed", "12", "simulate"]));
    assert_ne!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(c.join("dataset.csv")).unwrap());
}

#[test]
fn molecule_count_matches_expected_intensity() {
    // Stationary X3 ~ N(μ3, 1/(2φ3)), so E λ(X_t) = λ0 exp(-μ3/d + v/(2d²)).
    let (lambda0, depth, phi3, mu3, horizon) = (25.0f64, 20.0f64, 4.0f64, 2.0f64, 5.0f64);
    let dir = TempDir::new().unwrap();
    let text = format!(
        r#"
[model]
dynamics = {{ kind = "ornstein_uhlenbeck", phi = [1.0, 1.0, {phi3}], mu = [0.0, 0.0, {mu3}] }}
initial = {{ kind = "stationary" }}
intensity = {{ kind = "exponential_depth", lambda0 = {lambda0}, depth = {depth}, axis = 2 }}
marks = {{ kind = "born_wolf", cached = false }}

[simulate]
horizon = {horizon}
"#
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let var = 1.0 / (2.0 * phi3);
    let expected = horizon * lambda0 * (-mu3 / depth + var / (2.0 * depth * depth)).exp();
    for seed in ["1", "2", "3"] {
        ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", seed, "simulate"]));
        let (_, obs) = read_dataset(&dir.path().join("dataset.csv")).unwrap();
        assert_eq!(obs.mark_dim(), 2);
        let z = (obs.len() as f64 - expected) / expected.sqrt();
        assert!(z.abs() < 4.0, "seed {seed}: {} arrivals, expected {expected:.1}", obs.len());
    }
}

#[test]
fn constant_rate_without_arrivals_is_exact() {
    let dir = TempDir::new().unwrap();
    let data = empty_dataset(dir.path(), 2.5, 0);
    for backend in ["discretised", "continuous"] {
        let text = format!(
            r#"
[model]
dynamics = {{ kind = "brownian", dim = 1 }}
initial = {{ kind = "point", x = [0.0] }}
intensity = {{ kind = "constant", rate = 3.0 }}

[filter]
backend = "{backend}"
particles = 50
delta = 0.1
"#
        );
        let cfg = write_config(dir.path(), "c.toml", &text);
        ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "filter", "--data", data.to_str().unwrap()]));
        let v = json(&dir.path().join("filter.json"));
        let ll = v["report"]["log_likelihood"].as_f64().unwrap();
        assert!((ll + 7.5).abs() < 1e-12, "{backend}: {ll}");
    }
}

#[test]
fn continuous_filter_covers_two_observation_truth() {
    let dir = TempDir::new().unwrap();
    let data = two_obs_dataset(dir.path());
    let text = format!("{BENCHMARK_MODEL}\n[filter]\nbackend = \"continuous\"\nparticles = 2000\ndelta = 0.1\nreplicates = 100\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "3", "filter", "--data", data.to_str().unwrap()]));
    let v = json(&dir.path().join("filter.json"));
    let mean = v["likelihood_mean"].as_f64().unwrap();
    let se = v["likelihood_se"].as_f64().unwrap();
    let truth = likelihood_two_obs(0.5, 1.4, 0.3, -0.2, 2.0, 1.0).unwrap();
    assert!((mean - truth).abs() < 3.0 * se, "mean {mean:e} truth {truth:e} se {se:e}");
}

#[test]
fn automatic_step_gives_no_negative_estimates() {
    let dir = TempDir::new().unwrap();
    let data = two_obs_dataset(dir.path());
    let text = format!("{BENCHMARK_MODEL}\n[filter]\nbackend = \"continuous\"\nparticles = 1000\nreplicates = 5\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "filter", "--data", data.to_str().unwrap()]));
    let v = json(&dir.path().join("filter.json"));
    assert_eq!(v["negatives"].as_u64(), Some(0));
    let delta = v["delta"].as_f64().unwrap();
    assert!(delta > 0.0 && delta < 0.1, "{delta}");
}

#[test]
fn exact_oracle_filter_on_empty_data() {
    let dir = TempDir::new().unwrap();
    let data = empty_dataset(dir.path(), 2.0, 1);
    let text = format!("{BENCHMARK_MODEL}\n[filter]\nbackend = \"exact_oracle\"\nparticles = 2000\nreplicates = 50\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "filter", "--data", data.to_str().unwrap()]));
    let v = json(&dir.path().join("filter.json"));
    assert_eq!(v["delta"].as_f64(), Some(2.0));
    let mean = v["likelihood_mean"].as_f64().unwrap();
    let se = v["likelihood_se"].as_f64().unwrap();
    let truth = likelihood_no_obs(2.0);
    assert!((mean - truth).abs() < 3.0 * se, "mean {mean:e} truth {truth:e} se {se:e}");
}

#[test]
fn threads_and_reruns_do_not_change_output() {
    let dir = TempDir::new().unwrap();
    let data = two_obs_dataset(dir.path());
    // Enough particles to take the parallel path.
    let text = format!("{BENCHMARK_MODEL}\n[filter]\nbackend = \"continuous\"\nparticles = 5000\ndelta = 0.1\ntrajectories = true\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let mut outputs = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let d = dir.path().join(sub);
        ok(&coxfilter(
            &d,
            &["--config", cfg.to_str().unwrap(), "--threads", threads, "--seed", "5", "filter", "--data", data.to_str().unwrap()],
        ));
        outputs.push(fs::read(d.join("filter.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[model\n");
    let out = coxfilter(dir.path(), &["--config", bad.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = write_config(dir.path(), "unknown.toml", &format!("{BENCHMARK_MODEL}\n[simulate]\nhorizon = 1.0\nbogus = 3\n"));
    let out = coxfilter(dir.path(), &["--config", unknown.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let no_section = write_config(dir.path(), "model.toml", BENCHMARK_MODEL);
    let out = coxfilter(dir.path(), &["--config", no_section.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let no_rate = write_config(dir.path(), "norate.toml", &format!("{BENCHMARK_MODEL}\n[simulate]\nhorizon = 1.0\n"));
    let out = coxfilter(dir.path(), &["--config", no_rate.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = coxfilter(dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let filter = write_config(
        dir.path(),
        "filter.toml",
        &format!("{BENCHMARK_MODEL}\n[filter]\nbackend = \"continuous\"\nparticles = 10\n"),
    );
    let out = coxfilter(dir.path(), &["--config", filter.to_str().unwrap(), "filter", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(1));

    // Too-small dominating rate is a simulation error.
    let tight = write_config(dir.path(), "tight.toml", &format!("{BENCHMARK_MODEL}\n[simulate]\nhorizon = 5.0\nlambda_max = 5.0\n"));
    let out = coxfilter(dir.path(), &["--config", tight.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_needs_an_oracle() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        r#"
[model]
dynamics = { kind = "brownian", dim = 1 }
initial = { kind = "point", x = [0.0] }
intensity = { kind = "affine", slope = [2.0], intercept = 10.0 }

[bench]
deltas = [0.1]
particles = [10]
replicates = 4
horizon = 1.0
"#,
    );
    let out = coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "likelihood-bench"]);
    assert_eq!(out.status.code(), Some(1));
}

fn bench_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn bench_averages_duplicate_cells() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{BENCHMARK_MODEL}\n[bench]\nmethods = [\"discretised\"]\ndeltas = [0.1, 0.1, 0.2]\nparticles = [50]\nreplicates = 10\nhorizon = 2.0\ntimes = [0.5, 1.4]\nmarks = [0.3, -0.2]\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "likelihood-bench"]));
    let rows = bench_rows(&dir.path().join("bench.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "0.1");
    assert_eq!(rows[0][5], "20");
    assert_eq!(rows[1][5], "10");
    let again = dir.path().join("again");
    ok(&coxfilter(&again, &["--config", cfg.to_str().unwrap(), "likelihood-bench"]));
    assert_eq!(fs::read(dir.path().join("bench.csv")).unwrap(), fs::read(again.join("bench.csv")).unwrap());
}

#[test]
fn discretised_rmse_is_u_shaped_at_fixed_budget() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{BENCHMARK_MODEL}\n[bench]\nmethods = [\"discretised\"]\ndeltas = [0.01, 0.03, 0.1, 0.3, 0.7]\nbudgets = [2e4]\nreplicates = 300\nhorizon = 2.0\ntimes = [0.5, 1.4]\nmarks = [0.3, -0.2]\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    ok(&coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "4", "likelihood-bench"]));
    let rows = bench_rows(&dir.path().join("bench.csv"));
    let rmse: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    let argmin = (0..rmse.len()).min_by(|&a, &b| rmse[a].total_cmp(&rmse[b])).unwrap();
    assert!(argmin > 0 && argmin < rmse.len() - 1, "{rmse:?}");
    let fit = bench_rows(&dir.path().join("bench_fit.csv"));
    assert_eq!(fit.len(), 1);
    let delta_min: f64 = fit[0][5].parse().unwrap();
    let grid_arg: f64 = fit[0][7].parse().unwrap();
    assert!(delta_min / grid_arg < 2.0 && grid_arg / delta_min < 2.0, "{delta_min} vs {grid_arg}");
}

#[test]
fn pmmh_exact_backend_is_plain_metropolis_hastings() {
    let dir = TempDir::new().unwrap();
    let data = two_obs_dataset(dir.path());
    let text = format!(
        "{BENCHMARK_MODEL}\n[pmmh]\niterations = 300\nburn_in = 50\nbackend = \"exact_oracle\"\n\n[[pmmh.parameters]]\nname = \"marks.sigma\"\nlower = 0.2\nupper = 4.0\ninitial = 1.0\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        ok(&coxfilter(&d, &["--config", cfg.to_str().unwrap(), "--seed", "9", "pmmh", "--data", data.to_str().unwrap()]));
        d
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(fs::read(a.join("chain.csv")).unwrap(), fs::read(b.join("chain.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());

    let rows = bench_rows(&a.join("chain.csv"));
    assert_eq!(rows.len(), 300);
    let mut prev: Option<(f64, f64)> = None;
    for r in &rows {
        let sigma: f64 = r[1].parse().unwrap();
        let ll: f64 = r[2].parse().unwrap();
        // The stored value is the exact likelihood at the stored state.
        let exact = likelihood_two_obs(0.5, 1.4, 0.3, -0.2, 2.0, sigma).unwrap().ln();
        assert!((ll - exact).abs() < 1e-12 * exact.abs());
        if r[3] == "0" {
            if let Some(p) = prev {
                assert_eq!((sigma, ll), p);
            }
        }
        prev = Some((sigma, ll));
    }
    let s = json(&a.join("summary.json"));
    let rate = s["summary"]["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.05 && rate < 0.95, "{rate}");
}

#[test]
fn pmmh_rejects_unknown_parameters() {
    let dir = TempDir::new().unwrap();
    let data = two_obs_dataset(dir.path());
    let text = format!(
        "{BENCHMARK_MODEL}\n[pmmh]\niterations = 10\nburn_in = 2\nbackend = \"exact_oracle\"\n\n[[pmmh.parameters]]\nname = \"phi.2\"\nlower = 0.0\nupper = 10.0\ninitial = 1.0\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = coxfilter(dir.path(), &["--config", cfg.to_str().unwrap(), "pmmh", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn bounds_table(dir: &Path, config: Option<&str>) -> Vec<Vec<f64>> {
    let mut args = vec![];
    let cfg;
    if let Some(text) = config {
        cfg = write_config(dir, "b.toml", text);
        args.push("--config".to_string());
        args.push(cfg.to_str().unwrap().to_string());
    }
    args.push("bounds".into());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&coxfilter(dir, &refs));
    bench_rows(&dir.join("bounds.csv"))
        .into_iter()
        .map(|r| r.iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn bounds_limits_and_trends() {
    let dir = TempDir::new().unwrap();
    let rows = bounds_table(
        dir.path(),
        Some("[bounds]\ndeltas = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5]\neta_scales = [1.0, inf]\ngap_scale = 3.0\n"),
    );
    assert_eq!(rows.len(), 12);
    for r in rows.iter().filter(|r| r[1].is_infinite()) {
        assert_eq!(r[3], f64::NEG_INFINITY);
        assert_eq!(r[4], f64::NEG_INFINITY);
    }
    // Marginal bound times the step count at η = Δl, T = 1 decays as Δ
    // shrinks (above Δ ≈ 0.5 it saturates near 1).
    let curve: Vec<f64> = rows.iter().filter(|r| r[1].is_finite()).map(|r| r[5]).collect();
    assert!(curve.windows(2).all(|w| w[0] < w[1]), "{curve:?}");
    // Run-level endpoint constraint at Δ = 0.01, NT = 1e4, d = 3.
    let first = &rows[0];
    assert_eq!(first[0], 0.01);
    assert!((first[7] + 55.0).abs() <= 1.0, "{}", first[7]);
}

#[test]
fn bounds_run_without_a_config() {
    let dir = TempDir::new().unwrap();
    let rows = bounds_table(dir.path(), None);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[3] <= 0.0 && r[4] <= 0.0));
}

//! End-to-end acceptance checks. Each check writes one `PASS`/`FAIL` line to
//! stderr (outside the test harness capture) and then asserts.
//!
//! The sweep-based checks share one full three-problem sweep at master seed 1
//! and run one at a time so the recorded wall time is not inflated by
//! concurrent work.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use common::*;
use num_complex::Complex64;
use popmaml::harness::output::{run_sweep, SweepOutcome};
use popmaml::harness::{generate_problem_data, mean_predictor_nmse, nmse, run_experiment, ExperimentConfig, Method, Problem, SweepConfig};
use popmaml::maml::{self, TaskBatches};
use popmaml::nn::{self, Example, MlpParams};
use popmaml::population::{frf_magnitudes, stiffness_at, FrequencyGrid, StructureSpec, TemperatureRange};
use rand::Rng;
use std::f64::consts::PI;

const SEED: u64 = 1;

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("[acceptance] {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn check(name: &str, pass: bool, detail: String) {
    report(name, pass, &detail);
    assert!(pass, "{name}: {detail}");
}

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

struct FullSweep {
    dir: tempfile::TempDir,
    outcomes: Vec<SweepOutcome>,
    seconds: f64,
}

impl FullSweep {
    fn of(&self, p: Problem) -> &SweepOutcome {
        &self.outcomes[Problem::ALL.iter().position(|q| *q == p).unwrap()]
    }

    fn results_csv(&self, p: Problem) -> PathBuf {
        self.dir.path().join(p.name()).join("results.csv")
    }
}

fn sweep_config(p: Problem, seed: u64) -> SweepConfig {
    let mut cfg = SweepConfig::default();
    cfg.set("problem", p.name()).unwrap();
    cfg.set("seed", &seed.to_string()).unwrap();
    cfg
}

/// Runs the complete protocol once; callers must hold [`heavy`].
fn full_sweep() -> &'static FullSweep {
    static SWEEP: OnceLock<FullSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let outcomes = Problem::ALL
            .iter()
            .map(|&p| run_sweep(&sweep_config(p, SEED), Some(&dir.path().join(p.name()))).unwrap())
            .collect();
        FullSweep {
            dir,
            outcomes,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn mean_nmse(o: &SweepOutcome, method: Method, n: usize, shots: usize) -> f64 {
    o.record(method, n, shots).unwrap().nmse_mean
}

#[test]
fn pca_variance_of_full_frf_corpus() {
    let mut ratios = Vec::new();
    for seed in 1..=5 {
        let cfg = ExperimentConfig {
            problem: Problem::FullFrfPca,
            master_seed: seed,
            ..Default::default()
        };
        let data = generate_problem_data(&cfg).unwrap();
        ratios.push(data.pca.unwrap().cumulative_ratio());
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "three components explain {} (floor 0.90, expected >= 0.92)",
        ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ")
    );
    check("pca-variance", min >= 0.90, detail);
}

fn modal_receptance(m: f64, c: f64, k: f64, hz: f64) -> [Complex64; 2] {
    let w = 2.0 * PI * hz;
    let s5 = 5f64.sqrt();
    let mut h = [Complex64::new(0.0, 0.0); 2];
    for lambda in [(3.0 - s5) / 2.0, (3.0 + s5) / 2.0] {
        let v = [1.0, 2.0 - lambda];
        let denom = Complex64::new(k * lambda / m - w * w, w * c * lambda / m) * (m * (v[0] * v[0] + v[1] * v[1]));
        h[0] += v[0] * v[0] / denom;
        h[1] += v[1] * v[0] / denom;
    }
    h
}

#[test]
fn second_order_meta_gradient_check() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_net(&mut r, 1, 4, 1);
        let batches: Vec<TaskBatches> = (0..2)
            .map(|_| {
                let t = random_batch(&mut r, 4, 1, 1);
                TaskBatches {
                    inner: t[..2].to_vec(),
                    meta: t[2..].to_vec(),
                }
            })
            .collect();
        let alpha = r.gen_range(0.01..0.5);
        let objective = |q: &MlpParams| -> f64 {
            batches
                .iter()
                .map(|b| {
                    let adapted = nn::axpy_update(q, &nn::grad(q, &b.inner).unwrap(), alpha).unwrap();
                    nn::mse_loss(&adapted, &b.meta).unwrap()
                })
                .sum()
        };
        let (_, g) = maml::meta_gradient_on_batches(&p, &batches, alpha, true).unwrap();
        worst = worst.max(rel_error(g.as_slice(), &fd_gradient(&p, 1e-5, objective), 1e-8));
    }
    check("meta-gradient", worst < 1e-4, format!("worst relative error {worst:.2e} over 20 draws (< 1e-4)"));
}

#[test]
fn gradient_and_hvp_checks() {
    let mut r = rng(2025);
    let (mut g_worst, mut h_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let p = random_net(&mut r, 1, 5, 1);
        let n = r.gen_range(1..=8);
        let batch: Vec<Example> = random_batch(&mut r, n, 1, 1);
        let g = nn::grad(&p, &batch).unwrap();
        let fd = fd_gradient(&p, 1e-6, |q| nn::mse_loss(q, &batch).unwrap());
        g_worst = g_worst.max(rel_error(g.as_slice(), &fd, 1e-8));
        let v = random_direction(&mut r, &p);
        let hv = nn::hessian_vector_product(&p, &batch, &v).unwrap();
        h_worst = h_worst.max(rel_error(hv.as_slice(), &hvp_by_differences(&p, &batch, &v, 1e-5), 1e-8));
    }
    check(
        "gradient-hvp",
        g_worst < 1e-6 && h_worst < 1e-4,
        format!("gradient {g_worst:.2e} (< 1e-6), HVP {h_worst:.2e} (< 1e-4) over 100 draws"),
    );
}

#[test]
fn frf_matches_modal_oracle() {
    let mut r = rng(2026);
    let range = TemperatureRange::default();
    let grid = FrequencyGrid::default();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let spec = StructureSpec::new(format!("a{i}"), r.gen_range(8000.0..12000.0));
        let t = r.gen_range(0.0..20.0);
        let k = stiffness_at(&spec, t, &range).unwrap();
        let frf = frf_magnitudes(&spec, t, &grid, &range).unwrap();
        for (j, &hz) in grid.lines().iter().enumerate() {
            let h = modal_receptance(spec.mass, spec.damping, k, hz);
            worst = worst.max((frf.magnitudes_dof1[j] - h[0].norm()).abs() / h[0].norm());
            worst = worst.max((frf.magnitudes_dof2[j] - h[1].norm()).abs() / h[1].norm());
        }
    }
    let fine: Vec<f64> = (1..=4000).map(|i| i as f64 * 0.01).collect();
    let frf = frf_magnitudes(&StructureSpec::new("k", 1e4), 0.0, &FrequencyGrid::new(fine.clone()).unwrap(), &range).unwrap();
    let h = &frf.magnitudes_dof1;
    let peaks: Vec<f64> = (1..h.len() - 1).filter(|&i| h[i] > h[i - 1] && h[i] > h[i + 1]).map(|i| fine[i]).collect();
    let s5 = 5f64.sqrt();
    let natural = [(3.0 - s5) / 2.0, (3.0 + s5) / 2.0].map(|l| (1e4 * l).sqrt() / (2.0 * PI));
    let peaks_ok = peaks.len() == 2 && peaks.iter().zip(natural).all(|(p, f)| (p - f).abs() < 0.5);
    check(
        "frf-oracle",
        worst < 1e-10 && peaks_ok,
        format!("worst relative error {worst:.2e} (< 1e-10); peaks {peaks:?} vs natural {natural:.3?} Hz"),
    );
}

#[test]
fn nmse_anchors() {
    let mut parts = Vec::new();
    let mut ok = true;
    for p in Problem::ALL {
        let data = generate_problem_data(&ExperimentConfig {
            problem: p,
            master_seed: SEED,
            ..Default::default()
        })
        .unwrap();
        let obs: Vec<Vec<f64>> = data.evaluation_targets().map(|y| y.to_vec()).collect();
        let exact = nmse(&obs, &obs, data.sigma_pop).unwrap();
        let mean = mean_predictor_nmse(&data).unwrap();
        ok &= exact == 0.0 && (95.0..=105.0).contains(&mean);
        parts.push(format!("{p}: exact {exact}, mean predictor {mean:.2}"));
    }
    check("nmse-anchors", ok, parts.join("; "));
}

/// MAML below 5% and below GP for every shot count of at least three.
fn headline(records: impl Fn(Method, usize) -> f64, shots: &[usize]) -> (bool, String) {
    let mut ok = true;
    let mut lost = Vec::new();
    for &s in shots.iter().filter(|&&s| s >= 3) {
        let (m, g) = (records(Method::Maml, s), records(Method::Gp, s));
        if !(m < g && m < 5.0) {
            ok = false;
            lost.push(format!("shots {s}: MAML {m:.3} vs GP {g:.3}"));
        }
    }
    let detail = if ok { "MAML < GP and < 5% for all shots >= 3".to_string() } else { lost.join("; ") };
    (ok, detail)
}

#[test]
fn headline_trend_three_seeds() {
    let _g = heavy();
    let sweep = full_sweep();
    let shots = ExperimentConfig::default().shot_counts;
    let mut all = true;
    let o = sweep.of(Problem::Line1Hz);
    let (ok, detail) = headline(|m, s| mean_nmse(o, m, 8, s), &shots);
    report(&format!("headline-trend seed {SEED}"), ok, &detail);
    all &= ok;
    for seed in [2, 3] {
        let start = Instant::now();
        let out = run_experiment(&sweep_config(Problem::Line1Hz, seed).cell(8)).unwrap();
        let get = |m: Method, s: usize| out.records.iter().find(|r| r.method == m && r.shots == s).unwrap().nmse_mean;
        let (ok, detail) = headline(get, &shots);
        report(
            &format!("headline-trend seed {seed}"),
            ok,
            &format!("{detail} ({:.0} s)", start.elapsed().as_secs_f64()),
        );
        all &= ok;
    }
    assert!(all, "headline trend fails for at least one seed");
}

#[test]
fn population_size_trend() {
    let _g = heavy();
    let o = full_sweep().of(Problem::Line1Hz);
    let (n8, n2) = (mean_nmse(o, Method::Maml, 8, 5), mean_nmse(o, Method::Maml, 2, 5));
    check("population-size-trend", n8 <= n2, format!("MAML at 5 shots: n=8 {n8:.4} vs n=2 {n2:.4}"));
}

#[test]
fn difficulty_ordering() {
    let _g = heavy();
    let s = full_sweep();
    let one = mean_nmse(s.of(Problem::Line1Hz), Method::Maml, 8, 5);
    let two = mean_nmse(s.of(Problem::Line50Hz), Method::Maml, 8, 5);
    check(
        "difficulty-ordering",
        two > one,
        format!("MAML at n=8, 5 shots: 50 Hz line {two:.4} vs 1 Hz line {one:.4}"),
    );
}

#[test]
fn repeated_sweep_is_byte_identical() {
    let _g = heavy();
    let first = full_sweep();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sweep_config(Problem::Line1Hz, SEED);
    cfg.base.workers = Some(2);
    run_sweep(&cfg, Some(dir.path())).unwrap();
    let a = std::fs::read(first.results_csv(Problem::Line1Hz)).unwrap();
    let b = std::fs::read(dir.path().join("results.csv")).unwrap();
    check(
        "determinism",
        a == b,
        format!("results.csv of two {} sweeps at seed {SEED}: {} vs {} bytes, identical = {}", Problem::Line1Hz, a.len(), b.len(), a == b),
    );
}

#[test]
fn full_sweep_runtime() {
    let _g = heavy();
    let s = full_sweep();
    let cells: usize = s.outcomes.iter().map(|o| o.cells.len()).sum();
    let rows: usize = s.outcomes.iter().map(|o| o.records().len()).sum();
    check(
        "sweep-runtime",
        s.seconds < 3600.0 && rows == 3 * 4 * 10 * 2,
        format!("{cells} cells, {rows} result rows in {:.1} min (< 60 min)", s.seconds / 60.0),
    );
}

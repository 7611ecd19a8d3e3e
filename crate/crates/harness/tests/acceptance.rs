//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use grouse_core::basis::random_orthonormal;
use grouse_core::bounds::{k1_bound, k2_bound, phase_targets, BoundParams};
use grouse_core::metrics::{cross_gram, principal_angles};
use grouse_core::model::make_planted;
use grouse_core::montecarlo::{
    eps_rate_check, initial_similarity, initial_similarity_approx, zeta_rate_check, FixedIterate,
};
use grouse_core::rng::{derive_seed, stream};
use grouse_core::step::{StepConfig, StepMode, Stepper};
use grouse_harness::sweep::{run_sweep, SweepReport};
use grouse_harness::trajectory::{run_trajectory_with, RunOptions};
use grouse_harness::ExperimentConfig;

// Criteria run one at a time so the runtime limits measure a single workload.
static SERIAL: Mutex<()> = Mutex::new(());

fn print_verdict(id: u32, title: &str, passed: bool, elapsed: Duration, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{verdict} criterion {id:>2} {title}: {detail} [{:.1} s]", elapsed.as_secs_f64());
}

fn report_line(id: u32, title: &str, passed: bool, elapsed: Duration, detail: &str) {
    print_verdict(id, title, passed, elapsed, detail);
    assert!(passed, "{detail}");
}

fn protocol(n: usize, d: usize, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig { trials, seed, sparse_ubar: true, ..ExperimentConfig::new(n, d) }
}

#[test]
fn criterion_01_noiseless_identities() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (n, d, steps) = (100, 5, 500);
    let (mut worst_ratio, mut worst_drop, mut checked) = (0.0f64, 0.0f64, 0u64);
    for trial in 0..100 {
        let mut rng = stream(derive_seed(101, trial));
        let model = make_planted(n, d, 0.0, false, &mut rng).unwrap();
        let mut u = random_orthonormal(n, d, &mut rng).unwrap();
        let mut stepper = Stepper::new(StepConfig::greedy()).unwrap();
        let mut m = cross_gram(&u, &model.ubar).unwrap();
        let mut zeta = principal_angles(&u, &model.ubar).unwrap().zeta();
        for _ in 0..steps {
            let v = model.draw_sample(&mut rng).v;
            let v_par = u.matrix() * (u.matrix().transpose() * &v);
            let out = stepper.step(&u, &v, None).unwrap();
            u = out.updated;
            let m_next = cross_gram(&u, &model.ubar).unwrap();
            let zeta_next = principal_angles(&u, &model.ubar).unwrap().zeta();
            if !out.skipped {
                let v_perp = &v - &v_par;
                let par_sq = v_par.norm_squared();
                let ratio = 1.0 + v_perp.norm_squared() / par_sq;
                worst_ratio = worst_ratio.max(((zeta_next / zeta) - ratio).abs() / ratio);
                let drop = 1.0 - (model.ubar.matrix().transpose() * &v_par).norm_squared() / par_sq;
                let measured_drop = m_next.norm_squared() - m.norm_squared();
                worst_drop = worst_drop.max((measured_drop - drop).abs());
                checked += 1;
            }
            m = m_next;
            zeta = zeta_next;
        }
    }
    let elapsed = start.elapsed();
    let passed = worst_ratio <= 1e-8 && worst_drop <= 1e-8 && elapsed < Duration::from_secs(30);
    let detail = format!(
        "{checked} steps, max relative error of zeta ratio {worst_ratio:.2e} (<= 1e-8), \
         max error of eps decrease {worst_drop:.2e} (<= 1e-8)"
    );
    report_line(1, "noiseless monotonicity identities", passed, elapsed, &detail);
}

fn noiseless_protocol_runs() -> (ExperimentConfig, SweepReport, Duration) {
    let start = Instant::now();
    let cfg = protocol(200, 5, 50, 202);
    let report = run_sweep(std::slice::from_ref(&cfg), 1).unwrap();
    (cfg, report, start.elapsed())
}

#[test]
fn criterion_02_global_convergence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (cfg, report, elapsed) = noiseless_protocol_runs();
    let params = cfg.bound_params();
    let k = k1_bound(&params) + k2_bound(&params).unwrap();
    let within = report
        .trials
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok())
        .filter(|r| r.final_eps <= cfg.eps_star && (r.iters_run as f64) <= k)
        .count();
    let frac = within as f64 / cfg.trials as f64;
    let passed = frac >= 0.8 && report.rows[0].failed == 0 && elapsed < Duration::from_secs(120);
    let detail = format!("{within}/{} trials reached eps <= 1e-4 within K = {k:.0} (>= 80%)", cfg.trials);
    report_line(2, "global noiseless convergence", passed, elapsed, &detail);
}

#[test]
fn criterion_03_local_linear_rate() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (cfg, report, elapsed) = noiseless_protocol_runs();
    let row = &report.rows[0];
    let limit = k2_bound(&cfg.bound_params()).unwrap();
    let passed = row.frac_k2_within_bound >= 0.9 && (0.25..=1.0).contains(&row.k2_ratio_mean);
    let detail = format!(
        "K2 <= {limit:.1} in {:.0}% of trials (>= 90%), mean K2/(d ln(1/eps*)) = {:.3} (in [0.25, 1])",
        100.0 * row.frac_k2_within_bound,
        row.k2_ratio_mean
    );
    report_line(3, "local linear rate", passed, elapsed, &detail);
}

#[test]
fn criterion_04_k1_looseness() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let grid: Vec<ExperimentConfig> = [(500, 5), (500, 10), (1000, 5), (1000, 10)]
        .iter()
        .enumerate()
        .map(|(i, &(n, d))| protocol(n, d, 50, 400 + i as u64))
        .collect();
    let report = run_sweep(&grid, 1).unwrap();
    let elapsed = start.elapsed();
    let means: Vec<f64> = report.rows.iter().map(|r| r.k1_ratio_mean).collect();
    let complete = report.rows.iter().all(|r| r.reached_k1 == r.trials);
    let passed = complete && means.iter().all(|&m| m < 0.1);
    let cells: Vec<String> =
        report.rows.iter().map(|r| format!("n={} d={}: {:.4}", r.n, r.d, r.k1_ratio_mean)).collect();
    let detail = format!("mean K1/(d^3 ln n) per config {} (< 0.1)", cells.join(", "));
    report_line(4, "K1 looseness", passed, elapsed, &detail);
}

#[test]
fn criterion_05_random_init_expectation() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (n, d) = (20, 2);
    let acc = initial_similarity(n, d, 100_000, 505).unwrap();
    let elapsed = start.elapsed();
    let reference = initial_similarity_approx(n, d, 1.0);
    let rel = (acc.mean() - reference).abs() / reference;
    let passed = rel <= 0.25 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "mean zeta0 {:.4e} (se {:.1e}) vs (d/ne)^d = {reference:.4e}, relative deviation {:.1}% (<= 25%)",
        acc.mean(),
        acc.std_err(),
        100.0 * rel
    );
    report_line(5, "random-init expectation", passed, elapsed, &detail);
}

#[test]
fn criterion_06_zeta_rate_bound() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cells = Vec::new();
    let mut passed = true;
    for (i, &sigma_sq) in [1e-3, 1e-1].iter().enumerate() {
        for (j, &zeta) in [0.01, 0.1, 0.5].iter().enumerate() {
            let k = (3 * i + j) as u64;
            let mut rng = stream(derive_seed(606, k));
            let it = FixedIterate::equal_angles(2000, 20, sigma_sq, zeta, &mut rng).unwrap();
            let check = zeta_rate_check(&it, 10_000, derive_seed(616, k)).unwrap();
            passed &= check.passed();
            cells.push(format!("sigma2={sigma_sq:e} zeta={zeta}: {:.4e} vs {:.4e}", check.measured, check.reference));
        }
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(300);
    let detail = format!("mean zeta' >= bound - 3 se in every cell; {}", cells.join("; "));
    report_line(6, "expected zeta rate bound", passed, elapsed, &detail);
}

#[test]
fn criterion_07_eps_rate_bound() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = stream(707);
    let it = FixedIterate::equal_angles(500, 10, 1e-3, 0.6, &mut rng).unwrap();
    let check = eps_rate_check(&it, 10_000, 717).unwrap();
    let elapsed = start.elapsed();
    let passed = check.passed() && elapsed < Duration::from_secs(120);
    report_line(7, "expected eps rate bound", passed, elapsed, &check.to_string());
}

#[test]
fn criterion_08_noisy_plateau() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = ExperimentConfig { sigma_sq: 1e-4, mode: StepMode::PracticalNoisy, ..protocol(5000, 10, 20, 808) };
    let params: BoundParams = cfg.bound_params();
    let (_, target_eps) = phase_targets(&params, true);
    let report = run_sweep(std::slice::from_ref(&cfg), 1).unwrap();
    let elapsed = start.elapsed();
    let ok = report
        .trials
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok())
        .filter(|r| r.phase.k1.is_some() && r.phase.k2.is_some() && r.final_eps <= target_eps)
        .count();
    let passed = ok as f64 >= 0.9 * cfg.trials as f64 && elapsed < Duration::from_secs(300);
    let detail = format!(
        "{ok}/{} trials reached eps <= {target_eps:.2e} with finite K1 and K2 (>= 90%), tau = ln d = {:.3}",
        cfg.trials, params.tau1
    );
    report_line(8, "noisy plateau", passed, elapsed, &detail);
}

#[test]
fn criterion_09_orthonormality_hygiene() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = ExperimentConfig { seed: 909, max_iters: Some(100_000), ..ExperimentConfig::new(1000, 10) };
    let opts = RunOptions { stop_at_target: false, ..RunOptions::default() };
    let (result, points) = run_trajectory_with(&cfg, 0, opts).unwrap();
    let elapsed = start.elapsed();
    let worst = points.iter().map(|p| p.orthonormality_error).fold(0.0, f64::max);
    let passed = result.iters_run == 100_000 && worst <= 1e-9;
    let detail = format!(
        "{} steps ({} skipped), {} recorded, max |U'U - I| = {worst:.2e} (<= 1e-9)",
        result.iters_run,
        result.skipped_steps,
        points.len()
    );
    report_line(9, "numerical hygiene", passed, elapsed, &detail);
}

#[test]
fn criterion_10_sweep_determinism() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let grid = vec![
        protocol(60, 3, 6, 0),
        ExperimentConfig { sigma_sq: 1e-3, mode: StepMode::PracticalNoisy, ..protocol(80, 4, 5, 0) },
    ];
    let config = dir.path().join("grid.json");
    std::fs::write(&config, serde_json::to_string(&grid).unwrap()).unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("out{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_grouse"))
            .args(["sweep", "--seed", "1010", "--threads", threads, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        ["summary.csv", "trials.csv"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let (one, eight) = (run("1"), run("8"));
    let elapsed = start.elapsed();
    let passed = one == eight;
    let detail = format!(
        "summary.csv ({} bytes) and trials.csv ({} bytes) identical at 1 and 8 threads",
        one[0].len(),
        one[1].len()
    );
    report_line(10, "sweep determinism", passed, elapsed, &detail);
}

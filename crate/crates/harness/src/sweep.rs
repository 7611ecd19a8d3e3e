//! Parameter sweeps: many trials per config, run in parallel and summarized
//! by the phase ratios `K₁/(d³ ln n)` and `K₂/(d ln(1/ε*))`.

use std::io::Write;

use grouse_core::bounds::{k1_bound, k2_bound};
use grouse_core::montecarlo::MeanAccumulator;
use grouse_core::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compact_json;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::trajectory::{run_trajectory, TrialResult};

pub const SUMMARY_HEADER: &str = "config,n,d,sigma_sq,eps_star,mode,trials,failed,reached_k1,reached_k2,\
k1_ratio_mean,k1_ratio_var,k2_ratio_mean,k2_ratio_var,frac_k2_within_bound,frac_total_within_bound";

pub const TRIALS_HEADER: &str = "config,trial_id,derived_seed,k1,k2,final_zeta,final_eps,iters_run,skipped_steps,error";

/// One trial of a sweep. A failed trial keeps its error message and the
/// sweep moves on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: usize,
    pub trial_id: u64,
    pub derived_seed: u64,
    pub outcome: std::result::Result<TrialResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: usize,
    pub n: usize,
    pub d: usize,
    pub sigma_sq: f64,
    pub eps_star: f64,
    pub mode: String,
    pub trials: usize,
    pub failed: usize,
    pub reached_k1: usize,
    pub reached_k2: usize,
    pub k1_ratio_mean: f64,
    pub k1_ratio_var: f64,
    pub k2_ratio_mean: f64,
    pub k2_ratio_var: f64,
    /// Share of all trials with `K₂ ≤ 2d ln(1/(ε*ρ))`.
    pub frac_k2_within_bound: f64,
    /// Share of all trials finishing both phases within `K₁ + K₂` bounds.
    pub frac_total_within_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: Vec<ExperimentConfig>,
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialRecord>,
}

/// Runs every trial of every config on a pool of `threads` workers. Each
/// trial seeds itself from `(config seed, trial_id)`, so the report does not
/// depend on `threads`.
pub fn run_sweep(grid: &[ExperimentConfig], threads: usize) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    if threads == 0 {
        return Err(HarnessError::Config("threads must be >= 1".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let grid: Vec<ExperimentConfig> = grid.iter().map(ExperimentConfig::resolved).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(i, cfg)| (0..cfg.trials as u64).map(move |t| (i, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let trials: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(config, trial_id)| TrialRecord {
                config,
                trial_id,
                derived_seed: derive_seed(grid[config].seed, trial_id),
                outcome: run_trajectory(&grid[config], trial_id).map(|(r, _)| r).map_err(|e| e.to_string()),
            })
            .collect()
    });
    let rows = grid.iter().enumerate().map(|(i, cfg)| summarize(i, cfg, &trials)).collect::<Result<_>>()?;
    Ok(SweepReport { grid, rows, trials })
}

fn summarize(index: usize, cfg: &ExperimentConfig, trials: &[TrialRecord]) -> Result<SweepRow> {
    let params = cfg.bound_params();
    let (n, d) = (cfg.n as f64, cfg.d as f64);
    let k1_scale = d.powi(3) * n.ln();
    let k2_scale = d * (1.0 / cfg.eps_star).ln();
    let k1_limit = k1_bound(&params);
    let k2_limit = k2_bound(&params)?;

    let (mut k1_ratio, mut k2_ratio) = (MeanAccumulator::default(), MeanAccumulator::default());
    let (mut failed, mut k2_within, mut total_within) = (0, 0, 0);
    for record in trials.iter().filter(|r| r.config == index) {
        let result = match &record.outcome {
            Ok(r) => r,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        if let Some(k1) = result.phase.k1 {
            k1_ratio.push(k1 as f64 / k1_scale);
        }
        if let Some(k2) = result.phase.k2 {
            k2_ratio.push(k2 as f64 / k2_scale);
            if k2 as f64 <= k2_limit {
                k2_within += 1;
            }
        }
        if result.phase.total().is_some_and(|k| k as f64 <= k1_limit + k2_limit) {
            total_within += 1;
        }
    }
    let mean_or_nan = |a: &MeanAccumulator| if a.count() == 0 { f64::NAN } else { a.mean() };
    let trials_run = cfg.trials as f64;
    Ok(SweepRow {
        config: index,
        n: cfg.n,
        d: cfg.d,
        sigma_sq: cfg.sigma_sq,
        eps_star: cfg.eps_star,
        mode: cfg.mode.to_string(),
        trials: cfg.trials,
        failed,
        reached_k1: k1_ratio.count() as usize,
        reached_k2: k2_ratio.count() as usize,
        k1_ratio_mean: mean_or_nan(&k1_ratio),
        k1_ratio_var: k1_ratio.variance(),
        k2_ratio_mean: mean_or_nan(&k2_ratio),
        k2_ratio_var: k2_ratio.variance(),
        frac_k2_within_bound: k2_within as f64 / trials_run,
        frac_total_within_bound: total_within as f64 / trials_run,
    })
}

impl SweepReport {
    /// Summary table, one row per config, preceded by the grid as a `#` line.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# grid: {}", compact_json(&self.grid))?;
        writeln!(out, "{SUMMARY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.config,
                r.n,
                r.d,
                r.sigma_sq,
                r.eps_star,
                r.mode,
                r.trials,
                r.failed,
                r.reached_k1,
                r.reached_k2,
                r.k1_ratio_mean,
                r.k1_ratio_var,
                r.k2_ratio_mean,
                r.k2_ratio_var,
                r.frac_k2_within_bound,
                r.frac_total_within_bound
            )?;
        }
        Ok(())
    }

    /// Per-trial table; unreached phases and absent errors are empty fields.
    pub fn write_trials_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRIALS_HEADER}")?;
        let opt = |v: Option<u64>| v.map_or(String::new(), |k| k.to_string());
        for t in &self.trials {
            match &t.outcome {
                Ok(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},",
                    t.config,
                    t.trial_id,
                    t.derived_seed,
                    opt(r.phase.k1),
                    opt(r.phase.k2),
                    r.final_zeta,
                    r.final_eps,
                    r.iters_run,
                    r.skipped_steps
                )?,
                Err(e) => {
                    writeln!(out, "{},{},{},,,,,,,\"{}\"", t.config, t.trial_id, t.derived_seed, e.replace('"', "'"))?
                }
            }
        }
        Ok(())
    }
}

use std::io::Write;

use grouse_core::basis::{random_orthonormal, OrthonormalBasis};
use grouse_core::bounds::{detect_phases, phase_targets, PhaseReport};
use grouse_core::metrics::MetricSample;
use grouse_core::model::make_planted;
use grouse_core::rng::{derive_seed, stream};
use grouse_core::step::{OracleInfo, StepMode, Stepper};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::compact_json;
use crate::error::Result;

pub const TRAJECTORY_HEADER: &str = "t,zeta,epsilon,theta,alpha,p_norm_sq,r_norm_sq,skipped";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Orthonormalized Gaussian matrix.
    #[default]
    Random,
    /// Start at the ground truth.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub init: Initialization,
    /// Stop once both phase targets are met. When false the run always
    /// lasts `max_iters` steps.
    pub stop_at_target: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { init: Initialization::Random, stop_at_target: true }
    }
}

/// A recorded step: metrics of the new iterate plus the step that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub metrics: MetricSample,
    pub theta: f64,
    pub alpha: f64,
    pub skipped: bool,
    /// `max |UᵀU − I|` of the iterate.
    pub orthonormality_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: u64,
    pub derived_seed: u64,
    pub phase: PhaseReport,
    pub final_zeta: f64,
    pub final_eps: f64,
    pub iters_run: u64,
    pub skipped_steps: u64,
}

pub fn run_trajectory(cfg: &ExperimentConfig, trial_id: u64) -> Result<(TrialResult, Vec<TrajectoryPoint>)> {
    run_trajectory_with(cfg, trial_id, RunOptions::default())
}

pub fn run_trajectory_with(
    cfg: &ExperimentConfig,
    trial_id: u64,
    opts: RunOptions,
) -> Result<(TrialResult, Vec<TrajectoryPoint>)> {
    cfg.validate()?;
    let max_iters = cfg.resolved_max_iters()?;
    let record_every = cfg.resolved_record_every();
    let params = cfg.bound_params();
    let (target_zeta, target_eps) = phase_targets(&params, cfg.noisy());

    let derived_seed = derive_seed(cfg.seed, trial_id);
    let mut rng = stream(derived_seed);
    let model = make_planted(cfg.n, cfg.d, cfg.sigma_sq, cfg.sparse_ubar, &mut rng)?;
    let mut u: OrthonormalBasis = match opts.init {
        Initialization::Random => random_orthonormal(cfg.n, cfg.d, &mut rng)?,
        Initialization::GroundTruth => model.ubar.clone(),
    };
    let mut stepper = Stepper::new(cfg.step_config())?;

    let record = |t: u64, u: &OrthonormalBasis, p_sq: f64, r_sq: f64, theta: f64, alpha: f64, skipped: bool| {
        MetricSample::measure(t, u, &model.ubar, p_sq, r_sq).map(|metrics| TrajectoryPoint {
            metrics,
            theta,
            alpha,
            skipped,
            orthonormality_error: u.orthonormality_error(),
        })
    };

    let mut points = vec![record(0, &u, 0.0, 0.0, 0.0, 0.0, false)?];
    let mut reached_k1 = points[0].metrics.zeta >= target_zeta;
    let mut done = opts.stop_at_target && reached_k1 && points[0].metrics.epsilon <= target_eps;
    let mut skipped_steps = 0;
    let mut t = 0;
    while !done && t < max_iters {
        t += 1;
        let sample = model.draw_sample(&mut rng);
        let oracle = match cfg.mode {
            StepMode::OracleNoisy => Some(OracleInfo::from_signal(&u, &sample.v)?),
            _ => None,
        };
        let outcome = stepper.step(&u, &sample.x, oracle.as_ref())?;
        if outcome.skipped {
            skipped_steps += 1;
        }
        u = outcome.updated;
        if t % record_every == 0 || t == max_iters {
            let point = record(
                t,
                &u,
                outcome.p.norm_squared(),
                outcome.r.norm_squared(),
                outcome.theta,
                outcome.alpha,
                outcome.skipped,
            )?;
            reached_k1 |= point.metrics.zeta >= target_zeta;
            done = opts.stop_at_target && reached_k1 && point.metrics.epsilon <= target_eps;
            points.push(point);
        }
    }

    let samples: Vec<MetricSample> = points.iter().map(|p| p.metrics.clone()).collect();
    let phase = detect_phases(&samples, &params, cfg.noisy())?;
    let last = &points[points.len() - 1].metrics;
    let result = TrialResult {
        trial_id,
        derived_seed,
        phase,
        final_zeta: last.zeta,
        final_eps: last.epsilon,
        iters_run: t,
        skipped_steps,
    };
    Ok((result, points))
}

/// Writes `#`-prefixed metadata (config and trial result as JSON) followed by
/// the trajectory table.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    cfg: &ExperimentConfig,
    result: &TrialResult,
    points: &[TrajectoryPoint],
) -> std::io::Result<()> {
    writeln!(out, "# config: {}", compact_json(cfg))?;
    writeln!(out, "# result: {}", compact_json(result))?;
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for p in points {
        let m = &p.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.t,
            m.zeta,
            m.epsilon,
            p.theta,
            p.alpha,
            m.projection_norm_sq,
            m.residual_norm_sq,
            u8::from(p.skipped)
        )?;
    }
    Ok(())
}

//! One GROUSE iteration: project the observation onto the current subspace,
//! pick the rotation angle from the residual-to-projection ratio, and tilt the
//! basis with a rank-one update along the geodesic through `p` and `r`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::error::{invalid, GrouseError, Result};

pub const DEFAULT_SKIP_NORM_TOL: f64 = 1e-12;
pub const DEFAULT_REORTH_PERIOD: usize = 100;

/// How the damping factor `α` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepMode {
    /// `α = 0`: the angle that maximizes the one-step gain in `ζ` for clean data.
    #[serde(rename = "greedy")]
    GreedyNoiseless,
    /// `α = c·σ²/(1+σ²)·(1 − d/n)·‖x‖²/‖r‖²`, computable from the stream.
    #[serde(rename = "practical")]
    PracticalNoisy,
    /// `α = 1 − ‖v_⊥‖²/‖r‖²`, which needs the clean signal.
    #[serde(rename = "oracle")]
    OracleNoisy,
}

impl std::str::FromStr for StepMode {
    type Err = GrouseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::GreedyNoiseless),
            "practical" => Ok(Self::PracticalNoisy),
            "oracle" => Ok(Self::OracleNoisy),
            other => invalid(format!("unknown step mode {other:?} (expected greedy|practical|oracle)")),
        }
    }
}

impl std::fmt::Display for StepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GreedyNoiseless => "greedy",
            Self::PracticalNoisy => "practical",
            Self::OracleNoisy => "oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Known bound on the noise-to-signal energy ratio.
    pub sigma_sq: f64,
    pub c: f64,
    pub mode: StepMode,
    /// Steps with `‖w‖`, `‖p‖` or `‖r‖` at or below this are skipped.
    pub skip_norm_tol: f64,
    /// Re-orthonormalize after this many non-skipped steps; `None` never does.
    pub reorth_period: Option<usize>,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            sigma_sq: 0.0,
            c: 1.0,
            mode: StepMode::GreedyNoiseless,
            skip_norm_tol: DEFAULT_SKIP_NORM_TOL,
            reorth_period: Some(DEFAULT_REORTH_PERIOD),
        }
    }
}

impl StepConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn practical(sigma_sq: f64) -> Self {
        Self { sigma_sq, mode: StepMode::PracticalNoisy, ..Self::default() }
    }

    pub fn oracle(sigma_sq: f64) -> Self {
        Self { sigma_sq, mode: StepMode::OracleNoisy, ..Self::default() }
    }

    pub fn with_reorth_period(mut self, period: Option<usize>) -> Self {
        self.reorth_period = period;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq.is_finite() && self.sigma_sq >= 0.0) {
            return invalid(format!("sigma_sq must be finite and >= 0, got {}", self.sigma_sq));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return invalid(format!("c must be finite and > 0, got {}", self.c));
        }
        if !(self.skip_norm_tol.is_finite() && self.skip_norm_tol > 0.0) {
            return invalid("skip_norm_tol must be > 0");
        }
        if self.reorth_period == Some(0) {
            return invalid("reorth_period must be positive (use None for never)");
        }
        Ok(())
    }
}

/// Ground-truth information the oracle schedule needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    /// `‖(I − UUᵀ)v‖²` for the clean signal `v`.
    pub v_perp_norm_sq: f64,
}

impl OracleInfo {
    pub fn from_signal(u: &OrthonormalBasis, v: &DVector<f64>) -> Result<Self> {
        let proj = project(u, v)?;
        Ok(Self { v_perp_norm_sq: proj.r.norm_squared() })
    }
}

/// Least-squares fit of `x` in `R(U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Coefficients `Uᵀx`.
    pub w: DVector<f64>,
    /// `Uw`.
    pub p: DVector<f64>,
    /// `x − p`.
    pub r: DVector<f64>,
}

/// Since `U` has orthonormal columns the least-squares coefficients are `Uᵀx`.
pub fn project(u: &OrthonormalBasis, x: &DVector<f64>) -> Result<Projection> {
    if x.len() != u.n() {
        return invalid(format!("observation has length {}, basis has n = {}", x.len(), u.n()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("observation has non-finite entries");
    }
    let w = u.matrix().tr_mul(x);
    let p = u.matrix() * &w;
    let r = x - &p;
    Ok(Projection { w, p, r })
}

/// Damping factor for the step angle, clamped to `[0, 1]`.
///
/// `n` and `d` enter through the `(1 − d/n)` share of isotropic noise that
/// lands in the residual.
pub fn compute_alpha(
    cfg: &StepConfig,
    n: usize,
    d: usize,
    x_norm_sq: f64,
    r_norm_sq: f64,
    oracle: Option<&OracleInfo>,
) -> Result<f64> {
    let raw = match cfg.mode {
        StepMode::GreedyNoiseless => return Ok(0.0),
        StepMode::PracticalNoisy => {
            let noise_share = 1.0 - d as f64 / n as f64;
            cfg.c * cfg.sigma_sq / (1.0 + cfg.sigma_sq) * noise_share * x_norm_sq / r_norm_sq
        }
        StepMode::OracleNoisy => {
            let info = oracle.ok_or_else(|| {
                GrouseError::InvalidArgument("oracle step mode requires OracleInfo".into())
            })?;
            1.0 - info.v_perp_norm_sq / r_norm_sq
        }
    };
    if raw.is_nan() {
        return Err(GrouseError::Numerical(format!(
            "alpha is NaN (x_norm_sq = {x_norm_sq}, r_norm_sq = {r_norm_sq})"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// `θ = arctan((1 − α)·‖r‖/‖p‖)`.
pub fn compute_theta(alpha: f64, r_norm: f64, p_norm: f64) -> Result<f64> {
    if !(p_norm > DEFAULT_SKIP_NORM_TOL) {
        return Err(GrouseError::DegenerateProjection(p_norm));
    }
    Ok(((1.0 - alpha) * r_norm / p_norm).atan())
}

/// `U + (cos θ·p/‖p‖ + sin θ·r/‖r‖ − p/‖p‖)·wᵀ/‖w‖`.
///
/// All three vectors must have non-zero norm. The result is not checked for
/// orthonormality; in exact arithmetic it is orthonormal whenever `U` is.
pub fn geodesic_update(
    u: &OrthonormalBasis,
    w: &DVector<f64>,
    p: &DVector<f64>,
    r: &DVector<f64>,
    theta: f64,
) -> OrthonormalBasis {
    let (p_norm, r_norm, w_norm) = (p.norm(), r.norm(), w.norm());
    let (sin, cos) = theta.sin_cos();
    let mut direction = p * ((cos - 1.0) / p_norm);
    direction.axpy(sin / r_norm, r, 1.0);
    let mut next = u.matrix().clone();
    next.ger(1.0 / w_norm, &direction, w, 1.0);
    OrthonormalBasis::from_raw(next)
}

/// Everything computed during one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub w: DVector<f64>,
    pub p: DVector<f64>,
    pub r: DVector<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub updated: OrthonormalBasis,
    /// The step was a no-op because `‖w‖`, `‖p‖` or `‖r‖` vanished.
    pub skipped: bool,
}

/// A single pure GROUSE update. Never re-orthonormalizes; see [`Stepper`].
pub fn grouse_step(
    u: &OrthonormalBasis,
    x: &DVector<f64>,
    cfg: &StepConfig,
    oracle: Option<&OracleInfo>,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let Projection { w, p, r } = project(u, x)?;
    let (w_norm, p_norm, r_norm) = (w.norm(), p.norm(), r.norm());
    let tol = cfg.skip_norm_tol;
    if w_norm <= tol || p_norm <= tol || r_norm <= tol {
        return Ok(StepOutcome { w, p, r, alpha: 0.0, theta: 0.0, updated: u.clone(), skipped: true });
    }
    let alpha = compute_alpha(cfg, u.n(), u.d(), x.norm_squared(), r_norm * r_norm, oracle)?;
    let theta = compute_theta(alpha, r_norm, p_norm)?;
    let updated = geodesic_update(u, &w, &p, &r, theta);
    if updated.matrix().iter().any(|v| !v.is_finite()) {
        return Err(GrouseError::Numerical("update produced non-finite entries".into()));
    }
    Ok(StepOutcome { w, p, r, alpha, theta, updated, skipped: false })
}

/// Runs [`grouse_step`] along one trajectory and applies the periodic
/// re-orthonormalization from the config.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: StepConfig,
    since_reorth: usize,
}

impl Stepper {
    pub fn new(cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, since_reorth: 0 })
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn step(
        &mut self,
        u: &OrthonormalBasis,
        x: &DVector<f64>,
        oracle: Option<&OracleInfo>,
    ) -> Result<StepOutcome> {
        let mut outcome = grouse_step(u, x, &self.cfg, oracle)?;
        if !outcome.skipped {
            self.since_reorth += 1;
            if self.cfg.reorth_period.is_some_and(|period| self.since_reorth >= period) {
                outcome.updated = outcome.updated.reorthonormalize()?;
                self.since_reorth = 0;
            }
        }
        Ok(outcome)
    }
}

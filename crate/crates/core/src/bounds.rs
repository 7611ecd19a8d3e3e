//! Iteration-count bounds, expected one-step rate bounds, and detection of
//! the two convergence phases in a recorded trajectory.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::MetricSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: usize,
    pub d: usize,
    pub sigma_sq: f64,
    /// Failure probability allowed in the local phase.
    pub rho: f64,
    /// Failure probability allowed in the initial phase.
    pub rho_prime: f64,
    pub eps_star: f64,
    /// Constant in `E[ζ₀] = C·(d/(ne))^d`.
    #[serde(rename = "C")]
    pub c_const: f64,
    /// Slack on the noisy `ε` target.
    pub tau1: f64,
    /// Slack on the noisy `ζ` target.
    pub tau2: f64,
}

impl BoundParams {
    /// `ρ = ρ′ = 0.1`, `ε* = 1e-4`, `C = 1`, `τ₁ = τ₂ = ln d`, noiseless.
    pub fn new(n: usize, d: usize) -> Self {
        let tau = (d as f64).ln();
        Self {
            n,
            d,
            sigma_sq: 0.0,
            rho: 0.1,
            rho_prime: 0.1,
            eps_star: 1e-4,
            c_const: 1.0,
            tau1: tau,
            tau2: tau,
        }
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Self {
        self.sigma_sq = sigma_sq;
        self
    }

    pub fn with_eps_star(mut self, eps_star: f64) -> Self {
        self.eps_star = eps_star;
        self
    }

    pub fn with_rho(mut self, rho: f64, rho_prime: f64) -> Self {
        self.rho = rho;
        self.rho_prime = rho_prime;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d >= self.n {
            return invalid(format!("need 0 < d < n, got n = {}, d = {}", self.n, self.d));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq >= 0.0) {
            return invalid("sigma_sq must be finite and >= 0");
        }
        if !(self.rho > 0.0 && self.rho < 1.0 && self.rho_prime > 0.0 && self.rho_prime < 1.0) {
            return invalid(format!("rho and rho_prime must lie in (0, 1), got {} and {}", self.rho, self.rho_prime));
        }
        if self.rho + self.rho_prime >= 1.0 {
            return invalid("rho + rho_prime must be < 1");
        }
        if !(self.eps_star > 0.0 && self.eps_star < self.d as f64) {
            return invalid(format!("eps_star must lie in (0, d), got {}", self.eps_star));
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return invalid("C must be positive");
        }
        if !(self.tau1.is_finite() && self.tau2.is_finite()) {
            return invalid("tau1 and tau2 must be finite");
        }
        Ok(())
    }

    fn beta0(&self) -> f64 {
        1.0 / (1.0 + self.d as f64 / self.n as f64 * self.sigma_sq)
    }

    fn beta1(&self) -> f64 {
        1.0 - self.d as f64 / self.n as f64
    }
}

/// `μ₀ = 1 + (ln((1 − ρ′)/C) + d·ln(e/d)) / (d·ln n)`.
pub fn mu0(params: &BoundParams) -> f64 {
    let d = params.d as f64;
    let n = params.n as f64;
    let numerator = ((1.0 - params.rho_prime) / params.c_const).ln() + d * (1.0 - d.ln());
    1.0 + numerator / (d * n.ln())
}

/// Iterations sufficient to reach `ζ ≥ 1/2` with probability `1 − ρ′`:
/// `(d³/ρ′ + d)·μ₀·ln n`.
///
/// This is the same quantity as `(d²/ρ′ + 1)·ln((1 − ρ′)/E[ζ₀])` with
/// `E[ζ₀] = C(d/(ne))^d`, since that logarithm equals `μ₀·d·ln n`.
pub fn k1_bound(params: &BoundParams) -> f64 {
    let d = params.d as f64;
    (d.powi(3) / params.rho_prime + d) * mu0(params) * (params.n as f64).ln()
}

/// The initial-phase count in its derivation form,
/// `(d²/ρ′ + 1)·ln((1 − ρ′/2)/E[ζ₀])` with `E[ζ₀] = C(d/(ne))^d`.
///
/// The half in `1 − ρ′/2` makes this slightly larger than [`k1_bound`],
/// which carries `1 − ρ′` through `μ₀`.
pub fn k1_bound_derivation(params: &BoundParams) -> f64 {
    let (n, d) = (params.n as f64, params.d as f64);
    let log_e_zeta0 = params.c_const.ln() + d * (d / n).ln() - d;
    (d * d / params.rho_prime + 1.0) * ((1.0 - params.rho_prime / 2.0).ln() - log_e_zeta0)
}

/// Additional iterations sufficient to go from `ζ ≥ 1/2` to `ε ≤ ε*` with
/// probability `1 − ρ`: `2d·ln(1/(ε*ρ))`.
pub fn k2_bound(params: &BoundParams) -> Result<f64> {
    let product = params.eps_star * params.rho;
    if !(product > 0.0 && product < 1.0) {
        return invalid(format!("need 0 < eps_star * rho < 1, got {product}"));
    }
    Ok(2.0 * params.d as f64 * (1.0 / product).ln())
}

/// Lower bound on `E[ζ_{t+1} | U_t]` for noisy data:
/// `(1 + β₀·a·(1 − σ²/(a + σ²)))·ζ` with `a = (1 − ζ)/d`, `β₀ = 1/(1 + dσ²/n)`.
pub fn expected_zeta_rate_bound(zeta: f64, params: &BoundParams) -> f64 {
    let a = (1.0 - zeta) / params.d as f64;
    let s = params.sigma_sq;
    let damping = if a + s > 0.0 { 1.0 - s / (a + s) } else { 0.0 };
    (1.0 + params.beta0() * a * damping) * zeta
}

/// Upper bound on `E[ε_{t+1} | U_t]` for noisy data:
/// `(1 − (β₀/d)·(cos²φ_d − β₁σ²/(ε/d + β₁σ²)))·ε` with `β₁ = 1 − d/n`.
pub fn expected_eps_rate_bound(eps: f64, cos_sq_phi_d: f64, params: &BoundParams) -> f64 {
    let d = params.d as f64;
    let noise = params.beta1() * params.sigma_sq;
    let penalty = if noise > 0.0 { noise / (eps / d + noise) } else { 0.0 };
    (1.0 - params.beta0() / d * (cos_sq_phi_d - penalty)) * eps
}

/// Iterations spent in each phase of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// First `t` with `ζ_t ≥ target_zeta`.
    pub k1: Option<u64>,
    /// Iterations after `k1` until `ε_t ≤ target_eps`.
    pub k2: Option<u64>,
    pub target_zeta: f64,
    pub target_eps: f64,
}

impl PhaseReport {
    pub fn total(&self) -> Option<u64> {
        Some(self.k1? + self.k2?)
    }
}

/// Targets used by [`detect_phases`]: `(1/2, ε*)` for clean data and
/// `(min(1/2, exp(−τ₂d²σ²/n)), max(σ², τ₁d²σ²/n))` for noisy data.
pub fn phase_targets(params: &BoundParams, noisy: bool) -> (f64, f64) {
    if !noisy {
        return (0.5, params.eps_star);
    }
    let d_sq_over_n = (params.d * params.d) as f64 / params.n as f64;
    let zeta = 0.5f64.min((-params.tau2 * d_sq_over_n * params.sigma_sq).exp());
    let eps = params.sigma_sq.max(params.tau1 * d_sq_over_n * params.sigma_sq);
    (zeta, eps)
}

pub fn detect_phases(trajectory: &[MetricSample], params: &BoundParams, noisy: bool) -> Result<PhaseReport> {
    if trajectory.is_empty() {
        return invalid("trajectory is empty");
    }
    if trajectory.windows(2).any(|w| w[1].t <= w[0].t) {
        return invalid("trajectory times must be strictly increasing");
    }
    let (target_zeta, target_eps) = phase_targets(params, noisy);
    let first = trajectory.iter().position(|s| s.zeta >= target_zeta);
    let (k1, k2) = match first {
        None => (None, None),
        Some(i) => {
            let k1 = trajectory[i].t;
            let k2 = trajectory[i..].iter().find(|s| s.epsilon <= target_eps).map(|s| s.t - k1);
            (Some(k1), k2)
        }
    };
    Ok(PhaseReport { k1, k2, target_zeta, target_eps })
}

//! Monte Carlo estimates of one-step expectations at a fixed iterate, and the
//! checks that compare them against the expected-rate bounds and supporting
//! identities.
//!
//! Draws are split into chunks of [`CHUNK_SIZE`]. Chunk `k` uses the stream
//! `derive_seed(seed, k)` and chunk summaries are merged in chunk order, so
//! every estimate depends on the seed and the draw count only, never on the
//! number of worker threads.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{gaussian_matrix, gaussian_vector, random_orthonormal, OrthonormalBasis};
use crate::bounds::{expected_eps_rate_bound, expected_zeta_rate_bound, BoundParams};
use crate::error::{invalid, Result};
use crate::metrics::{angles_from_cross_gram, cross_gram, PrincipalAngles};
use crate::model::{make_planted, PlantedModel, Sample};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::step::{grouse_step, OracleInfo, StepConfig, StepOutcome};

pub const CHUNK_SIZE: usize = 250;

/// Standard errors allowed on the failing side of a statistical check.
pub const DEFAULT_SIGMAS: f64 = 3.0;

/// Running mean, variance and range (Welford, with Chan's pairwise merge).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Default for MeanAccumulator {
    fn default() -> Self {
        Self { count: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / total;
        self.m2 += other.m2 + delta * delta * na * nb / total;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }
}

/// Runs `draw` `draws` times and accumulates each of its `K` outputs.
pub fn run_chunked<const K: usize, F>(draws: usize, seed: u64, draw: F) -> Result<[MeanAccumulator; K]>
where
    F: Fn(&mut StreamRng) -> Result<[f64; K]> + Sync,
{
    let chunks = draws.div_ceil(CHUNK_SIZE);
    let partials: Vec<Result<[MeanAccumulator; K]>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(derive_seed(seed, k as u64));
            let len = CHUNK_SIZE.min(draws - k * CHUNK_SIZE);
            let mut acc = [MeanAccumulator::default(); K];
            for _ in 0..len {
                let values = draw(&mut rng)?;
                for (a, x) in acc.iter_mut().zip(values) {
                    a.push(x);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = [MeanAccumulator::default(); K];
    for partial in partials {
        for (t, a) in total.iter_mut().zip(partial?.iter()) {
            t.merge(a);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    AtLeast,
    AtMost,
    Within,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
            Relation::Within => "~=",
        }
    }
}

/// A measured value compared against a reference, with the deviation that
/// is tolerated in the failing direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub relation: Relation,
    pub measured: f64,
    pub reference: f64,
    pub tolerance: f64,
    /// Zero for deterministic checks.
    pub std_err: f64,
    pub draws: u64,
}

impl Check {
    /// Compares an estimated mean against `reference` with `sigmas` standard
    /// errors of slack.
    pub fn statistical(
        name: impl Into<String>,
        relation: Relation,
        acc: &MeanAccumulator,
        reference: f64,
        sigmas: f64,
    ) -> Self {
        Self {
            name: name.into(),
            relation,
            measured: acc.mean(),
            reference,
            tolerance: sigmas * acc.std_err(),
            std_err: acc.std_err(),
            draws: acc.count(),
        }
    }

    pub fn exact(name: impl Into<String>, relation: Relation, measured: f64, reference: f64, tolerance: f64) -> Self {
        Self { name: name.into(), relation, measured, reference, tolerance, std_err: 0.0, draws: 0 }
    }

    /// How far `measured` sits on the failing side of `reference` (negative
    /// when it is on the safe side).
    pub fn deviation(&self) -> f64 {
        match self.relation {
            Relation::AtLeast => self.reference - self.measured,
            Relation::AtMost => self.measured - self.reference,
            Relation::Within => (self.measured - self.reference).abs(),
        }
    }

    /// False for NaN measurements.
    pub fn passed(&self) -> bool {
        self.deviation() <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: measured {:.6e} {} {:.6e} (deviation {:.3e}, tolerated {:.3e}",
            self.name,
            self.measured,
            self.relation.symbol(),
            self.reference,
            self.deviation(),
            self.tolerance
        )?;
        if self.draws > 0 {
            write!(f, ", {} draws", self.draws)?;
        }
        write!(f, ")")
    }
}

/// Equal principal angles with product of squared cosines `zeta`.
pub fn equal_angle_cosines(d: usize, zeta: f64) -> Vec<f64> {
    vec![zeta.powf(0.5 / d as f64); d]
}

/// A planted model and an iterate `U_t` held fixed while observations are
/// resampled.
#[derive(Debug, Clone)]
pub struct FixedIterate {
    pub model: PlantedModel,
    pub u: OrthonormalBasis,
    pub angles: PrincipalAngles,
    cross: DMatrix<f64>,
}

/// One step from a [`FixedIterate`] and the metrics after it.
#[derive(Debug, Clone)]
pub struct OneStep {
    pub sample: Sample,
    pub outcome: StepOutcome,
    pub v_perp_norm_sq: f64,
    pub zeta_next: f64,
    pub epsilon_next: f64,
}

impl FixedIterate {
    pub fn new(model: PlantedModel, u: OrthonormalBasis) -> Result<Self> {
        let cross = cross_gram(&u, &model.ubar)?;
        let angles = angles_from_cross_gram(cross.clone());
        Ok(Self { model, u, angles, cross })
    }

    /// Dense planted model with normalized signals and an iterate at the given
    /// principal cosines. Needs `n ≥ 2d`.
    pub fn with_cosines(n: usize, d: usize, sigma_sq: f64, cosines: &[f64], rng: &mut StreamRng) -> Result<Self> {
        let model = make_planted(n, d, sigma_sq, false, rng)?;
        let u = OrthonormalBasis::with_principal_cosines(&model.ubar, cosines, rng)?;
        Self::new(model, u)
    }

    /// As [`Self::with_cosines`] with all angles equal and `ζ(U_t) = zeta`.
    pub fn equal_angles(n: usize, d: usize, sigma_sq: f64, zeta: f64, rng: &mut StreamRng) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return invalid(format!("zeta must lie in (0, 1], got {zeta}"));
        }
        Self::with_cosines(n, d, sigma_sq, &equal_angle_cosines(d, zeta), rng)
    }

    pub fn n(&self) -> usize {
        self.u.n()
    }

    pub fn d(&self) -> usize {
        self.u.d()
    }

    pub fn zeta(&self) -> f64 {
        self.angles.zeta()
    }

    pub fn epsilon(&self) -> f64 {
        let d = self.d() as f64;
        (d - self.cross.norm_squared()).clamp(0.0, d)
    }

    pub fn bound_params(&self) -> BoundParams {
        BoundParams::new(self.n(), self.d()).with_sigma_sq(self.model.sigma_sq)
    }

    /// Draws a fresh observation and takes one step from `U_t`. The metrics
    /// after the step use the rank-one structure of the update, so each
    /// draw costs `O(nd)` plus a `d × d` SVD.
    pub fn step(&self, cfg: &StepConfig, rng: &mut StreamRng) -> Result<OneStep> {
        let sample = self.model.draw_sample(rng);
        let oracle = OracleInfo::from_signal(&self.u, &sample.v)?;
        let outcome = grouse_step(&self.u, &sample.x, cfg, Some(&oracle))?;
        let next = if outcome.skipped {
            self.cross.clone()
        } else {
            let ubar = self.model.ubar.matrix();
            let (sin, cos) = outcome.theta.sin_cos();
            let mut shift = ubar.tr_mul(&outcome.p) * ((cos - 1.0) / outcome.p.norm());
            shift.axpy(sin / outcome.r.norm(), &ubar.tr_mul(&outcome.r), 1.0);
            let mut next = self.cross.clone();
            next.ger(1.0 / outcome.w.norm(), &shift, &outcome.w, 1.0);
            next
        };
        let d = self.d() as f64;
        let epsilon_next = (d - next.norm_squared()).clamp(0.0, d);
        let zeta_next = angles_from_cross_gram(next).zeta();
        Ok(OneStep { sample, outcome, v_perp_norm_sq: oracle.v_perp_norm_sq, zeta_next, epsilon_next })
    }
}

/// Mean of `ζ_{t+1}` under the oracle schedule against the lower rate bound.
pub fn zeta_rate_check(it: &FixedIterate, draws: usize, seed: u64) -> Result<Check> {
    let cfg = StepConfig::oracle(it.model.sigma_sq);
    let [acc] = run_chunked(draws, seed, |rng| Ok([it.step(&cfg, rng)?.zeta_next]))?;
    let bound = expected_zeta_rate_bound(it.zeta(), &it.bound_params());
    Ok(Check::statistical("mean next zeta vs rate lower bound", Relation::AtLeast, &acc, bound, DEFAULT_SIGMAS))
}

/// Mean of `ε_{t+1}` under the oracle schedule against the upper rate bound.
pub fn eps_rate_check(it: &FixedIterate, draws: usize, seed: u64) -> Result<Check> {
    let cfg = StepConfig::oracle(it.model.sigma_sq);
    let [acc] = run_chunked(draws, seed, |rng| Ok([it.step(&cfg, rng)?.epsilon_next]))?;
    let bound = expected_eps_rate_bound(it.epsilon(), it.angles.cos_sq_largest_angle(), &it.bound_params());
    Ok(Check::statistical("mean next epsilon vs rate upper bound", Relation::AtMost, &acc, bound, DEFAULT_SIGMAS))
}

/// `E[ζ_{t+1}/ζ_t] ≥ 1 + E[(1 − α)²‖r‖²/‖p‖²]`, checked on the paired
/// difference of the two sides so their noise largely cancels.
pub fn zeta_ratio_check(it: &FixedIterate, draws: usize, seed: u64) -> Result<Check> {
    let cfg = StepConfig::oracle(it.model.sigma_sq);
    let zeta = it.zeta();
    let [acc] = run_chunked(draws, seed, |rng| {
        let s = it.step(&cfg, rng)?;
        let o = &s.outcome;
        let p_sq = o.p.norm_squared();
        let gain = if p_sq > 0.0 { (1.0 - o.alpha).powi(2) * o.r.norm_squared() / p_sq } else { 0.0 };
        Ok([s.zeta_next / zeta - 1.0 - gain])
    })?;
    Ok(Check::statistical("mean zeta ratio minus 1 + damped residual gain", Relation::AtLeast, &acc, 0.0, DEFAULT_SIGMAS))
}

/// Mean one-step decrease of `ε` under the oracle schedule is non-negative.
/// Meaningful only outside the noise ball, `ε_t ≥ d²σ²`.
pub fn eps_decrease_check(it: &FixedIterate, draws: usize, seed: u64) -> Result<Check> {
    let cfg = StepConfig::oracle(it.model.sigma_sq);
    let eps = it.epsilon();
    let [acc] = run_chunked(draws, seed, |rng| Ok([eps - it.step(&cfg, rng)?.epsilon_next]))?;
    Ok(Check::statistical("mean epsilon decrease", Relation::AtLeast, &acc, 0.0, DEFAULT_SIGMAS))
}

/// Per-draw identity `ε_t − ε_{t+1} = 1 − R − ‖ŪŪᵀp‖²/‖p‖²` with
/// `R = ‖(I − ŪŪᵀ)(ξ − αr)‖² / ‖v + ξ − αr‖²`. Reports the largest error.
pub fn eps_decrease_identity_check(it: &FixedIterate, draws: usize, seed: u64, tol: f64) -> Result<Check> {
    let cfg = StepConfig::oracle(it.model.sigma_sq);
    let eps = it.epsilon();
    let ubar = it.model.ubar.matrix();
    let out_of_span = |x: &DVector<f64>| (x - ubar * ubar.tr_mul(x)).norm_squared();
    let [acc] = run_chunked(draws, seed, |rng| {
        let s = it.step(&cfg, rng)?;
        let o = &s.outcome;
        if o.skipped {
            return Ok([0.0]);
        }
        let moved = &s.sample.xi - &o.r * o.alpha;
        let direction = &s.sample.v + &moved;
        let ratio = out_of_span(&moved) / direction.norm_squared();
        let p_sq = o.p.norm_squared();
        let in_span = (p_sq - out_of_span(&o.p)) / p_sq;
        let predicted = 1.0 - ratio - in_span;
        Ok([((eps - s.epsilon_next) - predicted).abs()])
    })?;
    Ok(Check::exact("epsilon decrease identity, max abs error", Relation::Within, acc.max(), 0.0, tol))
}

/// Expected noise and projection energies relative to `‖v‖²`:
/// `‖ξ_⊥‖² ≤ (1 − d/n)σ²`, `‖ξ_∥‖² ≤ (d/n)σ²`, `‖p‖² ≤ 1 + (d/n)σ²` and
/// `‖r‖² − ‖v_⊥‖² ≤ (1 − d/n)σ²`, with `∥`/`⊥` taken against `R(U_t)`.
pub fn noise_energy_checks(it: &FixedIterate, draws: usize, seed: u64) -> Result<Vec<Check>> {
    let u = it.u.matrix();
    let (n, d, s2) = (it.n() as f64, it.d() as f64, it.model.sigma_sq);
    let acc = run_chunked(draws, seed, |rng| {
        let sample = it.model.draw_sample(rng);
        let v_sq = sample.v.norm_squared();
        let xi_par = u * u.tr_mul(&sample.xi);
        let xi_par_sq = xi_par.norm_squared();
        let xi_perp_sq = (&sample.xi - &xi_par).norm_squared();
        let p = u * u.tr_mul(&sample.x);
        let r_sq = (&sample.x - &p).norm_squared();
        let v_perp_sq = (&sample.v - u * u.tr_mul(&sample.v)).norm_squared();
        Ok([xi_perp_sq / v_sq, xi_par_sq / v_sq, p.norm_squared() / v_sq, (r_sq - v_perp_sq) / v_sq])
    })?;
    let names = [
        "mean out-of-span noise energy",
        "mean in-span noise energy",
        "mean projection energy",
        "mean residual energy excess over clean residual",
    ];
    let refs = [(1.0 - d / n) * s2, d / n * s2, 1.0 + d / n * s2, (1.0 - d / n) * s2];
    Ok(names
        .iter()
        .zip(acc.iter())
        .zip(refs)
        .map(|((name, a), r)| Check::statistical(*name, Relation::AtMost, a, r, DEFAULT_SIGMAS))
        .collect())
}

/// Clean-signal projection expectations:
/// `E[‖v_⊥‖²/‖v‖²] = ε/d ≥ (1 − ζ)/d` and
/// `E[‖(I − ŪŪᵀ)v_∥‖²/‖v‖²] ≥ cos²φ_d·ε/d`.
pub fn projection_checks(it: &FixedIterate, draws: usize, seed: u64) -> Result<Vec<Check>> {
    let u = it.u.matrix();
    let ubar = it.model.ubar.matrix();
    let d = it.d() as f64;
    let [perp, leak] = run_chunked(draws, seed, |rng| {
        let v = it.model.draw_sample(rng).v;
        let v_sq = v.norm_squared();
        let v_par = u * u.tr_mul(&v);
        let v_perp_sq = (&v - &v_par).norm_squared();
        let leak_sq = (&v_par - ubar * ubar.tr_mul(&v_par)).norm_squared();
        Ok([v_perp_sq / v_sq, leak_sq / v_sq])
    })?;
    let eps = it.epsilon();
    Ok(vec![
        Check::statistical("mean clean residual share", Relation::Within, &perp, eps / d, DEFAULT_SIGMAS),
        Check::statistical(
            "mean clean residual share vs (1 - zeta)/d",
            Relation::AtLeast,
            &perp,
            (1.0 - it.zeta()) / d,
            DEFAULT_SIGMAS,
        ),
        Check::statistical(
            "mean projection leak share",
            Relation::AtLeast,
            &leak,
            it.angles.cos_sq_largest_angle() * eps / d,
            DEFAULT_SIGMAS,
        ),
    ])
}

/// `E[xᵀQx / xᵀx] = tr(Q)/d` for isotropic `x` and a random fixed `Q`.
pub fn trace_check(d: usize, draws: usize, seed: u64) -> Result<Check> {
    if d == 0 {
        return invalid("d must be positive");
    }
    let q = gaussian_matrix(d, d, &mut stream(seed));
    let [acc] = run_chunked(draws, derive_seed(seed, u64::MAX), |rng| {
        let x = gaussian_vector(d, 1.0, rng);
        Ok([x.dot(&(&q * &x)) / x.norm_squared()])
    })?;
    Ok(Check::statistical("mean Rayleigh quotient vs tr(Q)/d", Relation::Within, &acc, q.trace() / d as f64, DEFAULT_SIGMAS))
}

/// The two step-size numerators agree in expectation:
/// `E[‖r‖² − ‖v_⊥‖²] = c·σ²/(1 + σ²)·(1 − d/n)·E‖x‖²` for unit-norm signals.
pub fn alpha_numerator_check(it: &FixedIterate, c: f64, draws: usize, seed: u64) -> Result<Check> {
    if !it.model.normalize_signal {
        return invalid("the numerator identity assumes unit-norm signals");
    }
    let u = it.u.matrix();
    let (n, d, s2) = (it.n() as f64, it.d() as f64, it.model.sigma_sq);
    let scale = c * s2 / (1.0 + s2) * (1.0 - d / n);
    let [acc] = run_chunked(draws, seed, |rng| {
        let sample = it.model.draw_sample(rng);
        let r_sq = (&sample.x - u * u.tr_mul(&sample.x)).norm_squared();
        let v_perp_sq = (&sample.v - u * u.tr_mul(&sample.v)).norm_squared();
        Ok([r_sq - v_perp_sq - scale * sample.x.norm_squared()])
    })?;
    Ok(Check::statistical("mean step-size numerator difference", Relation::Within, &acc, 0.0, DEFAULT_SIGMAS))
}

/// Without normalization `E‖v‖² = d`.
pub fn signal_energy_check(n: usize, d: usize, draws: usize, seed: u64) -> Result<Check> {
    let model = make_planted(n, d, 0.0, false, &mut stream(seed))?.with_normalization(false);
    let [acc] = run_chunked(draws, derive_seed(seed, u64::MAX), |rng| Ok([model.draw_sample(rng).v.norm_squared()]))?;
    Ok(Check::statistical("mean unnormalized signal energy", Relation::Within, &acc, d as f64, DEFAULT_SIGMAS))
}

/// Exact `E[ζ₀]` for a uniformly random `d`-dimensional subspace of `Rⁿ`:
/// `Π_{i<d} (d − i)/(n − i)`, the determinant moment of a matrix Beta law.
pub fn initial_similarity_exact(n: usize, d: usize) -> f64 {
    (0..d).map(|i| (d - i) as f64 / (n - i) as f64).product()
}

/// The closed-form approximation `C·(d/(ne))^d`.
pub fn initial_similarity_approx(n: usize, d: usize, c: f64) -> f64 {
    c * (d as f64 / (n as f64 * std::f64::consts::E)).powi(d as i32)
}

/// Sample mean of `ζ₀` for random Gaussian initializations against a fixed
/// random `Ū`.
pub fn initial_similarity(n: usize, d: usize, draws: usize, seed: u64) -> Result<MeanAccumulator> {
    let ubar = random_orthonormal(n, d, &mut stream(seed))?;
    let [acc] = run_chunked(draws, derive_seed(seed, u64::MAX), |rng| {
        let u0 = random_orthonormal(n, d, rng)?;
        Ok([angles_from_cross_gram(cross_gram(&u0, &ubar)?).zeta()])
    })?;
    Ok(acc)
}

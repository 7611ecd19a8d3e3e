//! Principal angles and the two distance measures between subspaces:
//! the determinant similarity `ζ = Π cos²φᵢ` and the Frobenius discrepancy
//! `ε = Σ sin²φᵢ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::error::{invalid, Result};

/// Cosines of the principal angles, sorted non-increasing and clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngles {
    cosines: Vec<f64>,
}

impl PrincipalAngles {
    fn from_singular_values(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Self { cosines: values }
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    pub fn len(&self) -> usize {
        self.cosines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cosines.is_empty()
    }

    /// Angles in radians, non-decreasing.
    pub fn angles(&self) -> Vec<f64> {
        self.cosines.iter().map(|c| c.acos()).collect()
    }

    /// `cos²` of the largest principal angle.
    pub fn cos_sq_largest_angle(&self) -> f64 {
        self.cosines.last().map_or(1.0, |c| c * c)
    }

    /// `Π cos²φᵢ`.
    pub fn zeta(&self) -> f64 {
        self.cosines.iter().map(|c| c * c).product()
    }

    /// `Σ sin²φᵢ`.
    pub fn epsilon(&self) -> f64 {
        self.cosines.iter().map(|c| 1.0 - c * c).sum::<f64>().max(0.0)
    }
}

fn check_pair(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<()> {
    if u.n() != ubar.n() || u.d() != ubar.d() {
        return invalid(format!(
            "basis shapes differ: {}x{} vs {}x{}",
            u.n(),
            u.d(),
            ubar.n(),
            ubar.d()
        ));
    }
    Ok(())
}

/// `ŪᵀU`, the `d × d` cross-Gram matrix every metric is built from.
pub fn cross_gram(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<DMatrix<f64>> {
    check_pair(u, ubar)?;
    Ok(ubar.matrix().tr_mul(u.matrix()))
}

fn singular_values(m: DMatrix<f64>) -> Vec<f64> {
    m.singular_values().iter().copied().collect()
}

pub fn principal_angles(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<PrincipalAngles> {
    let m = cross_gram(u, ubar)?;
    Ok(PrincipalAngles::from_singular_values(singular_values(m)))
}

/// Principal angles from an already formed cross-Gram matrix `ŪᵀU`.
pub fn angles_from_cross_gram(m: DMatrix<f64>) -> PrincipalAngles {
    PrincipalAngles::from_singular_values(singular_values(m))
}

/// `ζ = det(ŪᵀU UᵀŪ)`, evaluated as the product of squared singular values of
/// `ŪᵀU` so it does not underflow through an LU determinant at moderate `d`.
pub fn determinant_similarity(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    Ok(principal_angles(u, ubar)?.zeta())
}

/// `ζ` through an explicit LU determinant of `ŪᵀU UᵀŪ`. Only trustworthy for
/// small `d`; exists to cross-check [`determinant_similarity`].
pub fn determinant_similarity_explicit(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    let m = cross_gram(u, ubar)?;
    let gram = &m * m.transpose();
    Ok(gram.determinant().clamp(0.0, 1.0))
}

/// `ε = d − ‖ŪᵀU‖²_F`, clamped to `[0, d]`.
pub fn frobenius_discrepancy(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    let m = cross_gram(u, ubar)?;
    let d = u.d() as f64;
    Ok((d - m.norm_squared()).clamp(0.0, d))
}

/// Metrics of one iterate against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: u64,
    pub zeta: f64,
    pub epsilon: f64,
    pub angles: PrincipalAngles,
    pub residual_norm_sq: f64,
    pub projection_norm_sq: f64,
}

impl MetricSample {
    /// Measures `u` against `ubar`. The norms describe the step that produced
    /// `u` (zero at `t = 0`).
    pub fn measure(
        t: u64,
        u: &OrthonormalBasis,
        ubar: &OrthonormalBasis,
        projection_norm_sq: f64,
        residual_norm_sq: f64,
    ) -> Result<Self> {
        let m = cross_gram(u, ubar)?;
        let d = u.d() as f64;
        let epsilon = (d - m.norm_squared()).clamp(0.0, d);
        let angles = PrincipalAngles::from_singular_values(singular_values(m));
        Ok(Self {
            t,
            zeta: angles.zeta(),
            epsilon,
            angles,
            residual_norm_sq,
            projection_norm_sq,
        })
    }
}

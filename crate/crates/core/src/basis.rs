//! Orthonormal bases as points on the Grassmannian.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, GrouseError, Result};

/// Tolerance on `max |UᵀU − I|` accepted by [`OrthonormalBasis::new`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// An `n × d` matrix with orthonormal columns, `0 < d < n`.
///
/// Only the span matters to the metrics, but the representative matrix is
/// what the rank-one update acts on, so it is kept explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    entries: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Wraps `entries` after checking dimensions, finiteness and orthonormality.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_shape(entries.nrows(), entries.ncols())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return invalid("basis has non-finite entries");
        }
        let basis = Self { entries };
        let err = basis.orthonormality_error();
        if err > ORTHONORMALITY_TOL {
            return invalid(format!("columns are not orthonormal (max |UᵀU − I| = {err:e})"));
        }
        Ok(basis)
    }

    /// Skips the orthonormality check. Callers guarantee the invariant up to
    /// the drift of a bounded number of exact-arithmetic-orthonormal updates.
    pub(crate) fn from_raw(entries: DMatrix<f64>) -> Self {
        debug_assert!(entries.ncols() > 0 && entries.ncols() < entries.nrows());
        Self { entries }
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Subspace dimension.
    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `max |UᵀU − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.entries.tr_mul(&self.entries);
        let d = gram.nrows();
        let mut worst = 0.0f64;
        for j in 0..d {
            for i in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Thin-QR re-orthonormalization. Spans the same subspace; the QR sign
    /// convention is fixed so an already orthonormal basis maps to itself.
    pub fn reorthonormalize(&self) -> Result<Self> {
        orthonormalize(self.entries.clone())
    }

    /// Right-multiplies by a `d × d` matrix (normally orthogonal). The result
    /// is checked like any other basis.
    pub fn rotate(&self, q: &DMatrix<f64>) -> Result<Self> {
        if q.nrows() != self.d() || q.ncols() != self.d() {
            return invalid(format!(
                "rotation is {}x{}, basis has d = {}",
                q.nrows(),
                q.ncols(),
                self.d()
            ));
        }
        Self::new(&self.entries * q)
    }

    /// Builds a basis whose principal cosines against `reference` are exactly
    /// `cosines` (in the given column order).
    ///
    /// `U = Ū·diag(c) + W·diag(√(1 − c²))`, with `W` a random orthonormal
    /// basis of a `d`-dimensional subspace of `R(Ū)^⊥`. Needs `n ≥ 2d`.
    pub fn with_principal_cosines<R: Rng + ?Sized>(
        reference: &OrthonormalBasis,
        cosines: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        let (n, d) = (reference.n(), reference.d());
        if cosines.len() != d {
            return invalid(format!("expected {d} cosines, got {}", cosines.len()));
        }
        if n < 2 * d {
            return invalid(format!("need n >= 2d to place independent angles (n = {n}, d = {d})"));
        }
        if cosines.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return invalid("cosines must lie in [0, 1]");
        }
        let ubar = reference.matrix();
        let complement = loop {
            let g = gaussian_matrix(n, d, rng);
            let g = &g - ubar * ubar.tr_mul(&g);
            // Project twice; one pass leaves O(eps) components along Ū.
            let g = &g - ubar * ubar.tr_mul(&g);
            if let Ok(w) = orthonormalize(g) {
                break w.into_matrix();
            }
        };
        let mut u = DMatrix::zeros(n, d);
        for (j, &c) in cosines.iter().enumerate() {
            let s = (1.0 - c * c).max(0.0).sqrt();
            let col = ubar.column(j) * c + complement.column(j) * s;
            u.set_column(j, &col);
        }
        Self::new(u)
    }
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if d == 0 || d >= n {
        return invalid(format!("need 0 < d < n, got n = {n}, d = {d}"));
    }
    Ok(())
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill, so the draw order is column by column.
    DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(len: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Householder thin QR of an `n × d` matrix, returning `Q` with the signs
/// chosen so that `diag(R) ≥ 0`.
///
/// Fails with [`GrouseError::NumericalRank`] when some `|r_jj|` falls below
/// `max(n, d) · eps · max_i |r_ii|`.
pub fn orthonormalize(a: DMatrix<f64>) -> Result<OrthonormalBasis> {
    let (n, d) = a.shape();
    check_shape(n, d)?;
    if a.iter().any(|v| !v.is_finite()) {
        return invalid("matrix has non-finite entries");
    }
    let qr = a.qr();
    let r = qr.r();
    let scale = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let floor = n.max(d) as f64 * f64::EPSILON * scale;
    for j in 0..d {
        let pivot = r[(j, j)].abs();
        if pivot <= floor || scale == 0.0 {
            return Err(GrouseError::NumericalRank { column: j, pivot });
        }
    }
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthonormalBasis::from_raw(q))
}

/// Orthonormalization of an `n × d` standard Gaussian matrix, which is
/// uniformly distributed on the Grassmannian.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<OrthonormalBasis> {
    check_shape(n, d)?;
    loop {
        match orthonormalize(gaussian_matrix(n, d, rng)) {
            Ok(b) => return Ok(b),
            // Probability zero in exact arithmetic; just redraw.
            Err(GrouseError::NumericalRank { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Modified Gram–Schmidt. Kept as an independent test oracle for the QR path.
#[cfg(test)]
pub(crate) fn gram_schmidt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).clone_owned();
                q.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{determinant_similarity, principal_angles};
    use crate::rng::stream;

    #[test]
    fn rejects_bad_shapes() {
        assert!(random_orthonormal(3, 3, &mut stream(0)).is_err());
        assert!(random_orthonormal(3, 0, &mut stream(0)).is_err());
        assert!(OrthonormalBasis::new(DMatrix::from_element(4, 2, 1.0)).is_err());
    }

    #[test]
    fn random_basis_is_orthonormal() {
        let mut rng = stream(11);
        for &(n, d) in &[(2, 1), (8, 3), (50, 5), (300, 20)] {
            let u = random_orthonormal(n, d, &mut rng).unwrap();
            assert!(u.orthonormality_error() <= 1e-12, "n={n} d={d}");
        }
    }

    #[test]
    fn random_basis_is_seed_deterministic() {
        let a = random_orthonormal(30, 4, &mut stream(99)).unwrap();
        let b = random_orthonormal(30, 4, &mut stream(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reorthonormalize_is_idempotent_on_orthonormal_input() {
        let u = random_orthonormal(40, 6, &mut stream(3)).unwrap();
        let v = u.reorthonormalize().unwrap();
        // sin of the largest principal angle = ‖(I − UUᵀ)V‖₂.
        let leak = v.matrix() - u.matrix() * u.matrix().tr_mul(v.matrix());
        assert!(leak.norm() <= 1e-12);
        let cosines = principal_angles(&u, &v).unwrap();
        assert!(cosines.cosines().iter().all(|&c| c >= 1.0 - 1e-15));
        assert!((&v.entries - &u.entries).amax() < 1e-13);
    }

    #[test]
    fn reorthonormalize_repairs_column_norm_drift() {
        let u = random_orthonormal(60, 4, &mut stream(5)).unwrap();
        let mut m = u.into_matrix();
        m.column_mut(2).scale_mut(1.0 + 1e-8);
        let fixed = orthonormalize(m).unwrap();
        assert!(fixed.orthonormality_error() <= 1e-14);
    }

    #[test]
    fn reorthonormalize_preserves_span_of_drifted_basis() {
        let mut rng = stream(8);
        let u = random_orthonormal(50, 5, &mut rng).unwrap();
        let mixing = gaussian_matrix(5, 5, &mut rng) * 1e-6 + DMatrix::identity(5, 5);
        let drifted = u.matrix() * mixing;
        let fixed = orthonormalize(drifted.clone()).unwrap();
        // Span oracle: Gram–Schmidt of the drifted matrix.
        let oracle = OrthonormalBasis::new(gram_schmidt(&drifted)).unwrap();
        let zeta = determinant_similarity(&fixed, &oracle).unwrap();
        assert!((zeta - 1.0).abs() <= 1e-10, "zeta = {zeta}");
        let q_gs = gram_schmidt(&drifted);
        assert!((fixed.matrix() - q_gs).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_input_is_reported() {
        let mut m = gaussian_matrix(10, 3, &mut stream(1));
        let c0 = m.column(0).clone_owned();
        m.set_column(2, &(c0 * 2.0));
        assert!(matches!(orthonormalize(m), Err(GrouseError::NumericalRank { column: 2, .. })));
    }

    #[test]
    fn prescribed_cosines_are_reproduced() {
        let mut rng = stream(21);
        let ubar = random_orthonormal(30, 4, &mut rng).unwrap();
        let target = [0.95, 0.7, 0.4, 0.05];
        let u = OrthonormalBasis::with_principal_cosines(&ubar, &target, &mut rng).unwrap();
        let got = principal_angles(&ubar, &u).unwrap();
        for (g, t) in got.cosines().iter().zip(target) {
            assert!((g - t).abs() < 1e-12);
        }
    }
}

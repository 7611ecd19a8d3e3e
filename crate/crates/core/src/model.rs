//! Planted low-rank data: a hidden basis `Ū` and observations
//! `x = Ūs + ξ` with Gaussian noise of per-entry variance `σ²/n`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{gaussian_vector, orthonormalize, random_orthonormal, OrthonormalBasis};
use crate::error::{invalid, GrouseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub ubar: OrthonormalBasis,
    pub sigma_sq: f64,
    /// Rescale each clean signal to unit norm before adding noise.
    pub normalize_signal: bool,
    /// Entry density used to generate `Ū` before orthonormalization, if sparse.
    pub sparsity: Option<f64>,
}

/// One observation and its hidden parts. `v` and `s` are exposed for metrics
/// and oracle step sizes only; an estimator sees `x` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub s: DVector<f64>,
    pub xi: DVector<f64>,
}

/// Nonzero probability for sparse ground truth: `max(ln n / n, 2d / n)`,
/// capped at 1. The `2d/n` floor keeps small problems full rank.
pub fn sparse_density(n: usize, d: usize) -> f64 {
    let n_f = n as f64;
    (n_f.ln() / n_f).max(2.0 * d as f64 / n_f).min(1.0)
}

/// `n × d` matrix whose entries are independently nonzero with probability
/// `density`, nonzero values standard normal. All-zero columns are redrawn.
pub fn sparse_gaussian_matrix<R: Rng + ?Sized>(n: usize, d: usize, density: f64, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for j in 0..d {
        loop {
            let mut any = false;
            for i in 0..n {
                let value = if rng.random::<f64>() < density {
                    any = true;
                    rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                m[(i, j)] = value;
            }
            if any {
                break;
            }
        }
    }
    m
}

pub fn make_planted<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    sigma_sq: f64,
    sparse: bool,
    rng: &mut R,
) -> Result<PlantedModel> {
    if d == 0 || d >= n {
        return invalid(format!("need 0 < d < n, got n = {n}, d = {d}"));
    }
    if !(sigma_sq.is_finite() && sigma_sq >= 0.0) {
        return invalid(format!("sigma_sq must be finite and >= 0, got {sigma_sq}"));
    }
    let (ubar, sparsity) = if sparse {
        let density = sparse_density(n, d);
        let ubar = loop {
            match orthonormalize(sparse_gaussian_matrix(n, d, density, rng)) {
                Ok(b) => break b,
                Err(GrouseError::NumericalRank { .. }) => continue,
                Err(e) => return Err(e),
            }
        };
        (ubar, Some(density))
    } else {
        (random_orthonormal(n, d, rng)?, None)
    };
    Ok(PlantedModel { ubar, sigma_sq, normalize_signal: true, sparsity })
}

impl PlantedModel {
    pub fn n(&self) -> usize {
        self.ubar.n()
    }

    pub fn d(&self) -> usize {
        self.ubar.d()
    }

    pub fn with_normalization(mut self, normalize_signal: bool) -> Self {
        self.normalize_signal = normalize_signal;
        self
    }

    /// Draws `s ~ N(0, I_d)`, `v = Ūs` (rescaled with `s` to unit norm when
    /// normalizing), `ξ ~ N(0, σ²/n · I_n)` and `x = v + ξ`.
    pub fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let mut s = gaussian_vector(self.d(), 1.0, rng);
        if self.normalize_signal {
            // ‖Ūs‖ = ‖s‖ because Ū has orthonormal columns.
            let norm = s.norm();
            s /= norm;
        }
        let v = self.ubar.matrix() * &s;
        let xi = if self.sigma_sq > 0.0 {
            gaussian_vector(self.n(), (self.sigma_sq / self.n() as f64).sqrt(), rng)
        } else {
            DVector::zeros(self.n())
        };
        let x = &v + &xi;
        Sample { x, v, s, xi }
    }

    /// Writes `Ū` as CSV: a `n,d,sigma_sq` header, its values, then `n`
    /// rows of `d` entries.
    pub fn write_basis_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,d,sigma_sq")?;
        writeln!(out, "{},{},{}", self.n(), self.d(), self.sigma_sq)?;
        write_rows(&mut out, self.ubar.matrix().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()))
    }

    /// Same header as [`Self::write_basis_csv`], then one observation `x`
    /// per row.
    pub fn write_samples_csv<W: Write>(&self, mut out: W, samples: &[Sample]) -> std::io::Result<()> {
        writeln!(out, "n,d,sigma_sq")?;
        writeln!(out, "{},{},{}", self.n(), self.d(), self.sigma_sq)?;
        write_rows(&mut out, samples.iter().map(|s| s.x.iter().copied().collect::<Vec<_>>()))
    }
}

fn write_rows<W: Write>(out: &mut W, rows: impl Iterator<Item = Vec<f64>>) -> std::io::Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads a basis written by [`PlantedModel::write_basis_csv`], returning it
/// with the recorded `sigma_sq`.
pub fn read_basis_csv<B: BufRead>(input: B) -> Result<(OrthonormalBasis, f64)> {
    let bad = |msg: String| GrouseError::InvalidArgument(format!("basis csv: {msg}"));
    let mut lines = input.lines().map(|l| l.map_err(|e| bad(e.to_string())));
    let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
    if header.trim() != "n,d,sigma_sq" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let dims = lines.next().ok_or_else(|| bad("missing dimensions".into()))??;
    let fields: Vec<&str> = dims.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(bad(format!("bad dimension line {dims:?}")));
    }
    let n: usize = fields[0].parse().map_err(|_| bad(format!("bad n {:?}", fields[0])))?;
    let d: usize = fields[1].parse().map_err(|_| bad(format!("bad d {:?}", fields[1])))?;
    let sigma_sq: f64 = fields[2].parse().map_err(|_| bad(format!("bad sigma_sq {:?}", fields[2])))?;
    let mut values = Vec::with_capacity(n * d);
    for line in lines.take(n) {
        let line = line?;
        let row: std::result::Result<Vec<f64>, _> = line.trim().split(',').map(str::parse).collect();
        let row = row.map_err(|_| bad(format!("bad row {line:?}")))?;
        if row.len() != d {
            return Err(bad(format!("row has {} entries, expected {d}", row.len())));
        }
        values.extend(row);
    }
    if values.len() != n * d {
        return Err(bad(format!("expected {n} rows")));
    }
    Ok((OrthonormalBasis::new(DMatrix::from_row_slice(n, d, &values))?, sigma_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::step::project;

    #[test]
    fn large_sparse_model_is_valid() {
        let model = make_planted(2000, 20, 1e-3, true, &mut stream(1)).unwrap();
        assert!(model.ubar.orthonormality_error() <= 1e-12);
        assert_eq!(model.sparsity, Some(sparse_density(2000, 20)));
        assert!(model.normalize_signal);
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(make_planted(5, 5, 0.0, false, &mut stream(0)).is_err());
        assert!(make_planted(5, 0, 0.0, true, &mut stream(0)).is_err());
        assert!(make_planted(5, 2, -1.0, false, &mut stream(0)).is_err());
    }

    #[test]
    fn noiseless_samples_are_clean_and_unit_norm() {
        let mut rng = stream(2);
        let model = make_planted(50, 4, 0.0, true, &mut rng).unwrap();
        for _ in 0..100 {
            let s = model.draw_sample(&mut rng);
            assert!(s.xi.iter().all(|&v| v == 0.0));
            assert_eq!(s.x, s.v);
            assert!((s.x.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sample_invariants_hold_over_a_long_stream() {
        let mut rng = stream(3);
        let model = make_planted(100, 5, 0.5, false, &mut rng).unwrap();
        for _ in 0..20_000 {
            let s = model.draw_sample(&mut rng);
            assert_eq!(s.x, &s.v + &s.xi);
            let leak = project(&model.ubar, &s.v).unwrap().r.norm();
            assert!(leak <= 1e-10 * s.v.norm());
            assert!((s.v.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn models_and_streams_are_seed_deterministic() {
        let a = make_planted(60, 3, 0.1, true, &mut stream(77)).unwrap();
        let b = make_planted(60, 3, 0.1, true, &mut stream(77)).unwrap();
        assert_eq!(a, b);
        let (mut ra, mut rb) = (stream(5), stream(5));
        for _ in 0..10 {
            assert_eq!(a.draw_sample(&mut ra), b.draw_sample(&mut rb));
        }
    }

    #[test]
    fn sparse_density_matches_generation_rate() {
        let (n, d) = (1000, 20);
        let density = sparse_density(n, d);
        assert_eq!(density, 0.04);
        let mut rng = stream(12);
        // Per-column nonzero fraction, averaged over 100 draws of the matrix.
        let mut fractions = Vec::new();
        for _ in 0..100 {
            let m = sparse_gaussian_matrix(n, d, density, &mut rng);
            for col in m.column_iter() {
                fractions.push(col.iter().filter(|v| **v != 0.0).count() as f64 / n as f64);
            }
        }
        let k = fractions.len() as f64;
        let mean = fractions.iter().sum::<f64>() / k;
        let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let se = (var / k).sqrt();
        assert!((mean - density).abs() <= 3.0 * se, "mean {mean} vs {density} (se {se})");
    }

    #[test]
    fn basis_csv_round_trips() {
        let model = make_planted(12, 3, 0.25, true, &mut stream(4)).unwrap();
        let mut buf = Vec::new();
        model.write_basis_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,d,sigma_sq\n12,3,0.25\n"));
        let (ubar, sigma_sq) = read_basis_csv(buf.as_slice()).unwrap();
        assert_eq!(ubar, model.ubar);
        assert_eq!(sigma_sq, 0.25);

        let mut rng = stream(5);
        let samples: Vec<Sample> = (0..4).map(|_| model.draw_sample(&mut rng)).collect();
        let mut buf = Vec::new();
        model.write_samples_csv(&mut buf, &samples).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2 + 4);
    }

    #[test]
    fn malformed_basis_csv_is_rejected() {
        assert!(read_basis_csv("n,d\n".as_bytes()).is_err());
        assert!(read_basis_csv("n,d,sigma_sq\n2,1,0\n1\n".as_bytes()).is_err());
        assert!(read_basis_csv("n,d,sigma_sq\n2,1,0\n1\n1\n".as_bytes()).is_err());
    }
}

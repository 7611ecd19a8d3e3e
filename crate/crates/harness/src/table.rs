use std::io::Write;

use grouse_core::bounds::{k1_bound, k1_bound_derivation, k2_bound, mu0, BoundParams};
use serde::{Deserialize, Serialize};

pub const BOUNDS_HEADER: &str = "n,d,sigma_sq,rho,rho_prime,eps_star,C,mu0,K1,K1_derivation,K2,K,error";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub mu0: f64,
    pub k1: f64,
    /// `K₁` in its `(d²/ρ′ + 1)·ln((1 − ρ′/2)/E[ζ₀])` form.
    pub k1_derivation: f64,
    pub k2: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub params: BoundParams,
    pub values: Result<BoundValues, String>,
}

/// Evaluates every row independently; an invalid row carries its error.
pub fn bounds_table(params: &[BoundParams]) -> Vec<BoundsRow> {
    params
        .iter()
        .map(|p| {
            let values = p.validate().and_then(|_| k2_bound(p)).map_err(|e| e.to_string()).map(|k2| {
                let k1 = k1_bound(p);
                BoundValues { mu0: mu0(p), k1, k1_derivation: k1_bound_derivation(p), k2, k: k1 + k2 }
            });
            BoundsRow { params: *p, values }
        })
        .collect()
}

pub fn write_bounds_csv<W: Write>(mut out: W, rows: &[BoundsRow]) -> std::io::Result<()> {
    writeln!(out, "{BOUNDS_HEADER}")?;
    for row in rows {
        let p = &row.params;
        write!(out, "{},{},{},{},{},{},{},", p.n, p.d, p.sigma_sq, p.rho, p.rho_prime, p.eps_star, p.c_const)?;
        match &row.values {
            Ok(v) => writeln!(out, "{},{},{},{},{},", v.mu0, v.k1, v.k1_derivation, v.k2, v.k)?,
            Err(e) => writeln!(out, ",,,,,\"{}\"", e.replace('"', "'"))?,
        }
    }
    Ok(())
}

//! Post-selected mode matrix and its entanglement figures.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// `T_ab` between signal mode `a` and idler mode `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix {
    pub entries: DMatrix<Complex64>,
    /// `N^a = 1 / |int Phi^a C|^2` per signal and idler mode.
    pub norms_s: Vec<f64>,
    pub norms_i: Vec<f64>,
    /// Largest relative quadrature error estimate over the computed entries.
    pub max_error: f64,
    pub converged: bool,
}

impl ModeMatrix {
    pub fn from_entries(entries: DMatrix<Complex64>) -> Self {
        let d = entries.nrows();
        ModeMatrix {
            entries,
            norms_s: vec![1.0; d],
            norms_i: vec![1.0; d],
            max_error: 0.0,
            converged: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn diagonal_abs2(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.entries[(a, a)].norm_sqr()).collect()
    }

    /// `max_{a != b} |T_ab| / min_a |T_aa|`.
    pub fn crosstalk(&self) -> f64 {
        let d = self.dim();
        let min_diag = (0..d).map(|a| self.entries[(a, a)].norm()).fold(f64::INFINITY, f64::min);
        let mut off: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    off = off.max(self.entries[(a, b)].norm());
                }
            }
        }
        if d < 2 {
            0.0
        } else {
            off / min_diag
        }
    }

    pub fn metrics(&self) -> Result<EntanglementMetrics> {
        entanglement_metrics(&self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementMetrics {
    /// Descending, unit sum of squares.
    pub schmidt_coefficients: Vec<f64>,
    pub schmidt_number: f64,
    pub fidelity: f64,
    pub d_ent_lower_bound: usize,
    pub eof_ebits: f64,
}

/// `floor(F d) + 1`, or `F d` itself when it is an integer to within 1e-9.
pub fn dimensionality_bound(fidelity: f64, d: usize) -> usize {
    let fd = fidelity * d as f64;
    let r = fd.round();
    if (fd - r).abs() <= 1e-9 * d as f64 {
        r as usize
    } else {
        fd.floor() as usize + 1
    }
}

pub fn entanglement_metrics(t: &DMatrix<Complex64>) -> Result<EntanglementMetrics> {
    let d = t.nrows();
    if d == 0 || t.ncols() != d {
        return Err(Error::Validation(format!("T must be square and non-empty, got {}x{}", t.nrows(), t.ncols())));
    }
    let frob2: f64 = t.iter().map(|z| z.norm_sqr()).sum();
    if !(frob2 > 0.0) || !frob2.is_finite() {
        return Err(Error::Numeric("T is zero or non-finite".into()));
    }
    let tn = t / Complex64::new(frob2.sqrt(), 0.0);
    let mut s: Vec<f64> = tn.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let s4: f64 = s.iter().map(|v| v.powi(4)).sum();
    let eof = -s
        .iter()
        .map(|v| v * v)
        .filter(|&l| l > 0.0)
        .map(|l| l * l.log2())
        .sum::<f64>();
    let tr: Complex64 = (0..d).map(|a| tn[(a, a)]).sum();
    let fidelity = tr.norm_sqr() / d as f64;
    Ok(EntanglementMetrics {
        schmidt_coefficients: s,
        schmidt_number: 1.0 / s4,
        fidelity,
        d_ent_lower_bound: dimensionality_bound(fidelity, d),
        eof_ebits: eof.max(0.0),
    })
}

/// Haar-random unitary via QR of a complex Gaussian matrix with the phase fix.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<Complex64> {
    let z = DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..d {
        let rk = r[(k, k)];
        let ph = if rk.norm() > 0.0 { rk / rk.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, k)] *= ph;
        }
    }
    q
}

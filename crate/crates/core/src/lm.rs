//! Damped Gauss-Newton (Levenberg-Marquardt) on weighted residual vectors.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when `|dx| / (|x| + 1e-12)` falls below this.
    pub step_tol: f64,
    /// Stop when the relative chi^2 decrease of an accepted step falls below this.
    pub chi2_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            step_tol: 1e-8,
            chi2_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub chi2: f64,
    pub n_residuals: usize,
    /// `inv(J^T J) * chi2 / dof`; `None` when singular or `dof == 0`.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmResult {
    pub fn dof(&self) -> usize {
        self.n_residuals.saturating_sub(self.x.len())
    }

    pub fn std_error(&self, k: usize) -> f64 {
        self.covariance
            .as_ref()
            .map(|c| c[(k, k)].max(0.0).sqrt())
            .unwrap_or(f64::NAN)
    }
}

fn chi2(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        let h = 6e-6 * x[k].abs().max(1e-3);
        xp[k] = x[k] + h;
        let rp = f(&xp);
        xp[k] = x[k] - h;
        let rm = f(&xp);
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    j
}

/// Minimizes `sum r_i(x)^2` where `f` returns the weighted residuals.
pub fn minimize(f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], opts: &LmOptions) -> LmResult {
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let m = r.len();
    let mut c2 = chi2(&r);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    if !c2.is_finite() {
        return LmResult {
            x,
            chi2: c2,
            n_residuals: m,
            covariance: None,
            iterations,
            converged: false,
        };
    }
    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&f, &x, m);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        loop {
            let mut a = jtj.clone();
            for k in 0..x.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(dx) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
            let rn = f(&xn);
            let cn = chi2(&rn);
            if cn.is_finite() && cn <= c2 {
                let step = dx.norm() / (DVector::from_column_slice(&x).norm() + 1e-12);
                let rel = (c2 - cn) / c2.max(1e-300);
                x = xn;
                r = rn;
                c2 = cn;
                lambda = (lambda / 10.0).max(1e-12);
                if step < opts.step_tol || rel < opts.chi2_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No downhill step exists at machine precision: a minimum.
                converged = g.norm() <= 1e-6 * (1.0 + c2);
                break 'outer;
            }
        }
    }
    let covariance = covariance(&f, &x, m, c2);
    LmResult {
        x,
        chi2: c2,
        n_residuals: m,
        covariance,
        iterations,
        converged,
    }
}

fn covariance(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize, c2: f64) -> Option<DMatrix<f64>> {
    let n = x.len();
    if m <= n {
        return None;
    }
    let j = jacobian(f, x, m);
    let jtj = j.transpose() * &j;
    let inv = jtj.try_inverse()?;
    Some(inv * (c2 / (m - n) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp() + 0.5).collect();
        let res = minimize(
            |x| ts.iter().zip(&ys).map(|(t, y)| x[0] * (-x[1] * t).exp() + x[2] - y).collect(),
            &[1.0, 0.1, 0.0],
            &LmOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-6);
        assert!((res.x[1] - 0.7).abs() < 1e-6);
        assert!((res.x[2] - 0.5).abs() < 1e-6);
        assert_eq!(res.dof(), 27);
    }

    #[test]
    fn std_errors_scale_with_noise() {
        let xs: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let noise: Vec<f64> = (0..50).map(|k| if k % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 2.0 * x + 1.0 + e).collect();
        let res = minimize(
            |p| xs.iter().zip(&ys).map(|(x, y)| p[0] * x + p[1] - y).collect(),
            &[0.0, 0.0],
            &LmOptions::default(),
        );
        assert!(res.std_error(0) > 0.0 && res.std_error(0) < 1e-2);
    }
}

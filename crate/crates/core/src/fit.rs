//! Slice-wise recovery of origins, sigma_c and sigma_p from a pi-step scan.
//!
//! Weighted least squares with weights `1/max(counts, 1)`. sigma_c is fitted
//! jointly on the anti-diagonal and the two edge lines (the row and column
//! whose partner edge is most negative); sigma_p jointly on the diagonal and
//! the anti-diagonal with `N'/N` tied to the widths. The two stages are
//! alternated once so the edge-line width can include sigma_p.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lm::{minimize, LmOptions, LmResult};
use crate::model::{sigma_p_from_tilde, sigma_p_tilde, JtmaParams, Model};
use crate::quadrature::QuadratureSpec;
use crate::scan::{diag_bracket, diag_ratio, erf_edge, expected_probabilities, n_prime_ratio, visibility, visibility_sigma_form, ScanData};

/// Minimum number of diagonal samples for a direct sigma_p fit.
pub const MIN_DIAGONAL_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Origins {
    pub origin_s: f64,
    pub origin_i: f64,
    pub origin_s_err: f64,
    pub origin_i_err: f64,
    /// Fitted erf^2 widths of the signal and idler edge lines.
    pub width_s: f64,
    pub width_i: f64,
}

impl Origins {
    pub fn at(origin_s: f64, origin_i: f64) -> Self {
        Origins {
            origin_s,
            origin_i,
            origin_s_err: 0.0,
            origin_i_err: 0.0,
            width_s: f64::NAN,
            width_i: f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SigmaCFit {
    pub sigma_c: f64,
    pub sigma_c_err: f64,
    pub scale_n: f64,
    pub scale_n_prime: f64,
    /// Over `(ln sigma_c, N, N', C_s, C_i)`.
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub samples: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaPMethod {
    Diagonal,
    Visibility,
}

#[derive(Debug, Clone)]
pub struct SigmaPFit {
    pub sigma_p: f64,
    pub sigma_p_err: f64,
    pub scale_a: f64,
    /// Over `(ln sigma_p, A, N)` for the diagonal method.
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub samples: usize,
    pub converged: bool,
    pub method: SigmaPMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub sigma_c: f64,
    pub sigma_c_err: f64,
    pub sigma_p: f64,
    pub sigma_p_err: f64,
    pub origin_s: f64,
    pub origin_s_err: f64,
    pub origin_i: f64,
    pub origin_i_err: f64,
    /// Anti-diagonal plateau `N^2`, in counts.
    pub scale: f64,
    pub scale_n_prime_ratio: f64,
    pub visibility: f64,
    pub visibility_sigma_form: f64,
    pub residual_chi2: f64,
    pub dof: usize,
    pub sigma_p_method: SigmaPMethod,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    a: f64,
    y: f64,
    sw: f64,
}

impl Sample {
    fn new(a: f64, counts: u64) -> Self {
        Sample {
            a,
            y: counts as f64,
            sw: 1.0 / (counts.max(1) as f64).sqrt(),
        }
    }
}

fn nearest(values: &[f64], target: f64) -> Option<usize> {
    let k = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))?
        .0;
    let step = |i: usize| -> f64 {
        let l = if i > 0 { values[i] - values[i - 1] } else { f64::INFINITY };
        let r = if i + 1 < values.len() { values[i + 1] - values[i] } else { f64::INFINITY };
        l.min(r)
    };
    let tol = if values.len() > 1 { 0.5 * step(k) + 1e-9 * step(k) } else { 0.0 };
    ((values[k] - target).abs() <= tol).then_some(k)
}

/// `(a, counts)` along `a_i - o_i = sign (a_s - o_s)`, nearest cells only.
fn slice(data: &ScanData, o: &Origins, sign: f64) -> Vec<Sample> {
    let g = &data.grid;
    let mut out = Vec::new();
    for (is, &a_s) in g.a_s_values.iter().enumerate() {
        let x = a_s - o.origin_s;
        if let Some(ii) = nearest(&g.a_i_values, o.origin_i + sign * x) {
            let y = g.a_i_values[ii] - o.origin_i;
            out.push(Sample::new(0.5 * (x + sign * y), data.count(is, ii)));
        }
    }
    out
}

fn edge_row(data: &ScanData) -> Vec<Sample> {
    let g = &data.grid;
    (0..g.a_s_values.len())
        .map(|is| Sample::new(g.a_s_values[is], data.count(is, 0)))
        .collect()
}

fn edge_column(data: &ScanData) -> Vec<Sample> {
    let g = &data.grid;
    (0..g.a_i_values.len())
        .map(|ii| Sample::new(g.a_i_values[ii], data.count(0, ii)))
        .collect()
}

fn check_data(data: &ScanData) -> Result<()> {
    data.validate()?;
    let (ns, ni) = data.grid.shape();
    if ns < 3 || ni < 3 {
        return Err(Error::Validation(format!("scan must be at least 3 x 3, got {ns} x {ni}")));
    }
    if data.counts.iter().all(|&c| c == 0) {
        return Err(Error::Numeric("all counts are zero; nothing to fit".into()));
    }
    Ok(())
}

fn fit_edge(samples: &[Sample], axis: &str) -> Result<(f64, f64, f64)> {
    let (k, min) = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.y.total_cmp(&b.1.y))
        .map(|(k, s)| (k, s.y))
        .ok_or_else(|| Error::Validation(format!("{axis} edge line is empty")))?;
    if k == 0 || k + 1 == samples.len() {
        return Err(Error::BoundaryHit(format!(
            "{axis} edge-line minimum at grid boundary a = {}; grid does not bracket the origin",
            samples[k].a
        )));
    }
    let a0 = samples[k].a;
    let plateau = samples.iter().map(|s| s.y).fold(0.0, f64::max);
    let half = 0.5 * (plateau + min);
    let reach = samples
        .iter()
        .filter(|s| s.y >= half)
        .map(|s| (s.a - a0).abs())
        .fold(f64::INFINITY, f64::min);
    let span = samples.last().unwrap().a - samples[0].a;
    // erf^2(x) = 1/2 at x = 0.7329.
    let w0 = if reach.is_finite() && reach > 0.0 { SQRT_2 * reach / 0.7329 } else { span / 4.0 };
    let res = minimize(
        |x| {
            let (c, o, w) = (x[0], x[1], x[2].exp());
            samples.iter().map(|s| s.sw * (s.y - c * erf_edge(s.a, o, w))).collect()
        },
        &[plateau.max(1.0), a0, w0.ln()],
        &LmOptions::default(),
    );
    Ok((res.x[1], res.std_error(1), res.x[2].exp()))
}

/// Edge-line minima via `C erf^2(sqrt2 (a - a0)/w)` fits.
pub fn estimate_origins(data: &ScanData) -> Result<Origins> {
    check_data(data)?;
    let (os, es, ws) = fit_edge(&edge_row(data), "signal")?;
    let (oi, ei, wi) = fit_edge(&edge_column(data), "idler")?;
    Ok(Origins {
        origin_s: os,
        origin_i: oi,
        origin_s_err: es,
        origin_i_err: ei,
        width_s: ws,
        width_i: wi,
    })
}

fn antidiag_model(a: f64, n: f64, np: f64, sc: f64) -> f64 {
    let v = n - np * (-2.0 * a * a / (sc * sc)).exp();
    v * v
}

pub fn fit_sigma_c(data: &ScanData, origins: &Origins) -> Result<SigmaCFit> {
    fit_sigma_c_with_width(data, origins, 0.0)
}

/// sigma_c stage; the edge lines use width `sqrt(sigma_c^2 + sigma_p_tilde^2)`.
pub fn fit_sigma_c_with_width(data: &ScanData, origins: &Origins, sigma_p_tilde: f64) -> Result<SigmaCFit> {
    check_data(data)?;
    let anti = slice(data, origins, -1.0);
    if anti.len() < 4 {
        return Err(Error::Validation(format!("only {} anti-diagonal samples", anti.len())));
    }
    let row = edge_row(data);
    let col = edge_column(data);
    let plateau = anti.iter().map(|s| s.y).fold(0.0, f64::max).max(1.0);
    let dip = anti.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
    let n0 = plateau.sqrt();
    let np0 = (n0 - dip.sqrt()).max(0.01 * n0);
    let w_guess = [origins.width_s, origins.width_i]
        .into_iter()
        .filter(|w| w.is_finite() && *w > 0.0)
        .fold(0.0, f64::max);
    let span = data.grid.a_s_values.last().unwrap() - data.grid.a_s_values[0];
    let sc0 = if w_guess > 0.0 { w_guess } else { span / 4.0 };
    let cs0 = row.iter().map(|s| s.y).fold(0.0, f64::max).max(1.0);
    let ci0 = col.iter().map(|s| s.y).fold(0.0, f64::max).max(1.0);
    let (os, oi) = (origins.origin_s, origins.origin_i);
    let st2 = sigma_p_tilde * sigma_p_tilde;
    let resid = |x: &[f64]| -> Vec<f64> {
        let sc = x[0].exp();
        let w = (sc * sc + st2).sqrt();
        let mut r = Vec::with_capacity(anti.len() + row.len() + col.len());
        r.extend(anti.iter().map(|s| s.sw * (s.y - antidiag_model(s.a, x[1], x[2], sc))));
        r.extend(row.iter().map(|s| s.sw * (s.y - x[3] * erf_edge(s.a, os, w))));
        r.extend(col.iter().map(|s| s.sw * (s.y - x[4] * erf_edge(s.a, oi, w))));
        r
    };
    let res = minimize(resid, &[sc0.ln(), n0, np0, cs0, ci0], &LmOptions::default());
    let sc = res.x[0].exp();
    Ok(SigmaCFit {
        sigma_c: sc,
        sigma_c_err: sc * res.std_error(0),
        scale_n: res.x[1],
        scale_n_prime: res.x[2],
        chi2: res.chi2,
        dof: res.dof(),
        samples: res.n_residuals,
        converged: res.converged && sc.is_finite(),
        covariance: res.covariance,
    })
}

/// sigma_p from `N'/N = 4 sigma_p_tilde / (pi sigma_c)`.
pub fn sigma_p_from_ratio(ratio: f64, sigma_c: f64) -> Option<f64> {
    sigma_p_from_tilde(PI * sigma_c * ratio / 4.0, sigma_c)
}

fn visibility_fallback(stage_c: &SigmaCFit) -> Result<SigmaPFit> {
    let (n, np) = (stage_c.scale_n, stage_c.scale_n_prime);
    let r = np / n;
    let sp = sigma_p_from_ratio(r, stage_c.sigma_c)
        .ok_or_else(|| Error::Numeric(format!("visibility ratio {r} has no sigma_p solution")))?;
    // Propagate var(N'/N) through the monotone map by finite difference.
    let var_r = stage_c.covariance.as_ref().map(|c| {
        let (vn, vnp, cv) = (c[(1, 1)], c[(2, 2)], c[(1, 2)]);
        r * r * (vnp / (np * np) + vn / (n * n) - 2.0 * cv / (n * np))
    });
    let h = 1e-6 * r;
    let d = sigma_p_from_ratio(r + h, stage_c.sigma_c).map(|v| (v - sp) / h);
    let err = match (var_r, d) {
        (Some(v), Some(d)) if v >= 0.0 => d.abs() * v.sqrt(),
        _ => f64::NAN,
    };
    Ok(SigmaPFit {
        sigma_p: sp,
        sigma_p_err: err,
        scale_a: n * diag_ratio(stage_c.sigma_c),
        covariance: None,
        chi2: 0.0,
        dof: 0,
        samples: 0,
        converged: stage_c.converged,
        method: SigmaPMethod::Visibility,
    })
}

/// sigma_p stage at fixed sigma_c. `initial` defaults to the visibility inversion.
pub fn fit_sigma_p(data: &ScanData, origins: &Origins, stage_c: &SigmaCFit, initial: Option<f64>) -> Result<SigmaPFit> {
    check_data(data)?;
    let sc = stage_c.sigma_c;
    let diag = slice(data, origins, 1.0);
    if diag.len() < MIN_DIAGONAL_POINTS {
        return visibility_fallback(stage_c);
    }
    let anti = slice(data, origins, -1.0);
    let sp0 = initial
        .or_else(|| sigma_p_from_ratio(stage_c.scale_n_prime / stage_c.scale_n, sc))
        .unwrap_or(0.1 * sc);
    let n0 = stage_c.scale_n;
    let a0 = n0 * diag_ratio(sc);
    let resid = |x: &[f64]| -> Vec<f64> {
        let sp = x[0].exp();
        let (amp, n) = (x[1], x[2]);
        let np = n * n_prime_ratio(sp, sc);
        let mut r = Vec::with_capacity(diag.len() + anti.len());
        r.extend(diag.iter().map(|s| {
            let b = amp * diag_bracket(s.a, sp, sc);
            s.sw * (s.y - b * b)
        }));
        r.extend(anti.iter().map(|s| s.sw * (s.y - antidiag_model(s.a, n, np, sc))));
        r
    };
    let res: LmResult = minimize(resid, &[sp0.ln(), a0, n0], &LmOptions::default());
    let sp = res.x[0].exp();
    Ok(SigmaPFit {
        sigma_p: sp,
        sigma_p_err: sp * res.std_error(0),
        scale_a: res.x[1].abs(),
        chi2: res.chi2,
        dof: res.dof(),
        samples: res.n_residuals,
        converged: res.converged && sp.is_finite() && sp < sc,
        covariance: res.covariance,
        method: SigmaPMethod::Diagonal,
    })
}

/// Origins, then sigma_c and sigma_p twice with the edge width refined.
pub fn fit_full(data: &ScanData) -> Result<FitReport> {
    check_data(data)?;
    let origins = estimate_origins(data)?;
    let c1 = fit_sigma_c(data, &origins)?;
    let p1 = fit_sigma_p(data, &origins, &c1, None)?;
    let c2 = fit_sigma_c_with_width(data, &origins, sigma_p_tilde(p1.sigma_p, c1.sigma_c))?;
    let p2 = fit_sigma_p(data, &origins, &c2, Some(p1.sigma_p))?;
    let ratio = n_prime_ratio(p2.sigma_p, c2.sigma_c);
    let v = visibility(1.0, ratio.clamp(0.0, 2.0)).unwrap_or(f64::NAN);
    Ok(FitReport {
        sigma_c: c2.sigma_c,
        sigma_c_err: c2.sigma_c_err,
        sigma_p: p2.sigma_p,
        sigma_p_err: p2.sigma_p_err,
        origin_s: origins.origin_s,
        origin_s_err: origins.origin_s_err,
        origin_i: origins.origin_i,
        origin_i_err: origins.origin_i_err,
        scale: c2.scale_n * c2.scale_n,
        scale_n_prime_ratio: ratio,
        visibility: v,
        visibility_sigma_form: visibility_sigma_form(c2.sigma_c, p2.sigma_p),
        residual_chi2: c2.chi2 + p2.chi2,
        dof: c2.dof + p2.dof,
        sigma_p_method: p2.method,
        converged: c1.converged && p1.converged && c2.converged && p2.converged,
    })
}

/// Reduced chi^2 of the whole surface against the collection-limited forward
/// model at the fitted parameters, with the count scale profiled out.
pub fn validation_residual(data: &ScanData, report: &FitReport, spec: &QuadratureSpec) -> Result<f64> {
    check_data(data)?;
    let p = JtmaParams::cl(report.sigma_p, report.sigma_c)?.with_origins(report.origin_s, report.origin_i);
    let probs = expected_probabilities(&data.grid, &p, &Model::Cl, spec)?;
    let w: Vec<f64> = data.counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for ((&c, &m), &wi) in data.counts.iter().zip(&probs.values).zip(&w) {
        num += wi * c as f64 * m;
        den += wi * m * m;
    }
    let k = num / den;
    let chi2: f64 = data
        .counts
        .iter()
        .zip(&probs.values)
        .zip(&w)
        .map(|((&c, &m), &wi)| wi * (c as f64 - k * m).powi(2))
        .sum();
    let dof = data.counts.len().saturating_sub(5).max(1);
    Ok(chi2 / dof as f64)
}

/// Six significant digits in scientific notation.
pub fn fmt6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl FitReport {
    /// Key-value text, fixed order, units in key suffixes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("sigma_c_rad_per_mm", fmt6(self.sigma_c));
        kv("sigma_c_err_rad_per_mm", fmt6(self.sigma_c_err));
        kv("sigma_p_rad_per_mm", fmt6(self.sigma_p));
        kv("sigma_p_err_rad_per_mm", fmt6(self.sigma_p_err));
        kv("origin_s_rad_per_mm", fmt6(self.origin_s));
        kv("origin_s_err_rad_per_mm", fmt6(self.origin_s_err));
        kv("origin_i_rad_per_mm", fmt6(self.origin_i));
        kv("origin_i_err_rad_per_mm", fmt6(self.origin_i_err));
        kv("scale_counts", fmt6(self.scale));
        kv("n_prime_over_n", fmt6(self.scale_n_prime_ratio));
        kv("visibility", fmt6(self.visibility));
        kv("visibility_sigma_form", fmt6(self.visibility_sigma_form));
        kv("residual_chi2", fmt6(self.residual_chi2));
        kv("dof", self.dof.to_string());
        kv(
            "sigma_p_method",
            format!(
                "\"{}\"",
                match self.sigma_p_method {
                    SigmaPMethod::Diagonal => "diagonal",
                    SigmaPMethod::Visibility => "visibility",
                }
            ),
        );
        kv("converged", self.converged.to_string());
        s
    }

    /// Measured-parameter table in the layout of a predicted/measured comparison.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>22} {:>22}", "", "sigma_P (rad/mm)", "sigma_C (rad/mm)");
        let _ = writeln!(
            s,
            "{:<10} {:>22} {:>22}",
            "measured",
            format!("{:.2} +- {:.2}", self.sigma_p, self.sigma_p_err),
            format!("{:.1} +- {:.1}", self.sigma_c, self.sigma_c_err)
        );
        s
    }
}

//! Heralded idler states, singles rates and one-sided heralding efficiency.
//!
//! A signal detection through `Phi_s` with the normalized collection mode `C`
//! heralds `psi(q_i) = int Phi_s(q_s) C(q_s) F(q_s, q_i) d^2q_s`, where `F`
//! is the generated amplitude without collection. Singles are `<psi, psi>`,
//! coincidences `|<Phi_i C, psi>|^2`, so `eta <= |Phi_i C|^2 <= 1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::amplitude::{gaussian_over_disk, window_rule};
use crate::basis::{collection_mode, Pixel, PixelBasis};
use crate::error::{Error, Result};
use crate::model::{jtma_ideal, norm2, JtmaParams, Vec2};
use crate::quadrature::{refine, Accum, Axis, Integral, PlanarRule, QuadratureSpec};

/// Half width of the heralded-state support beyond the pixel, in sigma_p.
const SUPPORT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeraldKernel {
    /// Pump envelope times the phase-matching sinc.
    #[default]
    Full,
    /// Sinc replaced by a constant; valid for `sigma_s >~ 2 sigma_c`.
    ClSubstituted,
}

impl HeraldKernel {
    pub fn name(self) -> &'static str {
        match self {
            HeraldKernel::Full => "full",
            HeraldKernel::ClSubstituted => "cl",
        }
    }
}

impl std::str::FromStr for HeraldKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HeraldKernel::Full),
            "cl" | "cl_substituted" => Ok(HeraldKernel::ClSubstituted),
            _ => Err(Error::Validation(format!("unknown herald kernel {s:?}; expected full or cl"))),
        }
    }
}

/// `psi` for one signal pixel, in the optic-axis frame.
fn psi(px: &Pixel, qi: Vec2, p: &JtmaParams, kernel: HeraldKernel, n: usize) -> f64 {
    let sc2 = p.sigma_c * p.sigma_c;
    let cn = (2.0 / PI).sqrt() / p.sigma_c;
    match kernel {
        HeraldKernel::ClSubstituted => {
            // C(q_s) exp(-|q_s + q_i|^2 / (2 sigma_p^2)) is an isotropic Gaussian in q_s.
            let b = 0.5 / (p.sigma_p * p.sigma_p);
            let alpha = 1.0 / sc2 + b;
            let q0 = [-b / alpha * qi[0], -b / alpha * qi[1]];
            let pre = (-norm2(qi) * (b - b * b / alpha)).exp();
            p.amp_scale * cn * pre * gaussian_over_disk(px.center, px.radius, q0, alpha, n)
        }
        HeraldKernel::Full => {
            let region = crate::hologram::Region::Disk {
                center: px.center,
                radius: px.radius,
            };
            window_rule(&region, [-qi[0], -qi[1]], SUPPORT * p.sigma_p, f64::INFINITY, n)
                .integrate(|qs| collection_mode(qs, p.sigma_c) * jtma_ideal(qs, qi, p))
        }
    }
}

fn axis_pixels(b: &PixelBasis, origin: f64) -> Vec<Pixel> {
    b.pixels
        .iter()
        .map(|px| Pixel {
            center: [px.center[0] - origin, px.center[1]],
            radius: px.radius,
        })
        .collect()
}

/// Polar rule on the heralded support of pixel `px`: the mirrored disk
/// dilated by `SUPPORT sigma_p`, with breaks around the mirrored edge.
fn support_rule(px: &Pixel, sigma_p: f64, n: usize) -> PlanarRule {
    let r = px.radius;
    let w = SUPPORT * sigma_p;
    let breaks: Vec<f64> = [-4.0, -2.0, 0.0, 2.0, 4.0]
        .iter()
        .map(|k| r + k * sigma_p)
        .filter(|&b| b > 0.0 && b < r + w)
        .collect();
    PlanarRule::disk_with_breaks([-px.center[0], -px.center[1]], r + w, &breaks, n)
}

fn check_vector(v: &[Complex64], d: usize) -> Result<f64> {
    if v.len() != d {
        return Err(Error::Validation(format!("vector has {} entries for a {d}-mode basis", v.len())));
    }
    let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if !(n2 > 0.0) || (n2 - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("vector must be a unit vector, norm^2 = {n2}")));
    }
    Ok(1.0 / v.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn disks_meet(a: &Pixel, b: &Pixel, extra: f64) -> bool {
    let d = norm2([a.center[0] - b.center[0], a.center[1] - b.center[1]]).sqrt();
    d < a.radius + b.radius + extra
}

/// Inclusive signal singles `int |psi^v|^2 d^2q_i` for hologram `A^v sum v_a Phi^a`.
pub fn singles_prob(
    v_s: &[Complex64],
    basis_s: &PixelBasis,
    p: &JtmaParams,
    kernel: HeraldKernel,
    spec: &QuadratureSpec,
) -> Result<Integral<f64>> {
    p.validate()?;
    spec.validate()?;
    basis_s.validate()?;
    let gain = check_vector(v_s, basis_s.d())?;
    let px = axis_pixels(basis_s, p.origin_s);
    let d = px.len();
    let reach = 2.0 * SUPPORT * p.sigma_p;
    let res = refine(spec, |n| {
        let mut acc = Accum::<f64>::zero();
        for a in 0..d {
            let rule = support_rule(&px[a], p.sigma_p, n);
            for b in 0..d {
                let c = v_s[a] * v_s[b].conj();
                if c.norm() == 0.0 || !disks_meet(&px[a], &px[b], reach) {
                    continue;
                }
                // M_ab over the support of psi_a; diagonal and off-diagonal alike.
                let m = if a == b {
                    rule.accumulate(|q| psi(&px[a], q, p, kernel, n).powi(2))
                } else {
                    rule.accumulate(|q| psi(&px[a], q, p, kernel, n) * psi(&px[b], q, p, kernel, n))
                };
                acc = acc.plus(Accum {
                    sum: c.re * m.sum,
                    mass: c.norm() * m.mass,
                });
            }
        }
        acc
    });
    Ok(res.map(|s| gain * gain * s))
}

/// `|<Phi_i^{v_i} C, psi^{v_s}>|^2` in the same units as [`singles_prob`].
pub fn heralded_coincidence(
    v_s: &[Complex64],
    v_i: &[Complex64],
    basis_s: &PixelBasis,
    basis_i: &PixelBasis,
    p: &JtmaParams,
    kernel: HeraldKernel,
    spec: &QuadratureSpec,
) -> Result<Integral<f64>> {
    p.validate()?;
    spec.validate()?;
    basis_s.validate()?;
    basis_i.validate()?;
    let gs = check_vector(v_s, basis_s.d())?;
    let gi = check_vector(v_i, basis_i.d())?;
    let ps = axis_pixels(basis_s, p.origin_s);
    let pi = axis_pixels(basis_i, p.origin_i);
    let reach = SUPPORT * p.sigma_p;
    let res = refine(spec, |n| {
        let mut acc = Accum::<Complex64>::zero();
        for (b, pb) in pi.iter().enumerate() {
            if v_i[b].norm() == 0.0 {
                continue;
            }
            let rule = PlanarRule::disk(pb.center, pb.radius, n);
            for (a, pa) in ps.iter().enumerate() {
                let mirror = Pixel {
                    center: [-pa.center[0], -pa.center[1]],
                    radius: pa.radius,
                };
                if v_s[a].norm() == 0.0 || !disks_meet(&mirror, pb, reach) {
                    continue;
                }
                let k = rule.accumulate(|q| collection_mode(q, p.sigma_c) * psi(pa, q, p, kernel, n));
                let c = v_s[a] * v_i[b];
                acc = acc.plus(Accum {
                    sum: c * k.sum,
                    mass: c.norm() * k.mass,
                });
            }
        }
        acc
    });
    Ok(Integral {
        value: (gs * gi).powi(2) * res.value.norm_sqr(),
        error: 2.0 * res.error,
        converged: res.converged,
        order: res.order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldPoint {
    pub d2: f64,
    pub coincidence: f64,
    pub singles: f64,
    pub eta: f64,
}

/// `eta` for a centered signal pixel of diameter `d1` against centered idler
/// pixels of each diameter in `d2_values`. Uses the rotational symmetry of
/// the centered problem to integrate radially.
pub fn heralding_sweep(
    d1: f64,
    d2_values: &[f64],
    p: &JtmaParams,
    kernel: HeraldKernel,
    spec: &QuadratureSpec,
) -> Result<Vec<HeraldPoint>> {
    p.validate()?;
    spec.validate()?;
    if !(d1 > 0.0) {
        return Err(Error::Validation(format!("d1 must be > 0, got {d1}")));
    }
    if d2_values.iter().any(|&d| !(d > 0.0)) || d2_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("d2 values must be positive and ascending".into()));
    }
    let r1 = 0.5 * d1;
    let px = Pixel {
        center: [0.0, 0.0],
        radius: r1,
    };
    let sp = p.sigma_p;
    let edge_breaks = |hi: f64| -> Vec<f64> {
        [-4.0, -2.0, 0.0, 2.0, 4.0]
            .iter()
            .map(|k| r1 + k * sp)
            .filter(|&b| b > 0.0 && b < hi)
            .collect()
    };
    let radial = |hi: f64, n: usize| Axis::new(0.0, hi).with_breaks(edge_breaks(hi)).rule(n);
    let psi_r = |r: f64, n: usize| psi(&px, [r, 0.0], p, kernel, n);
    let r_out = r1 + SUPPORT * sp;
    let singles = refine(spec, |n| {
        radial(r_out, n).accumulate(|r| 2.0 * PI * r * psi_r(r, n).powi(2))
    });
    if !(singles.value > 0.0) {
        return Err(Error::Numeric("heralded singles probability vanished".into()));
    }
    d2_values
        .iter()
        .map(|&d2| {
            let r2 = 0.5 * d2;
            let hi = r2.min(r_out);
            let k = refine(spec, |n| {
                radial(hi, n).accumulate(|r| 2.0 * PI * r * collection_mode([r, 0.0], p.sigma_c) * psi_r(r, n))
            });
            let coincidence = k.value * k.value;
            Ok(HeraldPoint {
                d2,
                coincidence,
                singles: singles.value,
                eta: coincidence / singles.value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_pixel_basis, Layout};

    fn source_810() -> JtmaParams {
        JtmaParams::new(7.45, 151.1, 103.2).unwrap()
    }

    fn spec() -> QuadratureSpec {
        QuadratureSpec {
            order: 8,
            target_rel_tol: 1e-5,
            max_refinements: 2,
            ..Default::default()
        }
    }

    #[test]
    fn eta_rises_with_idler_pixel() {
        let p = source_810();
        let d1 = 40.0;
        let pts = heralding_sweep(d1, &[20.0, 40.0, 60.0, 80.0, 120.0, 200.0], &p, HeraldKernel::Full, &spec()).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].eta >= w[0].eta);
        }
        assert!(pts.iter().all(|h| h.eta <= 1.0));
        assert!(pts[3].eta > pts[1].eta);
    }

    #[test]
    fn sweep_agrees_with_planar_evaluation() {
        let p = source_810();
        let one = [Complex64::new(1.0, 0.0)];
        let s = make_pixel_basis(1, Layout::Hex, &p, 1.0).unwrap();
        let mut small = s.clone();
        small.pixels[0].radius = 20.0;
        let mut big = small.clone();
        big.pixels[0].radius = 30.0;
        let k = HeraldKernel::ClSubstituted;
        let singles = singles_prob(&one, &small, &p, k, &spec()).unwrap().value;
        let coinc = heralded_coincidence(&one, &one, &small, &big, &p, k, &spec()).unwrap().value;
        let sweep = heralding_sweep(40.0, &[60.0], &p, k, &spec()).unwrap()[0];
        assert!((singles / sweep.singles - 1.0).abs() < 1e-5);
        assert!((coinc / sweep.coincidence - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_sweeps() {
        let p = source_810();
        assert!(heralding_sweep(0.0, &[1.0], &p, HeraldKernel::Full, &spec()).is_err());
        assert!(heralding_sweep(1.0, &[2.0, 1.0], &p, HeraldKernel::Full, &spec()).is_err());
    }
}

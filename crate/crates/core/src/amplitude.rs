//! Two-photon amplitude integrals `int int Phi_s Phi_i G` over hologram regions.
//!
//! Slab pairs (pi-step halves) are integrated in sum/difference coordinates
//! with the slab boundaries as variable inner limits, so no discontinuity
//! falls inside a Gauss panel. Pairs involving a disk use a polar rule on the
//! disk and, for each outer node, a local rule on the partner region cut to
//! the pump window around the mirrored point.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;

use statrs::function::erf::erf;

use crate::error::Result;
use crate::hologram::{Hologram, Region};
use crate::model::{norm2, JtmaParams, Model, Vec2};
use crate::quadrature::{refine, Accum, Axis, Integral, PlanarRule, QuadratureSpec, Rule};

/// Pump-window half width in units of sigma_p: the pump factor is below e^-50 outside.
const PUMP_WINDOW: f64 = 10.0;
/// Largest polar panel in units of the window half width.
const PANEL: f64 = 0.4;

pub fn hologram_amplitude(
    phi_s: &Hologram,
    phi_i: &Hologram,
    p: &JtmaParams,
    model: &Model,
    spec: &QuadratureSpec,
) -> Result<Integral<Complex64>> {
    spec.validate()?;
    p.validate()?;
    let rm = spec.truncation(p);
    let expand = |h: &Hologram, origin: f64| -> Vec<(Complex64, Region)> {
        let mut out = Vec::new();
        for (prim, c) in h.primitives.iter().zip(&h.coefficients) {
            for (sign, reg) in prim.regions(origin) {
                out.push((c * sign * h.global_gain, reg));
            }
        }
        out
    };
    let rs = expand(phi_s, p.origin_s);
    let ri = expand(phi_i, p.origin_i);
    Ok(refine(spec, |n| {
        let mut acc = Accum::<Complex64>::zero();
        for (cs, a) in &rs {
            for (ci, b) in &ri {
                let c = cs * ci;
                let v = region_accum(a, b, p, model, rm, n);
                acc = acc.plus(Accum {
                    sum: c * v.sum,
                    mass: c.norm() * v.mass,
                });
            }
        }
        acc
    }))
}

/// `|amplitude|^2` with the relative error doubled.
pub fn coincidence_probability(
    phi_s: &Hologram,
    phi_i: &Hologram,
    p: &JtmaParams,
    model: &Model,
    spec: &QuadratureSpec,
) -> Result<Integral<f64>> {
    let a = hologram_amplitude(phi_s, phi_i, p, model, spec)?;
    Ok(Integral {
        value: a.value.norm_sqr(),
        error: 2.0 * a.error,
        converged: a.converged,
        order: a.order,
    })
}

pub(crate) fn region_accum(rs: &Region, ri: &Region, p: &JtmaParams, model: &Model, rm: f64, n: usize) -> Accum<f64> {
    match (*rs, *ri) {
        (Region::Slab { lo: ls, hi: us }, Region::Slab { lo: li, hi: ui }) => {
            slab_slab([ls, us], [li, ui], p, model, rm, n)
        }
        (Region::Disk { center: cs, radius: rs }, Region::Disk { center: ci, radius: ri }) if matches!(model, Model::Cl) => {
            disk_disk_cl(cs, rs, ci, ri, p, n)
        }
        (Region::Disk { center, radius }, other) => disk_outer(center, radius, &other, true, p, model, rm, n),
        (other, Region::Disk { center, radius }) => disk_outer(center, radius, &other, false, p, model, rm, n),
    }
}

/// Integral of the kernel over all `q_y` for fixed `(p_x, m_x)`.
struct YMarginal<'a> {
    p: &'a JtmaParams,
    model: &'a Model,
    st: f64,
    py: Rule,
    my: Rule,
    py_int: f64,
    my_int: f64,
}

impl<'a> YMarginal<'a> {
    fn new(p: &'a JtmaParams, model: &'a Model, rp: f64, rm: f64, n: usize) -> Self {
        let st = p.sigma_p_tilde();
        let sc = p.sigma_c;
        let py = Axis::symmetric(rp).with_breaks([-2.0 * st, 2.0 * st]).rule(n);
        let my = Axis::symmetric(rm).with_breaks([-2.0 * sc, 2.0 * sc]).rule(n);
        let py_int = py.integrate(|y| (-y * y / (st * st)).exp());
        let my_int = my.integrate(|y| (-y * y / (sc * sc)).exp());
        YMarginal {
            p,
            model,
            st,
            py,
            my,
            py_int,
            my_int,
        }
    }

    fn eval(&self, px: f64, mx: f64) -> f64 {
        let p = self.p;
        let sc2 = p.sigma_c * p.sigma_c;
        let gp = (-px * px / (self.st * self.st)).exp();
        match self.model {
            Model::Cl => p.amp_scale * gp * (-mx * mx / sc2).exp() * self.py_int * self.my_int,
            Model::Collected => {
                let ss2 = p.sigma_s * p.sigma_s;
                let inner = self.my.integrate(|y| {
                    let m2 = mx * mx + y * y;
                    (-m2 / sc2).exp() * crate::model::sinc(2.0 * m2 / ss2)
                });
                p.amp_scale * gp * self.py_int * inner
            }
            Model::General(_) => self.py.integrate(|py| {
                self.my.integrate(|my| self.model.kernel_pm([px, py], [mx, my], p))
            }),
        }
    }
}

/// Both photons restricted to vertical slabs `lo < q_x < hi`.
fn slab_slab(s: [f64; 2], i: [f64; 2], p: &JtmaParams, model: &Model, rm: f64, n: usize) -> Accum<f64> {
    let st = p.sigma_p_tilde();
    let rp = rm.min(8.0 * st);
    // m bounds: q_sx in s  <=>  m in (sqrt2 s0 - p, sqrt2 s1 - p)
    //           q_ix in i  <=>  m in (p - sqrt2 i1, p - sqrt2 i0)
    let down = [SQRT_2 * s[0], SQRT_2 * s[1]];
    let up = [-SQRT_2 * i[1], -SQRT_2 * i[0]];
    let mut breaks = Vec::new();
    for &a in &down {
        for &b in &up {
            breaks.push((a - b) / 2.0);
        }
        breaks.push(a - rm);
        breaks.push(a + rm);
    }
    for &b in &up {
        breaks.push(rm - b);
        breaks.push(-rm - b);
    }
    let prule = Axis::symmetric(rp).with_breaks(breaks).rule(n);
    let ym = YMarginal::new(p, model, rp, rm, n);
    let sc = p.sigma_c;
    prule.accumulate(|pp| {
        let lo = (down[0] - pp).max(pp + up[0]).max(-rm);
        let hi = (down[1] - pp).min(pp + up[1]).min(rm);
        if !(hi > lo) {
            return 0.0;
        }
        Axis::new(lo, hi)
            .with_breaks([-2.0 * sc, 2.0 * sc])
            .rule(n)
            .integrate(|m| ym.eval(pp, m))
    })
}

/// Local rule for `region` around `center`, cut to a square or annular
/// window of half width `w`.
pub(crate) fn window_rule(region: &Region, center: Vec2, w: f64, rm: f64, n: usize) -> PlanarRule {
    window_rule_paneled(region, center, w, rm, n, PANEL * w)
}

fn window_rule_paneled(region: &Region, center: Vec2, w: f64, rm: f64, n: usize, panel: f64) -> PlanarRule {
    match *region {
        Region::Slab { lo, hi } => {
            let x0 = lo.max(center[0] - w).max(-rm);
            let x1 = hi.min(center[0] + w).min(rm);
            let y0 = (center[1] - w).max(-rm);
            let y1 = (center[1] + w).min(rm);
            if x1 <= x0 || y1 <= y0 {
                return PlanarRule::default();
            }
            PlanarRule::boxed(&Axis::new(x0, x1), &Axis::new(y0, y1), n)
        }
        Region::Disk { center: c, radius } => {
            let d = [center[0] - c[0], center[1] - c[1]];
            let rho = norm2(d).sqrt();
            let r_lo = (rho - w).max(0.0);
            let r_hi = (rho + w).min(radius);
            if r_hi <= r_lo {
                return PlanarRule::default();
            }
            let half = if rho > w { (w / rho).asin() } else { PI };
            PlanarRule::sector_paneled(c, r_lo, r_hi, d[1].atan2(d[0]), half, n, panel)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn disk_outer(
    center: Vec2,
    radius: f64,
    other: &Region,
    outer_is_signal: bool,
    p: &JtmaParams,
    model: &Model,
    rm: f64,
    n: usize,
) -> Accum<f64> {
    let w = PUMP_WINDOW * p.sigma_p;
    let outer = PlanarRule::disk(center, radius, n);
    outer.accumulate(|q| {
        let inner = window_rule(other, [-q[0], -q[1]], w, rm, n);
        inner.integrate(|qq| {
            if outer_is_signal {
                model.kernel(q, qq, p)
            } else {
                model.kernel(qq, q, p)
            }
        })
    })
}

/// Gaussian cutoff for the chord rule, in units of `1/sqrt(alpha)`.
const CHORD_WINDOW: f64 = 6.0;
/// Panel length for disk pairs, in units of `1/sqrt(alpha)`.
const CHORD_PANEL: f64 = 1.5;

/// Collection-limited kernel on a disk pair. For fixed `q_s` the kernel is an
/// isotropic Gaussian in `q_i`, so the inner disk integral reduces to one
/// dimension: `int r cos(phi) exp(-alpha (r sin(phi) - delta)^2) sqrt(pi/alpha) erf(sqrt(alpha) r cos(phi)) dphi`.
fn disk_disk_cl(cs: Vec2, rs: f64, ci: Vec2, ri: f64, p: &JtmaParams, n: usize) -> Accum<f64> {
    let st = p.sigma_p_tilde();
    let u = 0.5 / (st * st);
    let v = 0.5 / (p.sigma_c * p.sigma_c);
    let alpha = u + v;
    let kappa = (u - v) / alpha;
    let pre = 4.0 * u * v / alpha;
    let sa = alpha.sqrt();
    let wg = CHORD_WINDOW / sa;
    let h = CHORD_PANEL / sa;
    let outer = window_rule_paneled(
        &Region::Disk { center: cs, radius: rs },
        [-ci[0] / kappa, -ci[1] / kappa],
        (ri + wg) / kappa,
        f64::INFINITY,
        n,
        h,
    );
    outer.accumulate(|q| {
        let q0 = [-kappa * q[0], -kappa * q[1]];
        p.amp_scale * (-pre * norm2(q)).exp() * gaussian_over_disk(ci, ri, q0, alpha, n)
    })
}

/// `int_disk exp(-alpha |q - q0|^2) d^2q` by the chord rule in `phi`, where
/// `x = r sin(phi)` runs along the line from the disk center to `q0`.
pub(crate) fn gaussian_over_disk(center: Vec2, radius: f64, q0: Vec2, alpha: f64, n: usize) -> f64 {
    let sa = alpha.sqrt();
    let wg = CHORD_WINDOW / sa;
    let h = CHORD_PANEL / sa;
    let delta = norm2([q0[0] - center[0], q0[1] - center[1]]).sqrt();
    if delta - wg >= radius {
        return 0.0;
    }
    let ri = radius;
    let f0 = ((delta - wg) / ri).max(-1.0).asin();
    let f1 = ((delta + wg) / ri).min(1.0).asin();
    let m = ((ri * (f1 - f0) / h).ceil() as usize).max(1);
    let ends: Vec<f64> = (0..=m).map(|k| f0 + (f1 - f0) * k as f64 / m as f64).collect();
    let norm = (PI / alpha).sqrt();
    Rule::composite(&ends, n).integrate(|phi| {
        let (s, c) = phi.sin_cos();
        let x = ri * s - delta;
        ri * c * (-alpha * x * x).exp() * norm * erf(sa * ri * c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn flat_holograms_give_full_mass() {
        let p = JtmaParams::cl(7.45, 103.2).unwrap();
        let st = p.sigma_p_tilde();
        let a = hologram_amplitude(&Hologram::flat(), &Hologram::flat(), &p, &Model::Cl, &spec()).unwrap();
        let exact = PI * PI * st * st * p.sigma_c * p.sigma_c;
        assert!(a.converged);
        assert_relative_eq!(a.value.re, exact, max_relative = 1e-9);
    }

    #[test]
    fn disk_pair_matches_slab_when_disks_are_large() {
        // A disk of radius 8 sigma_c is flat for practical purposes.
        let p = JtmaParams::cl(2.0, 10.0).unwrap();
        let big = Hologram::disk([0.0, 0.0], 8.0 * p.sigma_c);
        let s = QuadratureSpec { order: 8, ..spec() };
        let a = hologram_amplitude(&big, &Hologram::flat(), &p, &Model::Cl, &s).unwrap();
        let b = hologram_amplitude(&Hologram::flat(), &Hologram::flat(), &p, &Model::Cl, &s).unwrap();
        assert_relative_eq!(a.value.re, b.value.re, max_relative = 1e-6);
    }

    #[test]
    fn chord_rule_matches_planar_window() {
        let p = JtmaParams::cl(7.45, 103.2).unwrap();
        let rm = spec().truncation(&p);
        let cases = [
            ([40.0, 10.0], 12.0, [-40.0, -10.0], 12.0),
            ([40.0, 10.0], 12.0, [-60.0, -5.0], 7.0),
            ([0.0, 0.0], 30.0, [0.0, 0.0], 20.0),
        ];
        for (cs, rs, ci, ri) in cases {
            let fast = disk_disk_cl(cs, rs, ci, ri, &p, 16).sum;
            let b = Region::Disk { center: ci, radius: ri };
            let slow = disk_outer(cs, rs, &b, true, &p, &Model::Cl, rm, 24).sum;
            assert_relative_eq!(fast, slow, max_relative = 1e-6);
        }
    }
}

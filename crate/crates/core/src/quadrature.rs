//! Gauss-Legendre tensor rules with composite panels and order doubling.

use std::f64::consts::PI;
use std::collections::HashMap;
use std::ops::{Add, Mul};
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JtmaParams, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss points per panel and axis at the first level.
    pub order: usize,
    /// Per-axis half width in rad/mm; `None` picks [`choose_truncation`].
    pub truncation_radius: Option<f64>,
    pub target_rel_tol: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            order: 32,
            truncation_radius: None,
            target_rel_tol: 1e-6,
            max_refinements: 4,
        }
    }
}

impl QuadratureSpec {
    pub fn with_order(order: usize) -> Self {
        QuadratureSpec {
            order,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 8 {
            return Err(Error::Validation(format!("quadrature order must be >= 8, got {}", self.order)));
        }
        if !(self.target_rel_tol > 0.0 && self.target_rel_tol <= 1e-2) {
            return Err(Error::Validation(format!(
                "target_rel_tol must lie in (0, 1e-2], got {}",
                self.target_rel_tol
            )));
        }
        if let Some(r) = self.truncation_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Validation(format!("truncation_radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    pub fn truncation(&self, p: &JtmaParams) -> f64 {
        self.truncation_radius.unwrap_or_else(|| choose_truncation(p))
    }
}

/// Half width that leaves less than 1e-12 of the Gaussian mass outside.
pub fn choose_truncation(p: &JtmaParams) -> f64 {
    (8.0 * p.sigma_c).max(8.0 * p.sigma_p_tilde())
}

/// Scalar types the engine can accumulate.
pub trait Field: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn modulus(self) -> f64;
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Field for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Quadrature result at the finest level reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<T = f64> {
    pub value: T,
    /// Relative difference between the last two levels.
    pub error: f64,
    pub converged: bool,
    /// Points per panel of the returned value.
    pub order: usize,
}

impl<T: Field> Integral<T> {
    pub fn exact(value: T) -> Self {
        Integral {
            value,
            error: 0.0,
            converged: true,
            order: 0,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Integral<U> {
        Integral {
            value: f(self.value),
            error: self.error,
            converged: self.converged,
            order: self.order,
        }
    }
}

/// Sum and absolute mass of a weighted node set.
#[derive(Debug, Clone, Copy)]
pub struct Accum<T> {
    pub sum: T,
    pub mass: f64,
}

impl<T: Field> Accum<T> {
    pub fn zero() -> Self {
        Accum {
            sum: T::zero(),
            mass: 0.0,
        }
    }

    pub fn of(v: T) -> Self {
        Accum {
            sum: v,
            mass: v.modulus(),
        }
    }

    pub fn plus(self, o: Self) -> Self {
        Accum {
            sum: self.sum + o.sum,
            mass: self.mass + o.mass,
        }
    }

    pub fn scale(self, w: f64) -> Self {
        Accum {
            sum: self.sum * w,
            mass: self.mass * w.abs(),
        }
    }
}

pub fn pairwise_sum<T: Field>(v: &[Accum<T>]) -> Accum<T> {
    match v.len() {
        0 => Accum::zero(),
        1 => v[0],
        n if n <= 8 => v.iter().fold(Accum::zero(), |a, &b| a.plus(b)),
        n => {
            let (l, r) = v.split_at(n / 2);
            pairwise_sum(l).plus(pairwise_sum(r))
        }
    }
}

/// Runs `eval(order)` at doubling orders until two consecutive levels agree.
pub fn refine<T: Field>(spec: &QuadratureSpec, mut eval: impl FnMut(usize) -> Accum<T>) -> Integral<T> {
    let mut order = spec.order;
    let mut coarse = eval(order);
    let mut last = Integral {
        value: coarse.sum,
        error: f64::INFINITY,
        converged: false,
        order,
    };
    for _ in 0..=spec.max_refinements {
        let fine = eval(2 * order);
        let diff = (fine.sum + coarse.sum * -1.0).modulus();
        let denom = fine.sum.modulus().max(1e-10 * fine.mass).max(f64::MIN_POSITIVE);
        let error = diff / denom;
        last = Integral {
            value: fine.sum,
            error,
            converged: error <= spec.target_rel_tol,
            order: 2 * order,
        };
        if last.converged {
            break;
        }
        order *= 2;
        coarse = fine;
    }
    last
}

type GlRule = Arc<(Vec<f64>, Vec<f64>)>;

fn cached_gauss_legendre(n: usize) -> GlRule {
    static CACHE: OnceLock<RwLock<HashMap<usize, GlRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.read().expect("rule cache").get(&n) {
        return r.clone();
    }
    let r = Arc::new(gauss_legendre(n));
    cache.write().expect("rule cache").insert(n, r.clone());
    r
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// One-dimensional weighted node set.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn gauss(lo: f64, hi: f64, n: usize) -> Rule {
        let gl = cached_gauss_legendre(n);
        let (x, w) = (&gl.0, &gl.1);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        Rule {
            nodes: x.iter().map(|&t| mid + half * t).collect(),
            weights: w.iter().map(|&v| v * half).collect(),
        }
    }

    /// Composite rule over consecutive panels `[pts[k], pts[k+1]]`.
    pub fn composite(pts: &[f64], n: usize) -> Rule {
        let gl = cached_gauss_legendre(n);
        let (x, w) = (&gl.0, &gl.1);
        let mut r = Rule::default();
        for pair in pts.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (t, v) in x.iter().zip(w) {
                r.nodes.push(mid + half * t);
                r.weights.push(v * half);
            }
        }
        r
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn accumulate<T: Field>(&self, mut f: impl FnMut(f64) -> T) -> Accum<T> {
        let terms: Vec<Accum<T>> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| Accum::of(f(x)).scale(w))
            .collect();
        pairwise_sum(&terms)
    }

    pub fn integrate(&self, f: impl FnMut(f64) -> f64) -> f64 {
        self.accumulate(f).sum
    }
}

/// Interval with interior panel breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub breaks: Vec<f64>,
}

impl Axis {
    pub fn new(lo: f64, hi: f64) -> Axis {
        Axis {
            lo,
            hi,
            breaks: Vec::new(),
        }
    }

    pub fn symmetric(r: f64) -> Axis {
        Axis::new(-r, r)
    }

    pub fn with_breaks(mut self, b: impl IntoIterator<Item = f64>) -> Axis {
        self.breaks.extend(b);
        self
    }

    /// Sorted panel endpoints, breakpoints clipped to the open interval.
    pub fn points(&self) -> Vec<f64> {
        let mut pts = vec![self.lo];
        let mut inner: Vec<f64> = self
            .breaks
            .iter()
            .copied()
            .filter(|&b| b.is_finite() && b > self.lo && b < self.hi)
            .collect();
        inner.sort_by(f64::total_cmp);
        inner.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        pts.extend(inner);
        pts.push(self.hi);
        pts
    }

    pub fn rule(&self, order: usize) -> Rule {
        Rule::composite(&self.points(), order)
    }
}

fn tensor<T: Field, F: Fn(&[f64]) -> T + Sync>(f: &F, rules: &[Rule], x: &mut [f64], level: usize) -> Accum<T> {
    let rule = &rules[level];
    let terms: Vec<Accum<T>> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&xi, &wi)| {
            x[level] = xi;
            let v = if level + 1 == rules.len() {
                Accum::of(f(x))
            } else {
                tensor(f, rules, x, level + 1)
            };
            v.scale(wi)
        })
        .collect();
    pairwise_sum(&terms)
}

fn tensor_par<T: Field, F: Fn(&[f64]) -> T + Sync>(f: &F, rules: &[Rule]) -> Accum<T> {
    let n = rules.len();
    let terms: Vec<Accum<T>> = rules[0]
        .nodes
        .par_iter()
        .zip(rules[0].weights.par_iter())
        .map(|(&x0, &w0)| {
            let mut x = vec![0.0; n];
            x[0] = x0;
            let v = if n == 1 {
                Accum::of(f(&x))
            } else {
                tensor(f, rules, &mut x, 1)
            };
            v.scale(w0)
        })
        .collect();
    pairwise_sum(&terms)
}

/// Tensor Gauss-Legendre integral of `f` over a box in 1, 2 or 4 dimensions.
pub fn integrate_nd<T, F>(f: F, domain: &[Axis], spec: &QuadratureSpec) -> Result<Integral<T>>
where
    T: Field,
    F: Fn(&[f64]) -> T + Sync,
{
    spec.validate()?;
    if !matches!(domain.len(), 1 | 2 | 4) {
        return Err(Error::Validation(format!(
            "integrate_nd supports 1, 2 or 4 dimensions, got {}",
            domain.len()
        )));
    }
    for ax in domain {
        if !(ax.lo.is_finite() && ax.hi.is_finite() && ax.lo <= ax.hi) {
            return Err(Error::Validation(format!("bad interval [{}, {}]", ax.lo, ax.hi)));
        }
    }
    Ok(refine(spec, |order| {
        let rules: Vec<Rule> = domain.iter().map(|a| a.rule(order)).collect();
        tensor_par(&f, &rules)
    }))
}

/// Weighted point set in the plane.
#[derive(Debug, Clone, Default)]
pub struct PlanarRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl PlanarRule {
    /// Polar rule on a disk: Gauss in radius (per panel), `2n` equal angles.
    pub fn disk(center: Vec2, radius: f64, n: usize) -> PlanarRule {
        Self::disk_with_breaks(center, radius, &[], n)
    }

    pub fn disk_with_breaks(center: Vec2, radius: f64, breaks: &[f64], n: usize) -> PlanarRule {
        let radial = Axis::new(0.0, radius).with_breaks(breaks.iter().copied()).rule(n);
        let nt = 2 * n;
        let dt = 2.0 * PI / nt as f64;
        let mut out = PlanarRule::default();
        for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
            for k in 0..nt {
                let t = (k as f64 + 0.5) * dt;
                out.points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                out.weights.push(wr * r * dt);
            }
        }
        out
    }

    /// Polar sector about `center`: radii in `[r_lo, r_hi]`, angles `theta0 +- half_angle`.
    pub fn sector(center: Vec2, r_lo: f64, r_hi: f64, theta0: f64, half_angle: f64, n: usize) -> PlanarRule {
        Self::sector_paneled(center, r_lo, r_hi, theta0, half_angle, n, f64::INFINITY)
    }

    /// [`PlanarRule::sector`] split into panels no longer than `max_panel`
    /// radially and along the outer arc.
    pub fn sector_paneled(
        center: Vec2,
        r_lo: f64,
        r_hi: f64,
        theta0: f64,
        half_angle: f64,
        n: usize,
        max_panel: f64,
    ) -> PlanarRule {
        let split = |len: f64| -> usize {
            if max_panel.is_finite() && max_panel > 0.0 {
                ((len / max_panel).ceil() as usize).max(1)
            } else {
                1
            }
        };
        let ends = |lo: f64, hi: f64, m: usize| -> Vec<f64> {
            (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect()
        };
        let radial = Rule::composite(&ends(r_lo, r_hi, split(r_hi - r_lo)), n);
        let mut out = PlanarRule::default();
        if half_angle >= PI {
            // Periodic: the midpoint rule is spectrally accurate.
            let nt = 2 * n * split(2.0 * PI * r_hi);
            let dt = 2.0 * PI / nt as f64;
            for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
                for k in 0..nt {
                    let t = theta0 + (k as f64 + 0.5) * dt;
                    out.points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                    out.weights.push(wr * r * dt);
                }
            }
            return out;
        }
        let mt = split(2.0 * half_angle * r_hi);
        let angular = Rule::composite(&ends(theta0 - half_angle, theta0 + half_angle, mt), n);
        for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
            for (&t, &wt) in angular.nodes.iter().zip(&angular.weights) {
                out.points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                out.weights.push(wr * wt * r);
            }
        }
        out
    }

    /// Tensor rule on a box.
    pub fn boxed(x: &Axis, y: &Axis, n: usize) -> PlanarRule {
        let rx = x.rule(n);
        let ry = y.rule(n);
        let mut out = PlanarRule::default();
        for (&xi, &wx) in rx.nodes.iter().zip(&rx.weights) {
            for (&yi, &wy) in ry.nodes.iter().zip(&ry.weights) {
                out.points.push([xi, yi]);
                out.weights.push(wx * wy);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn accumulate<T: Field>(&self, mut f: impl FnMut(Vec2) -> T) -> Accum<T> {
        let terms: Vec<Accum<T>> = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| Accum::of(f(q)).scale(w))
            .collect();
        pairwise_sum(&terms)
    }

    pub fn integrate(&self, f: impl FnMut(Vec2) -> f64) -> f64 {
        self.accumulate(f).sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 8, 17, 32, 64] {
            let (x, w) = gauss_legendre(n);
            let sw: f64 = w.iter().sum();
            assert_relative_eq!(sw, 2.0, max_relative = 1e-14);
            let deg = 2 * n - 1;
            let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((s - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn gaussian_2d() {
        let spec = QuadratureSpec::default();
        let r = integrate_nd(|x: &[f64]| (-x[0] * x[0] - x[1] * x[1]).exp(), &[Axis::symmetric(8.0), Axis::symmetric(8.0)], &spec).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.value, PI, max_relative = 1e-10);
    }

    #[test]
    fn even_integrand_half_interval() {
        let spec = QuadratureSpec::default();
        let f = |x: &[f64]| crate::model::sinc(x[0] * x[0]);
        let full = integrate_nd(f, &[Axis::symmetric(3.0)], &spec).unwrap();
        let half = integrate_nd(f, &[Axis::new(0.0, 3.0)], &spec).unwrap();
        assert_relative_eq!(full.value, 2.0 * half.value, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let f = |x: &[f64]| x[0];
        let mut spec = QuadratureSpec::with_order(4);
        assert!(integrate_nd(f, &[Axis::symmetric(1.0)], &spec).is_err());
        spec.order = 16;
        assert!(integrate_nd(f, &vec![Axis::symmetric(1.0); 3], &spec).is_err());
        spec.target_rel_tol = 0.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn truncation_rule() {
        let p = JtmaParams::new(7.45, 151.1, 103.2).unwrap();
        assert!(choose_truncation(&p) >= 825.6 - 1e-9);
        let tail = 1.0 - statrs::function::erf::erf(8.0 / 2f64.sqrt()).powi(2);
        assert!(tail < 1e-12);
    }

    #[test]
    fn disk_rule_area_and_moment() {
        let d = PlanarRule::disk([3.0, -1.0], 2.0, 8);
        let area: f64 = d.weights.iter().sum();
        assert_relative_eq!(area, 4.0 * PI, max_relative = 1e-13);
        let m = d.integrate(|q| (q[0] - 3.0).powi(2));
        assert_relative_eq!(m, PI * 16.0 / 4.0, max_relative = 1e-12);
        let s = PlanarRule::sector([0.0, 0.0], 1.0, 2.0, 0.3, 0.5, 16);
        let a: f64 = s.weights.iter().sum();
        assert_relative_eq!(a, 0.5 * (4.0 - 1.0), max_relative = 1e-13);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let spec = QuadratureSpec {
            order: 8,
            max_refinements: 0,
            target_rel_tol: 1e-12,
            truncation_radius: None,
        };
        let r = integrate_nd(|x: &[f64]| (40.0 * x[0]).cos().abs(), &[Axis::new(0.0, 3.0)], &spec).unwrap();
        assert!(!r.converged);
        assert!(r.error > 1e-12);
    }
}

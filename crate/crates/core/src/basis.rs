//! Disjoint-disk pixel bases, the post-selected mode matrix, and mask optimization.
//!
//! Pixel centers are in the hologram frame, so the optic axis sits at
//! `(origin_s, 0)` for the signal and `(origin_i, 0)` for the idler. Idler
//! bases are point mirrors of the signal basis through the idler axis.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitude::region_accum;
use crate::error::{Error, Result};
use crate::hologram::{Hologram, Primitive, Region};
use crate::metrics::{EntanglementMetrics, ModeMatrix};
use crate::model::{norm2, JtmaParams, Model, Vec2};
use crate::quadrature::{choose_truncation, PlanarRule, QuadratureSpec};

/// Pixel pairs whose mirrored gap exceeds this many sigma_p contribute below e^-70.
const SKIP_GAP: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Hex,
    Rings,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Hex => "hex",
            Layout::Rings => "rings",
        }
    }
}

impl FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hex" => Ok(Layout::Hex),
            "rings" => Ok(Layout::Rings),
            _ => Err(Error::Validation(format!("unknown layout {s:?}; expected hex or rings"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub center: Vec2,
    pub radius: f64,
}

impl Pixel {
    fn gap(&self, other: &Pixel) -> f64 {
        dist(self.center, other.center) - self.radius - other.radius
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    norm2([a[0] - b[0], a[1] - b[1]]).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelBasis {
    pub pixels: Vec<Pixel>,
    pub layout: Layout,
    /// Radius of the allowed disk about the optic axis.
    pub max_radius: f64,
    /// Optic-axis position in the hologram frame.
    pub axis: Vec2,
}

impl PixelBasis {
    pub fn d(&self) -> usize {
        self.pixels.len()
    }

    /// Pairwise disjoint (strictly positive gaps) and inside the allowed disk.
    pub fn validate(&self) -> Result<()> {
        if self.pixels.is_empty() {
            return Err(Error::Validation("basis has no pixels".into()));
        }
        for (a, pa) in self.pixels.iter().enumerate() {
            if !(pa.radius > 0.0) || !pa.radius.is_finite() {
                return Err(Error::Validation(format!("pixel {a} has radius {}", pa.radius)));
            }
            let reach = dist(pa.center, self.axis) + pa.radius;
            if reach > self.max_radius * (1.0 + 1e-9) {
                return Err(Error::Validation(format!(
                    "pixel {a} reaches {reach:.6} beyond max radius {:.6}",
                    self.max_radius
                )));
            }
            for (b, pb) in self.pixels.iter().enumerate().skip(a + 1) {
                if !(pa.gap(pb) > 0.0) {
                    return Err(Error::Validation(format!("pixels {a} and {b} are not disjoint")));
                }
            }
        }
        Ok(())
    }

    pub fn min_gap(&self) -> f64 {
        let mut g = f64::INFINITY;
        for (a, pa) in self.pixels.iter().enumerate() {
            for pb in &self.pixels[a + 1..] {
                g = g.min(pa.gap(pb));
            }
        }
        g
    }

    /// Point mirror through the idler axis `(origin_i, 0)`.
    pub fn mirrored(&self, p: &JtmaParams) -> PixelBasis {
        let ai = [p.origin_i, 0.0];
        PixelBasis {
            pixels: self
                .pixels
                .iter()
                .map(|px| Pixel {
                    center: [ai[0] - (px.center[0] - self.axis[0]), ai[1] - (px.center[1] - self.axis[1])],
                    radius: px.radius,
                })
                .collect(),
            layout: self.layout,
            max_radius: self.max_radius,
            axis: ai,
        }
    }

    pub fn hologram(&self, a: usize) -> Hologram {
        Hologram::disk(self.pixels[a].center, self.pixels[a].radius)
    }
}

/// Allowed disk `alpha sigma_c` and minimum edge gap `spacing_factor sigma_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignGeometry {
    pub alpha: f64,
    pub spacing_factor: f64,
}

impl Default for DesignGeometry {
    fn default() -> Self {
        DesignGeometry {
            alpha: 1.5,
            spacing_factor: 1.0,
        }
    }
}

/// Pixel centers in units of the pitch, grouped into shells of equal distance.
#[derive(Debug, Clone)]
struct Lattice {
    unit: Vec<Vec2>,
    shell: Vec<usize>,
    n_shells: usize,
    rho_max: f64,
}

impl Lattice {
    fn new(d: usize, layout: Layout) -> Lattice {
        let unit = match layout {
            Layout::Hex => hex_points(d),
            Layout::Rings => ring_points(d),
        };
        let mut shell = Vec::with_capacity(d);
        let mut radii: Vec<f64> = Vec::new();
        for u in &unit {
            let r = norm2(*u).sqrt();
            let k = match radii.iter().position(|&x| (x - r).abs() < 1e-9) {
                Some(k) => k,
                None => {
                    radii.push(r);
                    radii.len() - 1
                }
            };
            shell.push(k);
        }
        let rho_max = radii.iter().copied().fold(0.0, f64::max);
        Lattice {
            unit,
            shell,
            n_shells: radii.len(),
            rho_max,
        }
    }

    fn shell_rho(&self, k: usize) -> f64 {
        let a = self.shell.iter().position(|&s| s == k).unwrap();
        norm2(self.unit[a]).sqrt()
    }

    fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.unit.len()).filter(move |&a| self.shell[a] == k)
    }
}

/// The `d` triangular-lattice points nearest one of three symmetric centers
/// (vertex, edge midpoint, triangle centroid), preferring closed shells and
/// then the smallest outer distance.
fn hex_points(d: usize) -> Vec<Vec2> {
    let h = 3f64.sqrt() / 2.0;
    let centers = [[0.0, 0.0], [0.5, 0.0], [0.5, h / 3.0]];
    let k = ((d as f64).sqrt() as i64) + 3;
    let mut best: Option<(bool, f64, Vec<Vec2>)> = None;
    for c in centers {
        let mut pts: Vec<(f64, f64, Vec2)> = Vec::new();
        for i in -k..=k {
            for j in -k..=k {
                let x = i as f64 + 0.5 * j as f64 - c[0];
                let y = h * j as f64 - c[1];
                let r = (x * x + y * y).sqrt();
                let t = y.atan2(x).rem_euclid(2.0 * PI);
                pts.push((r, t, [x, y]));
            }
        }
        pts.sort_by(|a, b| {
            let dr = a.0 - b.0;
            if dr.abs() < 1e-9 {
                a.1.total_cmp(&b.1)
            } else {
                dr.total_cmp(&0.0)
            }
        });
        let closed = pts.len() > d && pts[d].0 - pts[d - 1].0 > 1e-9;
        let rho = pts[d - 1].0;
        let better = match &best {
            None => true,
            Some((bc, br, _)) => (closed && !bc) || (closed == *bc && rho < br - 1e-9),
        };
        if better {
            best = Some((closed, rho, pts[..d].iter().map(|p| p.2).collect()));
        }
    }
    best.unwrap().2
}

/// Center pixel plus rings of `6k` at radius `k`; the last ring is spread evenly.
fn ring_points(d: usize) -> Vec<Vec2> {
    let mut out = vec![[0.0, 0.0]];
    let mut k = 1;
    while out.len() < d {
        let m = (6 * k).min(d - out.len());
        for j in 0..m {
            let t = 2.0 * PI * j as f64 / m as f64;
            out.push([k as f64 * t.cos(), k as f64 * t.sin()]);
        }
        k += 1;
    }
    out.truncate(d);
    out
}

/// Concrete geometry: lattice, pitch and one radius per shell.
#[derive(Debug, Clone)]
struct Geometry<'a> {
    lat: &'a Lattice,
    pitch: f64,
    radii: Vec<f64>,
}

impl Geometry<'_> {
    fn center(&self, a: usize) -> Vec2 {
        [self.lat.unit[a][0] * self.pitch, self.lat.unit[a][1] * self.pitch]
    }

    fn radius(&self, a: usize) -> f64 {
        self.radii[self.lat.shell[a]]
    }

    /// Largest radius for shell `k` with the others held, honoring `gap` and `big_r`.
    fn max_radius(&self, k: usize, gap: f64, big_r: f64) -> f64 {
        let mut r = f64::INFINITY;
        for a in self.lat.members(k) {
            let ca = self.center(a);
            r = r.min(big_r - norm2(ca).sqrt());
            for b in 0..self.lat.unit.len() {
                if b == a {
                    continue;
                }
                let dd = dist(ca, self.center(b));
                r = r.min(if self.lat.shell[b] == k {
                    (dd - gap) / 2.0
                } else {
                    dd - gap - self.radius(b)
                });
            }
        }
        r
    }

    fn feasible(&self, gap: f64, big_r: f64) -> bool {
        let d = self.lat.unit.len();
        (0..d).all(|a| {
            let ra = self.radius(a);
            ra > 0.0
                && norm2(self.center(a)).sqrt() + ra <= big_r * (1.0 + 1e-12)
                && (a + 1..d).all(|b| dist(self.center(a), self.center(b)) - ra - self.radius(b) >= gap * (1.0 - 1e-12))
        })
    }

    fn basis(&self, layout: Layout, big_r: f64, axis: Vec2) -> PixelBasis {
        PixelBasis {
            pixels: (0..self.lat.unit.len())
                .map(|a| {
                    let c = self.center(a);
                    Pixel {
                        center: [axis[0] + c[0], axis[1] + c[1]],
                        radius: self.radius(a),
                    }
                })
                .collect(),
            layout,
            max_radius: big_r,
            axis,
        }
    }
}

fn check_design_inputs(d: usize, p: &JtmaParams, g: &DesignGeometry) -> Result<(f64, f64)> {
    p.validate()?;
    if d == 0 {
        return Err(Error::Validation("d must be >= 1".into()));
    }
    if !(g.alpha > 0.0) {
        return Err(Error::Validation(format!("alpha must be > 0, got {}", g.alpha)));
    }
    let gap = g.spacing_factor * p.sigma_p;
    if d > 1 && !(gap > 0.0) {
        return Err(Error::Validation(format!(
            "spacing_factor {} leaves touching pixels; disjoint supports need a positive gap",
            g.spacing_factor
        )));
    }
    Ok((g.alpha * p.sigma_c, gap))
}

/// Equal-radius pixels as large as the allowed disk and the gap permit.
pub fn make_pixel_basis(d: usize, layout: Layout, p: &JtmaParams, spacing_factor: f64) -> Result<PixelBasis> {
    make_pixel_basis_with(
        d,
        layout,
        p,
        &DesignGeometry {
            spacing_factor,
            ..Default::default()
        },
    )
}

pub fn make_pixel_basis_with(d: usize, layout: Layout, p: &JtmaParams, g: &DesignGeometry) -> Result<PixelBasis> {
    let (big_r, gap) = check_design_inputs(d, p, g)?;
    let lat = Lattice::new(d, layout);
    let geo = uniform_geometry(&lat, big_r, gap)?;
    let b = geo.basis(layout, big_r, [p.origin_s, 0.0]);
    b.validate()?;
    Ok(b)
}

fn uniform_geometry(lat: &Lattice, big_r: f64, gap: f64) -> Result<Geometry<'_>> {
    let rm = lat.rho_max;
    let r = (big_r - rm * gap) / (2.0 * rm + 1.0);
    if !(r > 0.0) {
        return Err(Error::Packing(format!(
            "{} pixels need outer distance {:.3} pitches; the gap {:.4} rad/mm alone exceeds the allowed radius {:.4} rad/mm",
            lat.unit.len(),
            rm,
            gap,
            big_r
        )));
    }
    let geo = Geometry {
        lat,
        pitch: 2.0 * r + gap,
        radii: vec![r; lat.n_shells],
    };
    if !geo.feasible(gap, big_r) {
        return Err(Error::Packing(format!("{} pixels do not fit at gap {gap:.4} rad/mm", lat.unit.len())));
    }
    Ok(geo)
}

/// Normalized collection mode `sqrt(2/pi)/sigma_c exp(-|q|^2/sigma_c^2)`.
pub fn collection_mode(q: Vec2, sigma_c: f64) -> f64 {
    (2.0 / PI).sqrt() / sigma_c * (-norm2(q) / (sigma_c * sigma_c)).exp()
}

fn mode_overlap(px: &Pixel, axis: Vec2, sigma_c: f64) -> f64 {
    let c = [px.center[0] - axis[0], px.center[1] - axis[1]];
    PlanarRule::disk(c, px.radius, 24).integrate(|q| collection_mode(q, sigma_c))
}

/// `N^a = 1 / |int Phi^a C|^2`.
pub fn basis_norms(basis: &PixelBasis, sigma_c: f64) -> Vec<f64> {
    basis
        .pixels
        .iter()
        .map(|px| 1.0 / mode_overlap(px, basis.axis, sigma_c).powi(2))
        .collect()
}

/// Gram matrix of the measurement modes `Phi^a C`, scaled to a unit diagonal.
pub fn gram_matrix(basis: &PixelBasis, sigma_c: f64) -> DMatrix<f64> {
    let d = basis.d();
    let c2 = |q: Vec2| collection_mode(q, sigma_c).powi(2);
    let rel = |px: &Pixel| [px.center[0] - basis.axis[0], px.center[1] - basis.axis[1]];
    let diag: Vec<f64> = basis
        .pixels
        .iter()
        .map(|px| PlanarRule::disk(rel(px), px.radius, 24).integrate(c2))
        .collect();
    DMatrix::from_fn(d, d, |a, b| {
        if a == b {
            return 1.0;
        }
        let (pa, pb) = (&basis.pixels[a], &basis.pixels[b]);
        if pa.gap(pb) > 0.0 {
            return 0.0;
        }
        let cb = rel(pb);
        let v = PlanarRule::disk(rel(pa), pa.radius, 24).integrate(|q| {
            if norm2([q[0] - cb[0], q[1] - cb[1]]) <= pb.radius * pb.radius {
                c2(q)
            } else {
                0.0
            }
        });
        v / (diag[a] * diag[b]).sqrt()
    })
}

fn exchange_symmetric(model: &Model) -> bool {
    match model {
        Model::General(k) => (k.c_s - k.c_i).abs() < 1e-15,
        _ => true,
    }
}

/// One `T_ab` at a fixed order, in the optic-axis frame.
fn pair_value(ps: &Pixel, pi: &Pixel, p: &JtmaParams, model: &Model, n: usize) -> f64 {
    let rs = Region::Disk {
        center: ps.center,
        radius: ps.radius,
    };
    let ri = Region::Disk {
        center: pi.center,
        radius: pi.radius,
    };
    region_accum(&rs, &ri, p, model, choose_truncation(p), n).sum
}

fn to_axis_frame(b: &PixelBasis, origin: f64) -> Vec<Pixel> {
    b.pixels
        .iter()
        .map(|px| Pixel {
            center: [px.center[0] - origin, px.center[1]],
            radius: px.radius,
        })
        .collect()
}

fn skip_pair(ps: &Pixel, pi: &Pixel, sigma_p: f64) -> bool {
    let mirrored = Pixel {
        center: [-pi.center[0], -pi.center[1]],
        radius: pi.radius,
    };
    ps.gap(&mirrored) > SKIP_GAP * sigma_p
}

/// Quadrature defaults for pixel pairs: order 8 checked against 16.
pub fn basis_quadrature() -> QuadratureSpec {
    QuadratureSpec {
        order: 8,
        target_rel_tol: 1e-4,
        max_refinements: 1,
        ..Default::default()
    }
}

/// `T_ab = int int Phi_s^a Phi_i^b G`, with errors relative to the largest `|T_aa|`.
pub fn compute_t(
    basis_s: &PixelBasis,
    basis_i: &PixelBasis,
    p: &JtmaParams,
    model: &Model,
    spec: &QuadratureSpec,
) -> Result<ModeMatrix> {
    p.validate()?;
    spec.validate()?;
    basis_s.validate()?;
    basis_i.validate()?;
    if basis_s.d() != basis_i.d() {
        return Err(Error::Validation(format!(
            "signal basis has {} modes, idler basis {}",
            basis_s.d(),
            basis_i.d()
        )));
    }
    let d = basis_s.d();
    let ss = to_axis_frame(basis_s, p.origin_s);
    let si = to_axis_frame(basis_i, p.origin_i);
    let sym = exchange_symmetric(model) && p.origin_s == p.origin_i && mirror_pair(&ss, &si);
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (0..d).map(move |b| (a, b)))
        .filter(|&(a, b)| !(sym && b < a) && !skip_pair(&ss[a], &si[b], p.sigma_p))
        .collect();
    let n = spec.order;
    let vals: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let coarse = pair_value(&ss[a], &si[b], p, model, n);
            if spec.max_refinements == 0 {
                return (coarse, 0.0);
            }
            let fine = pair_value(&ss[a], &si[b], p, model, 2 * n);
            (fine, (fine - coarse).abs())
        })
        .collect();
    let mut t = DMatrix::<Complex64>::zeros(d, d);
    let mut abs_err = 0.0f64;
    for (&(a, b), &(v, e)) in pairs.iter().zip(&vals) {
        t[(a, b)] = Complex64::new(v, 0.0);
        if sym {
            t[(b, a)] = Complex64::new(v, 0.0);
        }
        abs_err = abs_err.max(e);
    }
    let scale = (0..d).map(|a| t[(a, a)].norm()).fold(0.0, f64::max);
    let max_error = if scale > 0.0 { abs_err / scale } else { f64::INFINITY };
    Ok(ModeMatrix {
        entries: t,
        norms_s: basis_norms(basis_s, p.sigma_c),
        norms_i: basis_norms(basis_i, p.sigma_c),
        max_error,
        converged: spec.max_refinements == 0 || max_error <= spec.target_rel_tol,
    })
}

/// Idler pixels are the point mirrors of the signal pixels, index for index.
fn mirror_pair(ss: &[Pixel], si: &[Pixel]) -> bool {
    ss.iter().zip(si).all(|(a, b)| {
        (a.center[0] + b.center[0]).abs() < 1e-12
            && (a.center[1] + b.center[1]).abs() < 1e-12
            && a.radius == b.radius
    })
}

/// `Phi^v = A^v sum_a v_a Phi^a` with `A^v = 1 / max_a |v_a|`.
pub fn superposition_hologram(v: &[Complex64], basis: &PixelBasis) -> Result<Hologram> {
    check_unit(v, basis.d())?;
    let vmax = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Hologram::new(
        basis
            .pixels
            .iter()
            .map(|px| Primitive::Disk {
                center: px.center,
                radius: px.radius,
            })
            .collect(),
        v.to_vec(),
        1.0 / vmax,
    )
}

fn check_unit(v: &[Complex64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::Validation(format!("vector has {} entries for a {d}-mode basis", v.len())));
    }
    let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if !(n2 > 0.0) {
        return Err(Error::Validation("zero vector".into()));
    }
    if (n2 - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("vector norm^2 is {n2}, expected 1")));
    }
    Ok(())
}

/// `(A_s A_i)^2 |sum_ab v_s[a] v_i[b] T_ab|^2`. Hologram coefficients enter
/// unconjugated, as they multiply the field.
pub fn projective_stats(v_s: &[Complex64], v_i: &[Complex64], t: &ModeMatrix) -> Result<f64> {
    let d = t.dim();
    check_unit(v_s, d)?;
    check_unit(v_i, d)?;
    let gain = |v: &[Complex64]| 1.0 / v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut amp = Complex64::new(0.0, 0.0);
    for (a, xs) in v_s.iter().enumerate() {
        for (b, xi) in v_i.iter().enumerate() {
            amp += xs * xi * t.entries[(a, b)];
        }
    }
    Ok((gain(v_s) * gain(v_i)).powi(2) * amp.norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub layout: Layout,
    pub geometry: DesignGeometry,
    /// Bound on `max_{a != b} |T_ab| / min_a |T_aa|`.
    pub crosstalk_cap: f64,
    pub model: Model,
    /// Quadrature order for objective evaluations.
    pub order: usize,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            layout: Layout::Hex,
            geometry: DesignGeometry::default(),
            crosstalk_cap: 0.01,
            model: Model::Cl,
            order: 8,
            max_sweeps: 4,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub basis_s: PixelBasis,
    pub basis_i: PixelBasis,
    pub t: ModeMatrix,
    pub metrics: EntanglementMetrics,
    pub crosstalk: f64,
    /// Coefficient of variation of `|T_aa|^2`.
    pub diagonal_spread: f64,
    pub objective: f64,
    pub feasible: bool,
    /// Fidelity after each accepted step, starting from the equalized mask.
    pub fidelity_history: Vec<f64>,
}

/// Before/after pair from [`optimize_basis`].
#[derive(Debug, Clone)]
pub struct DesignRun {
    pub uniform: Design,
    pub optimized: Design,
}

struct Evaluator<'a> {
    lat: &'a Lattice,
    p: &'a JtmaParams,
    opts: &'a OptimizeOptions,
    big_r: f64,
    gap: f64,
}

#[derive(Debug, Clone)]
struct Eval {
    pitch: f64,
    extra_gap: f64,
    radii: Vec<f64>,
    objective: f64,
    fidelity: f64,
    crosstalk: f64,
    spread: f64,
}

fn cv2(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    v / (m * m)
}

impl Evaluator<'_> {
    fn diag(&self, rho: f64, r: f64) -> f64 {
        let px = Pixel {
            center: [rho, 0.0],
            radius: r,
        };
        let mirror = Pixel {
            center: [-rho, 0.0],
            radius: r,
        };
        pair_value(&px, &mirror, &self.axis_params(), &self.opts.model, self.opts.order)
    }

    fn axis_params(&self) -> JtmaParams {
        self.p.with_origins(0.0, 0.0)
    }

    /// Shell radii giving equal diagonals at the largest common value.
    fn equalize(&self, pitch: f64, gap: f64) -> Option<Vec<f64>> {
        let k = self.lat.n_shells;
        let mut geo = Geometry {
            lat: self.lat,
            pitch,
            radii: vec![((pitch - gap) / 2.0).max(0.0); k],
        };
        for s in 0..k {
            geo.radii[s] = geo.radii[s].min(self.big_r - geo.lat.shell_rho(s) * pitch);
        }
        if geo.radii.iter().any(|&r| !(r > 0.0)) {
            return None;
        }
        let rhos: Vec<f64> = (0..k).map(|s| self.lat.shell_rho(s) * pitch).collect();
        for _ in 0..4 {
            let rmax: Vec<f64> = (0..k).map(|s| geo.max_radius(s, gap, self.big_r)).collect();
            if rmax.iter().any(|&r| !(r > 0.0)) {
                return None;
            }
            let dmax: Vec<f64> = (0..k).map(|s| self.diag(rhos[s], rmax[s])).collect();
            let target = dmax.iter().copied().fold(f64::INFINITY, f64::min);
            let mut next = rmax.clone();
            for s in 0..k {
                if dmax[s] > target * (1.0 + 1e-9) {
                    next[s] = illinois(|r| self.diag(rhos[s], r) - target, 0.0, -target, rmax[s], dmax[s] - target, 1e-7 * rmax[s]);
                }
            }
            let moved = next.iter().zip(&geo.radii).any(|(a, b)| (a - b).abs() > 1e-9 * b.max(1.0));
            geo.radii = next;
            if !moved {
                break;
            }
        }
        geo.feasible(gap, self.big_r).then_some(geo.radii)
    }

    fn entries(&self, geo: &Geometry) -> DMatrix<Complex64> {
        let d = self.lat.unit.len();
        let px: Vec<Pixel> = (0..d)
            .map(|a| Pixel {
                center: geo.center(a),
                radius: geo.radius(a),
            })
            .collect();
        let mir: Vec<Pixel> = px
            .iter()
            .map(|x| Pixel {
                center: [-x.center[0], -x.center[1]],
                radius: x.radius,
            })
            .collect();
        let sym = exchange_symmetric(&self.opts.model);
        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|a| (0..d).map(move |b| (a, b)))
            .filter(|&(a, b)| !(sym && b < a) && !skip_pair(&px[a], &mir[b], self.p.sigma_p))
            .collect();
        let pp = self.axis_params();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, b)| pair_value(&px[a], &mir[b], &pp, &self.opts.model, self.opts.order))
            .collect();
        let mut t = DMatrix::zeros(d, d);
        for (&(a, b), &v) in pairs.iter().zip(&vals) {
            t[(a, b)] = Complex64::new(v, 0.0);
            if sym {
                t[(b, a)] = Complex64::new(v, 0.0);
            }
        }
        t
    }

    fn score(&self, pitch: f64, extra_gap: f64, radii: Vec<f64>) -> Eval {
        let geo = Geometry {
            lat: self.lat,
            pitch,
            radii,
        };
        let t = self.entries(&geo);
        let mm = ModeMatrix::from_entries(t);
        let diag2 = mm.diagonal_abs2();
        let spread = cv2(&diag2).sqrt();
        let crosstalk = mm.crosstalk();
        let over = ((crosstalk - self.opts.crosstalk_cap) / self.opts.crosstalk_cap.max(1e-3)).max(0.0);
        let fidelity = mm.metrics().map(|m| m.fidelity).unwrap_or(0.0);
        Eval {
            pitch,
            extra_gap,
            radii: geo.radii,
            objective: spread * spread + 1e3 * over * over,
            fidelity,
            crosstalk,
            spread,
        }
    }

    fn at(&self, pitch: f64, extra_gap: f64) -> Option<Eval> {
        let radii = self.equalize(pitch, self.gap + extra_gap)?;
        Some(self.score(pitch, extra_gap, radii))
    }
}

/// Root of an increasing `f` bracketed by `[a, b]` (regula falsi, Illinois variant).
fn illinois(mut f: impl FnMut(f64) -> f64, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64, xtol: f64) -> f64 {
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if (fc < 0.0) == (fa < 0.0) {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < xtol || fc.abs() < 1e-12 * fb.abs().max(fa.abs()) {
            return c;
        }
    }
    0.5 * (a + b)
}

/// Golden-section minimum of `f` on `[lo, hi]`, `None` results count as +inf.
fn golden<T>(lo: f64, hi: f64, rel_tol: f64, mut f: impl FnMut(f64) -> Option<(f64, T)>) -> Option<(f64, f64, T)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut eval = |x: f64| match f(x) {
        Some((v, t)) => (v, Some(t)),
        None => (f64::INFINITY, None),
    };
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut t1) = eval(x1);
    let (mut f2, mut t2) = eval(x2);
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    while b - a > rel_tol * scale {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            t2 = t1.take();
            x1 = b - g * (b - a);
            (f1, t1) = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            t1 = t2.take();
            x2 = a + g * (b - a);
            (f2, t2) = eval(x2);
        }
    }
    let (x, fx, t) = if f1 <= f2 { (x1, f1, t1) } else { (x2, f2, t2) };
    t.map(|t| (x, fx, t))
}

impl Design {
    fn from_basis(basis_s: PixelBasis, p: &JtmaParams, model: &Model, cap: f64, spec: &QuadratureSpec) -> Result<Design> {
        let basis_i = basis_s.mirrored(p);
        let t = compute_t(&basis_s, &basis_i, p, model, spec)?;
        let metrics = t.metrics()?;
        let crosstalk = t.crosstalk();
        let spread = cv2(&t.diagonal_abs2()).sqrt();
        let over = ((crosstalk - cap) / cap.max(1e-3)).max(0.0);
        Ok(Design {
            basis_s,
            basis_i,
            feasible: crosstalk <= cap,
            objective: spread * spread + 1e3 * over * over,
            diagonal_spread: spread,
            crosstalk,
            fidelity_history: vec![metrics.fidelity],
            metrics,
            t,
        })
    }
}

/// Uniform mask, then diagonal equalization and a coordinate descent over
/// pitch, extra edge gap and per-shell radii. Steps are accepted only when
/// the objective improves without lowering the fidelity.
pub fn optimize_basis(d: usize, p: &JtmaParams, opts: &OptimizeOptions, spec: &QuadratureSpec) -> Result<DesignRun> {
    let (big_r, gap) = check_design_inputs(d, p, &opts.geometry)?;
    if !(opts.crosstalk_cap >= 0.0) {
        return Err(Error::Validation(format!("crosstalk_cap must be >= 0, got {}", opts.crosstalk_cap)));
    }
    let lat = Lattice::new(d, opts.layout);
    let uni = uniform_geometry(&lat, big_r, gap)?;
    let axis = [p.origin_s, 0.0];
    let uniform = Design::from_basis(uni.basis(opts.layout, big_r, axis), p, &opts.model, opts.crosstalk_cap, spec)?;
    if d == 1 {
        return Ok(DesignRun {
            optimized: uniform.clone(),
            uniform,
        });
    }
    let ev = Evaluator {
        lat: &lat,
        p,
        opts,
        big_r,
        gap,
    };
    let pitch_max = if lat.rho_max > 0.0 { big_r / lat.rho_max } else { big_r };
    let mut best = ev
        .at(uni.pitch, 0.0)
        .ok_or_else(|| Error::Packing("equalized mask is infeasible at the uniform pitch".into()))?;
    let mut history = vec![best.fidelity];
    let accept = |cand: &Eval, cur: &Eval| {
        cand.objective < cur.objective * (1.0 - opts.tol) && cand.fidelity >= cur.fidelity - 1e-12
    };
    // Converged once the cap holds and the diagonal spread is below tol.
    let done = |e: &Eval| e.crosstalk <= opts.crosstalk_cap && e.spread < opts.tol;
    for _ in 0..opts.max_sweeps {
        let start = best.objective;
        if done(&best) {
            break;
        }
        // pitch
        let eg = best.extra_gap;
        if let Some((_, _, cand)) = golden(gap + eg, pitch_max, opts.tol, |x| ev.at(x, eg).map(|e| (e.objective, e))) {
            if accept(&cand, &best) {
                best = cand;
                history.push(best.fidelity);
            }
        }
        if done(&best) {
            break;
        }
        // extra gap
        let pitch = best.pitch;
        if let Some((_, _, cand)) = golden(0.0, (pitch - gap).max(0.0), opts.tol, |x| {
            ev.at(pitch, x).map(|e| (e.objective, e))
        }) {
            if accept(&cand, &best) {
                best = cand;
                history.push(best.fidelity);
            }
        }
        // per-shell radii
        for s in 0..lat.n_shells {
            if done(&best) {
                break;
            }
            let base = best.radii.clone();
            let (pitch, eg) = (best.pitch, best.extra_gap);
            let geo = Geometry {
                lat: &lat,
                pitch,
                radii: base.clone(),
            };
            let hi = geo.max_radius(s, gap, big_r);
            if !(hi > 0.0) {
                continue;
            }
            if let Some((_, _, cand)) = golden(0.5 * base[s], hi, opts.tol, |r| {
                let mut radii = base.clone();
                radii[s] = r;
                let g = Geometry {
                    lat: &lat,
                    pitch,
                    radii: radii.clone(),
                };
                g.feasible(gap, big_r).then(|| {
                    let e = ev.score(pitch, eg, radii);
                    (e.objective, e)
                })
            }) {
                if accept(&cand, &best) {
                    best = cand;
                    history.push(best.fidelity);
                }
            }
        }
        if !(best.objective < start * (1.0 - opts.tol)) {
            break;
        }
    }
    let geo = Geometry {
        lat: &lat,
        pitch: best.pitch,
        radii: best.radii.clone(),
    };
    let mut optimized = Design::from_basis(geo.basis(opts.layout, big_r, axis), p, &opts.model, opts.crosstalk_cap, spec)?;
    optimized.fidelity_history = history;
    Ok(DesignRun { uniform, optimized })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source_810() -> JtmaParams {
        JtmaParams::cl(7.45, 103.2).unwrap()
    }

    #[test]
    fn hex_31_is_closed_and_valid() {
        let b = make_pixel_basis(31, Layout::Hex, &source_810(), 1.0).unwrap();
        assert_eq!(b.d(), 31);
        b.validate().unwrap();
        assert!(b.min_gap() >= 7.45 * (1.0 - 1e-9));
        let b = make_pixel_basis(31, Layout::Rings, &source_810(), 1.0).unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn single_pixel_is_centered() {
        let b = make_pixel_basis(1, Layout::Hex, &source_810(), 1.0).unwrap();
        assert_eq!(b.pixels[0].center, [0.0, 0.0]);
        assert!((b.pixels[0].radius - 1.5 * 103.2).abs() < 1e-9);
    }

    #[test]
    fn touching_and_overpacked_rejected() {
        assert!(matches!(make_pixel_basis(7, Layout::Hex, &source_810(), 0.0), Err(Error::Validation(_))));
        assert!(matches!(make_pixel_basis(5000, Layout::Hex, &source_810(), 1.0), Err(Error::Packing(_))));
    }

    #[test]
    fn two_pixels_are_symmetric() {
        let b = make_pixel_basis(2, Layout::Hex, &source_810(), 1.0).unwrap();
        let (a, c) = (b.pixels[0].center, b.pixels[1].center);
        assert!((a[0] + c[0]).abs() < 1e-9 && (a[1] + c[1]).abs() < 1e-9);
    }

    #[test]
    fn superposition_gains() {
        let b = make_pixel_basis(4, Layout::Hex, &source_810(), 1.0).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let e0 = [one, 0.0 * one, 0.0 * one, 0.0 * one];
        assert_eq!(superposition_hologram(&e0, &b).unwrap().global_gain, 1.0);
        let u = vec![one * 0.5; 4];
        assert!((superposition_hologram(&u, &b).unwrap().global_gain - 2.0).abs() < 1e-12);
        assert!(superposition_hologram(&[0.0 * one; 4], &b).is_err());
    }

    #[test]
    fn centered_pair_is_positive() {
        let p = source_810();
        let b = make_pixel_basis(1, Layout::Hex, &p, 1.0).unwrap();
        let t = compute_t(&b, &b.mirrored(&p), &p, &Model::Cl, &basis_quadrature()).unwrap();
        assert!(t.entries[(0, 0)].re > 0.0 && t.entries[(0, 0)].im == 0.0);
    }
}

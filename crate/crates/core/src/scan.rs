//! 2D pi-step scan: forward model, synthetic data, and slice closed forms.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::amplitude::hologram_amplitude;
use crate::error::{Error, Result};
use crate::hologram::Hologram;
use crate::model::{JtmaParams, Model};
use crate::quadrature::{Integral, QuadratureSpec};

pub use crate::amplitude::coincidence_probability;

/// Vertical pi phase step: `+1` left of the edge, `-1` right of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiStepHologram {
    pub edge_position: f64,
}

impl PiStepHologram {
    pub fn new(edge_position: f64) -> Self {
        PiStepHologram { edge_position }
    }

    pub fn transfer(&self, q_x: f64) -> f64 {
        if q_x < self.edge_position {
            1.0
        } else {
            -1.0
        }
    }

    pub fn hologram(&self) -> Hologram {
        Hologram::pi_step(self.edge_position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub a_s_values: Vec<f64>,
    pub a_i_values: Vec<f64>,
}

impl ScanGrid {
    pub fn new(a_s_values: Vec<f64>, a_i_values: Vec<f64>) -> Result<Self> {
        let g = ScanGrid {
            a_s_values,
            a_i_values,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n x n` uniform grid over `[-half_width, half_width]` on both axes.
    pub fn uniform(n: usize, half_width: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!("grid needs at least 2 points per axis, got {n}")));
        }
        let v: Vec<f64> = (0..n)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64)
            .collect();
        Self::new(v.clone(), v)
    }

    /// 21 x 21 over `+-2 sigma_c`.
    pub fn default_for(p: &JtmaParams) -> Self {
        Self::uniform(21, 2.0 * p.sigma_c).expect("valid default grid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a_s", &self.a_s_values), ("a_i", &self.a_i_values)] {
            if v.is_empty() {
                return Err(Error::Validation(format!("{name} grid is empty")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("{name} grid has non-finite values")));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Validation(format!("{name} grid is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a_s_values.len(), self.a_i_values.len())
    }

    pub fn len(&self) -> usize {
        self.a_s_values.len() * self.a_i_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major cell coordinates, rows indexed by `a_s`.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.a_s_values
            .iter()
            .flat_map(move |&s| self.a_i_values.iter().map(move |&i| (s, i)))
    }

    pub fn shifted(&self, delta: f64) -> Self {
        ScanGrid {
            a_s_values: self.a_s_values.iter().map(|v| v + delta).collect(),
            a_i_values: self.a_i_values.iter().map(|v| v + delta).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    pub grid: ScanGrid,
    /// Row-major, `counts[i_s * n_i + i_i]`.
    pub counts: Vec<u64>,
    pub dwell_time_s: f64,
    /// Expected counts per unit probability.
    pub count_scale: f64,
}

impl ScanData {
    pub fn new(grid: ScanGrid, counts: Vec<u64>, dwell_time_s: f64, count_scale: f64) -> Result<Self> {
        let d = ScanData {
            grid,
            counts,
            dwell_time_s,
            count_scale,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.counts.len() != self.grid.len() {
            return Err(Error::Validation(format!(
                "counts has {} entries, grid has {} cells",
                self.counts.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    pub fn count(&self, i_s: usize, i_i: usize) -> u64 {
        self.counts[i_s * self.grid.a_i_values.len() + i_i]
    }

    pub fn scaled(&self, k: u64) -> Self {
        ScanData {
            counts: self.counts.iter().map(|c| c * k).collect(),
            count_scale: self.count_scale * k as f64,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Noise {
    None,
    Poisson { seed: u64 },
}

/// Probabilities on a scan grid, row-major.
#[derive(Debug, Clone)]
pub struct ProbabilityGrid {
    pub grid: ScanGrid,
    pub values: Vec<f64>,
    pub converged: bool,
    pub max_error: f64,
}

impl ProbabilityGrid {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Pi-step amplitude for edges `(a_s, a_i)`; origins in `p` shift both edges.
pub fn pi_step_amplitude(a_s: f64, a_i: f64, p: &JtmaParams, model: &Model, spec: &QuadratureSpec) -> Result<Integral<f64>> {
    let a = hologram_amplitude(&Hologram::pi_step(a_s), &Hologram::pi_step(a_i), p, model, spec)?;
    Ok(a.map(|c| c.re))
}

pub fn expected_probabilities(grid: &ScanGrid, p: &JtmaParams, model: &Model, spec: &QuadratureSpec) -> Result<ProbabilityGrid> {
    grid.validate()?;
    let cells: Vec<(f64, f64)> = grid.cells().collect();
    let amps: Vec<Integral<f64>> = cells
        .par_iter()
        .map(|&(s, i)| pi_step_amplitude(s, i, p, model, spec))
        .collect::<Result<_>>()?;
    Ok(ProbabilityGrid {
        grid: grid.clone(),
        values: amps.iter().map(|a| a.value * a.value).collect(),
        converged: amps.iter().all(|a| a.converged),
        max_error: amps.iter().map(|a| 2.0 * a.error).fold(0.0, f64::max),
    })
}

/// Integer counts from expected values, drawn sequentially in row-major order.
pub fn draw_counts(expected: &[f64], noise: Noise) -> Vec<u64> {
    match noise {
        Noise::None => expected.iter().map(|&e| e.max(0.0).round() as u64).collect(),
        Noise::Poisson { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            expected
                .iter()
                .map(|&e| {
                    if e > 0.0 {
                        Poisson::new(e).expect("positive rate").sample(&mut rng) as u64
                    } else {
                        0
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub model: Model,
    pub spec: QuadratureSpec,
    pub noise: Noise,
    pub count_scale: f64,
    /// Additive expected accidental counts per cell.
    pub background: f64,
    pub dwell_time_s: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            model: Model::Cl,
            spec: QuadratureSpec::default(),
            noise: Noise::None,
            count_scale: 1.0,
            background: 0.0,
            dwell_time_s: 1.0,
        }
    }
}

pub fn simulate_scan(
    grid: &ScanGrid,
    p: &JtmaParams,
    model: &Model,
    spec: &QuadratureSpec,
    noise: Noise,
    count_scale: f64,
) -> Result<ScanData> {
    simulate_scan_with(
        grid,
        p,
        &SimulateOptions {
            model: *model,
            spec: *spec,
            noise,
            count_scale,
            ..Default::default()
        },
    )
}

pub fn simulate_scan_with(grid: &ScanGrid, p: &JtmaParams, opts: &SimulateOptions) -> Result<ScanData> {
    if !(opts.count_scale > 0.0 && opts.count_scale.is_finite()) {
        return Err(Error::Validation(format!("count_scale must be > 0, got {}", opts.count_scale)));
    }
    if !(opts.background >= 0.0) {
        return Err(Error::Validation(format!("background must be >= 0, got {}", opts.background)));
    }
    let probs = expected_probabilities(grid, p, &opts.model, &opts.spec)?;
    Ok(counts_from_probabilities(&probs, opts))
}

pub fn counts_from_probabilities(probs: &ProbabilityGrid, opts: &SimulateOptions) -> ScanData {
    let expected: Vec<f64> = probs
        .values
        .iter()
        .map(|v| opts.count_scale * v + opts.background)
        .collect();
    ScanData {
        grid: probs.grid.clone(),
        counts: draw_counts(&expected, opts.noise),
        dwell_time_s: opts.dwell_time_s,
        count_scale: opts.count_scale,
    }
}

/// `|N - N' exp(-2 a^2 / sigma_c^2)|^2`
pub fn closed_pr_antidiag(a: f64, n: f64, n_prime: f64, sigma_c: f64) -> f64 {
    let v = n - n_prime * (-2.0 * a * a / (sigma_c * sigma_c)).exp();
    v * v
}

/// Square of the diagonal bracket, times `amp^2`.
pub fn closed_pr_diag(a: f64, amp: f64, p: &JtmaParams) -> f64 {
    let b = diag_bracket(a, p.sigma_p, p.sigma_c);
    amp * amp * b * b
}

pub(crate) fn diag_bracket(a: f64, sigma_p: f64, sigma_c: f64) -> f64 {
    let st = crate::model::sigma_p_tilde(sigma_p, sigma_c);
    let x = a.abs();
    let sc2 = sigma_c * sigma_c;
    SQRT_2 * sigma_p * (-2.0 * a * a * (1.0 / (st * st) + 1.0 / sc2)).exp()
        - 2.0 * PI.sqrt() * x * (-2.0 * a * a / sc2).exp() * erfc(SQRT_2 * x / st)
        - (PI * sigma_c / (2.0 * SQRT_2)) * (1.0 - 2.0 * erf(SQRT_2 * x / sigma_c))
}

/// Ratio-form visibility of the anti-diagonal dip.
pub fn visibility(n: f64, n_prime: f64) -> Result<f64> {
    if !(n > 0.0) || !(0.0..=2.0 * n).contains(&n_prime) {
        return Err(Error::Domain(format!("visibility needs N > 0 and 0 <= N' <= 2N, got {n}, {n_prime}")));
    }
    let d = n - n_prime;
    Ok((n * n - d * d) / (n * n + d * d))
}

/// `(sigma_c^2 - (sigma_c - sigma_p)^2) / (sigma_c^2 + (sigma_c - sigma_p)^2)`, leading order in sigma_p/sigma_c.
pub fn visibility_sigma_form(sigma_c: f64, sigma_p: f64) -> f64 {
    let d = sigma_c - sigma_p;
    (sigma_c * sigma_c - d * d) / (sigma_c * sigma_c + d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Signal,
    Idler,
}

/// Edge-row shape `erf^2(sqrt2 (a - origin) / sigma_c)`, unit plateau.
pub fn marginal_scan(a: f64, side: Side, p: &JtmaParams) -> f64 {
    let o = match side {
        Side::Signal => p.origin_s,
        Side::Idler => p.origin_i,
    };
    erf_edge(a, o, p.sigma_c)
}

pub fn erf_edge(a: f64, origin: f64, width: f64) -> f64 {
    erf(SQRT_2 * (a - origin) / width).powi(2)
}

/// `N'/N` of the collection-limited model, `4 sigma_p_tilde / (pi sigma_c)`.
pub fn n_prime_ratio(sigma_p: f64, sigma_c: f64) -> f64 {
    4.0 * crate::model::sigma_p_tilde(sigma_p, sigma_c) / (PI * sigma_c)
}

/// `A/N` of the collection-limited model, `2 sqrt2 / (pi sigma_c)`.
pub fn diag_ratio(sigma_c: f64) -> f64 {
    2.0 * SQRT_2 / (PI * sigma_c)
}

/// Closed-form scales in the units of [`pi_step_amplitude`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClScales {
    pub n: f64,
    pub n_prime: f64,
    pub a_diag: f64,
}

impl ClScales {
    pub fn for_params(p: &JtmaParams) -> Self {
        let st = p.sigma_p_tilde();
        let n = p.amp_scale * (PI * st * p.sigma_c).powi(2);
        ClScales {
            n,
            n_prime: n * n_prime_ratio(p.sigma_p, p.sigma_c),
            a_diag: n * diag_ratio(p.sigma_c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn antidiag_limits() {
        assert_relative_eq!(closed_pr_antidiag(1e6, 3.0, 1.0, 50.0), 9.0);
        assert_relative_eq!(closed_pr_antidiag(0.0, 3.0, 1.0, 50.0), 4.0);
    }

    #[test]
    fn visibility_forms() {
        assert_eq!(visibility(2.0, 0.0).unwrap(), 0.0);
        assert_eq!(visibility(2.0, 2.0).unwrap(), 1.0);
        assert!(visibility(1.0, 3.0).is_err());
        let (sc, sp): (f64, f64) = (103.2, 7.45);
        let r = sp / (sc * sc + sp * sp).sqrt();
        assert!((visibility(1.0, r).unwrap() - 0.075).abs() < 0.001);
        // The sigma form agrees with the ratio form to leading order; its
        // numerator alone, 2x - x^2, is 0.139.
        let vs = visibility_sigma_form(sc, sp);
        assert!((vs - 0.0748).abs() < 5e-4, "{vs}");
        let x = sp / sc;
        assert!((2.0 * x - x * x - 0.139).abs() < 1e-3);
    }

    #[test]
    fn diag_even_and_asymptote() {
        let p = JtmaParams::cl(7.45, 103.2).unwrap();
        for a in [3.0, 20.0, 77.0] {
            assert_eq!(closed_pr_diag(a, 1.3, &p), closed_pr_diag(-a, 1.3, &p));
        }
        let lim = (PI * p.sigma_c / (2.0 * SQRT_2)).powi(2);
        assert_relative_eq!(closed_pr_diag(1e5, 1.0, &p), lim, max_relative = 1e-12);
    }

    #[test]
    fn marginal_shape() {
        let p = JtmaParams::cl(7.45, 103.2).unwrap().with_origins(12.0, -5.0);
        assert_eq!(marginal_scan(12.0, Side::Signal, &p), 0.0);
        assert_eq!(marginal_scan(-5.0, Side::Idler, &p), 0.0);
        assert_relative_eq!(marginal_scan(1e4, Side::Signal, &p), marginal_scan(-1e4, Side::Signal, &p));
    }

    #[test]
    fn poisson_draw_is_deterministic() {
        let e = vec![10.0, 0.0, 1e4, 3.5];
        let a = draw_counts(&e, Noise::Poisson { seed: 7 });
        let b = draw_counts(&e, Noise::Poisson { seed: 7 });
        let c = draw_counts(&e, Noise::Poisson { seed: 8 });
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a[1], 0);
        assert_eq!(draw_counts(&e, Noise::None), vec![10, 0, 10000, 4]);
    }

    #[test]
    fn grid_validation() {
        assert!(ScanGrid::new(vec![], vec![1.0]).is_err());
        assert!(ScanGrid::new(vec![1.0, 1.0], vec![1.0]).is_err());
        let g = ScanGrid::uniform(21, 206.4).unwrap();
        assert_eq!(g.a_s_values[10], 0.0);
        assert_relative_eq!(g.a_s_values[20], 206.4);
    }
}

//! JTMA amplitude family and the optics-to-parameter map.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn norm2(v: Vec2) -> f64 {
    v[0] * v[0] + v[1] * v[1]
}

#[inline]
fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

/// Unnormalized sinc, `sin(x)/x`, with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Width parameters of the collected JTMA plus scan origins and overall scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JtmaParams {
    pub sigma_p: f64,
    /// May be `f64::INFINITY` for the thin-crystal limit.
    pub sigma_s: f64,
    pub sigma_c: f64,
    #[serde(default)]
    pub origin_s: f64,
    #[serde(default)]
    pub origin_i: f64,
    #[serde(default = "one")]
    pub amp_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Whether the collection-limited double Gaussian may replace the sinc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClValidity {
    /// `sigma_s >= sqrt(2) sigma_c`
    pub coincidence: bool,
    /// `sigma_s >= 2 sigma_c`
    pub singles: bool,
}

impl JtmaParams {
    pub fn new(sigma_p: f64, sigma_s: f64, sigma_c: f64) -> Result<Self> {
        let p = JtmaParams {
            sigma_p,
            sigma_s,
            sigma_c,
            origin_s: 0.0,
            origin_i: 0.0,
            amp_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Collection-limited parameters: no phase-matching sinc.
    pub fn cl(sigma_p: f64, sigma_c: f64) -> Result<Self> {
        Self::new(sigma_p, f64::INFINITY, sigma_c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_p", self.sigma_p),
            ("sigma_s", self.sigma_s),
            ("sigma_c", self.sigma_c),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.sigma_p.is_finite() || !self.sigma_c.is_finite() {
            return Err(Error::Domain("sigma_p and sigma_c must be finite".into()));
        }
        if !self.origin_s.is_finite() || !self.origin_i.is_finite() || !self.amp_scale.is_finite()
        {
            return Err(Error::Domain("origins and amp_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn with_origins(mut self, origin_s: f64, origin_i: f64) -> Self {
        self.origin_s = origin_s;
        self.origin_i = origin_i;
        self
    }

    pub fn with_amp_scale(mut self, amp_scale: f64) -> Self {
        self.amp_scale = amp_scale;
        self
    }

    /// Harmonic-sum width `(1/sigma_c^2 + 1/sigma_p^2)^(-1/2)`.
    pub fn sigma_p_tilde(&self) -> f64 {
        sigma_p_tilde(self.sigma_p, self.sigma_c)
    }

    pub fn cl_validity(&self) -> ClValidity {
        ClValidity {
            coincidence: self.sigma_s >= SQRT_2 * self.sigma_c,
            singles: self.sigma_s >= 2.0 * self.sigma_c,
        }
    }
}

pub fn sigma_p_tilde(sigma_p: f64, sigma_c: f64) -> f64 {
    (1.0 / (sigma_c * sigma_c) + 1.0 / (sigma_p * sigma_p)).powf(-0.5)
}

/// Inverse of [`sigma_p_tilde`] for fixed `sigma_c`. `None` when `s >= sigma_c`.
pub fn sigma_p_from_tilde(s: f64, sigma_c: f64) -> Option<f64> {
    let inv = 1.0 / (s * s) - 1.0 / (sigma_c * sigma_c);
    (inv > 0.0 && s > 0.0).then(|| inv.powf(-0.5))
}

/// Physical source and collection optics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalSystem {
    pub lambda_pump_nm: f64,
    pub lambda_signal_nm: f64,
    pub lambda_idler_nm: f64,
    /// 1/e^2 intensity radius at the crystal.
    pub pump_waist_mm: f64,
    pub crystal_length_mm: f64,
    pub refractive_index_pump: f64,
    /// Crystal-to-SLM Fourier lens.
    pub focal_length_mm: f64,
    /// Back-propagated fiber mode radius at the SLM.
    pub collection_waist_at_slm_mm: f64,
    /// Multiplies the geometric `2 pi w_C / (f lambda)` collection width.
    #[serde(default = "one")]
    pub collection_calibration: f64,
}

impl OpticalSystem {
    /// 405 nm pump, 810 nm pairs, 5 mm crystal. The pump index and the
    /// collection waist are back-solved from sigma_s = 151.1 and
    /// sigma_c = 106.5 rad/mm.
    pub fn degenerate_810nm() -> Self {
        OpticalSystem {
            lambda_pump_nm: 405.0,
            lambda_signal_nm: 810.0,
            lambda_idler_nm: 810.0,
            pump_waist_mm: 0.188,
            crystal_length_mm: 5.0,
            refractive_index_pump: refractive_index_for_sigma_s(151.1, 5.0, 405.0),
            focal_length_mm: 250.0,
            collection_waist_at_slm_mm: collection_waist_for_sigma_c(106.5, 250.0, 810.0),
            collection_calibration: 1.0,
        }
    }

    /// 775 nm pump, 1550 nm pairs. Back-solved from sigma_s = 106.7 and
    /// sigma_c = 76.7 rad/mm.
    pub fn degenerate_1550nm() -> Self {
        OpticalSystem {
            lambda_pump_nm: 775.0,
            lambda_signal_nm: 1550.0,
            lambda_idler_nm: 1550.0,
            pump_waist_mm: 0.450,
            crystal_length_mm: 5.0,
            refractive_index_pump: refractive_index_for_sigma_s(106.7, 5.0, 775.0),
            focal_length_mm: 250.0,
            collection_waist_at_slm_mm: collection_waist_for_sigma_c(76.7, 250.0, 1550.0),
            collection_calibration: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_pump_nm", self.lambda_pump_nm),
            ("lambda_signal_nm", self.lambda_signal_nm),
            ("lambda_idler_nm", self.lambda_idler_nm),
            ("pump_waist_mm", self.pump_waist_mm),
            ("crystal_length_mm", self.crystal_length_mm),
            ("refractive_index_pump", self.refractive_index_pump),
            ("focal_length_mm", self.focal_length_mm),
            ("collection_waist_at_slm_mm", self.collection_waist_at_slm_mm),
            ("collection_calibration", self.collection_calibration),
        ];
        for (name, v) in fields {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        let mismatch = 1.0 / self.lambda_pump_nm
            - 1.0 / self.lambda_signal_nm
            - 1.0 / self.lambda_idler_nm;
        if mismatch.abs() * self.lambda_pump_nm > 1e-6 {
            return Err(Error::Domain(format!(
                "wavelengths violate energy conservation: 1/{} != 1/{} + 1/{}",
                self.lambda_pump_nm, self.lambda_signal_nm, self.lambda_idler_nm
            )));
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        (self.lambda_signal_nm - self.lambda_idler_nm).abs() <= 1e-9 * self.lambda_signal_nm
    }

    /// Pump wavevector `n_P 2 pi / lambda_P` in rad/mm.
    pub fn k_pump(&self) -> f64 {
        self.refractive_index_pump * 2.0 * PI / (self.lambda_pump_nm * 1e-6)
    }
}

/// `n_P = sigma_s^2 L lambda_P / (8 pi)`, lambda in nm, L in mm.
pub fn refractive_index_for_sigma_s(sigma_s: f64, crystal_length_mm: f64, lambda_pump_nm: f64) -> f64 {
    sigma_s * sigma_s * crystal_length_mm * lambda_pump_nm * 1e-6 / (8.0 * PI)
}

/// SLM-plane field radius whose crystal-plane width is `sigma_c` (calibration 1).
pub fn collection_waist_for_sigma_c(sigma_c: f64, focal_length_mm: f64, lambda_nm: f64) -> f64 {
    sigma_c * focal_length_mm * lambda_nm * 1e-6 / (2.0 * PI)
}

pub fn params_from_optics(sys: &OpticalSystem) -> Result<JtmaParams> {
    sys.validate()?;
    let sigma_p = SQRT_2 / sys.pump_waist_mm;
    let sigma_s = (4.0 * sys.k_pump() / sys.crystal_length_mm).sqrt();
    let sigma_c = sys.collection_calibration * 2.0 * PI * sys.collection_waist_at_slm_mm
        / (sys.focal_length_mm * sys.lambda_signal_nm * 1e-6);
    JtmaParams::new(sigma_p, sigma_s, sigma_c)
}

/// Scaled transverse momenta for non-degenerate corrections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledMomentumConstants {
    pub c_s: f64,
    pub c_i: f64,
    pub epsilon: f64,
}

impl ScaledMomentumConstants {
    pub fn new(c_s: f64, c_i: f64) -> Result<Self> {
        if !(c_s > 0.0 && c_i > 0.0 && c_s.is_finite() && c_i.is_finite()) {
            return Err(Error::Domain(format!("c_s, c_i must be > 0, got {c_s}, {c_i}")));
        }
        Ok(ScaledMomentumConstants {
            c_s,
            c_i,
            epsilon: 1.0 - 1.0 / (c_s * c_i),
        })
    }

    pub fn unit() -> Self {
        ScaledMomentumConstants {
            c_s: 1.0,
            c_i: 1.0,
            epsilon: 0.0,
        }
    }
}

#[inline]
fn pump(q_sum: Vec2, sigma_p: f64) -> f64 {
    (-norm2(q_sum) / (2.0 * sigma_p * sigma_p)).exp()
}

pub fn jtma_ideal(q_s: Vec2, q_i: Vec2, p: &JtmaParams) -> f64 {
    let d2 = norm2(sub(q_s, q_i));
    p.amp_scale * pump(add(q_s, q_i), p.sigma_p) * sinc(d2 / (p.sigma_s * p.sigma_s))
}

pub fn jtma_general(q_s: Vec2, q_i: Vec2, p: &JtmaParams, k: &ScaledMomentumConstants) -> f64 {
    let ts = [k.c_s * q_s[0], k.c_s * q_s[1]];
    let ti = [k.c_i * q_i[0], k.c_i * q_i[1]];
    let tp = norm2(add(ts, ti)) / 2.0;
    let tm = norm2(sub(ts, ti)) / 2.0;
    let arg = ((2.0 + k.epsilon) * tm + k.epsilon * tp) / (p.sigma_s * p.sigma_s);
    p.amp_scale * sinc(arg) * pump(add(q_s, q_i), p.sigma_p)
}

#[inline]
fn collection(q: Vec2, sigma_c: f64) -> f64 {
    (-norm2(q) / (sigma_c * sigma_c)).exp()
}

pub fn jtma_collected(q_s: Vec2, q_i: Vec2, p: &JtmaParams) -> f64 {
    jtma_ideal(q_s, q_i, p) * collection(q_s, p.sigma_c) * collection(q_i, p.sigma_c)
}

pub fn jtma_cl(q_s: Vec2, q_i: Vec2, p: &JtmaParams) -> f64 {
    let st = p.sigma_p_tilde();
    let sum = norm2(add(q_s, q_i)) / (2.0 * st * st);
    let diff = norm2(sub(q_s, q_i)) / (2.0 * p.sigma_c * p.sigma_c);
    p.amp_scale * (-sum - diff).exp()
}

/// [`jtma_cl`] plus the coincidence-path validity flag.
pub fn jtma_cl_flagged(q_s: Vec2, q_i: Vec2, p: &JtmaParams) -> (f64, bool) {
    (jtma_cl(q_s, q_i, p), p.cl_validity().coincidence)
}

/// Fourier-plane SLM position (mm) to crystal-plane momentum (rad/mm).
pub fn slm_to_momentum(x: Vec2, lambda_nm: f64, focal_length_mm: f64) -> Vec2 {
    let k = 2.0 * PI / (focal_length_mm * lambda_nm * 1e-6);
    [k * x[0], k * x[1]]
}

pub fn momentum_to_slm(q: Vec2, lambda_nm: f64, focal_length_mm: f64) -> Vec2 {
    let k = focal_length_mm * lambda_nm * 1e-6 / (2.0 * PI);
    [k * q[0], k * q[1]]
}

/// Which collected two-photon kernel `G(q_s, q_i)` to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Model {
    /// Full sinc phase matching times both collection envelopes.
    #[default]
    Collected,
    /// Collection-limited double Gaussian.
    Cl,
    /// Collected kernel with the scaled-momentum sinc.
    General(ScaledMomentumConstants),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Collected => "collected",
            Model::Cl => "cl",
            Model::General(_) => "general",
        }
    }

    /// Collected kernel `G(q_s, q_i)`, centered on the optic axis.
    pub fn kernel(&self, q_s: Vec2, q_i: Vec2, p: &JtmaParams) -> f64 {
        match self {
            Model::Collected => jtma_collected(q_s, q_i, p),
            Model::Cl => jtma_cl(q_s, q_i, p),
            Model::General(k) => {
                jtma_general(q_s, q_i, p, k) * collection(q_s, p.sigma_c) * collection(q_i, p.sigma_c)
            }
        }
    }

    /// Kernel in sum/difference coordinates `p = (q_s+q_i)/sqrt2`, `m = (q_s-q_i)/sqrt2`.
    pub fn kernel_pm(&self, pv: Vec2, mv: Vec2, p: &JtmaParams) -> f64 {
        let st = p.sigma_p_tilde();
        let p2 = norm2(pv);
        let m2 = norm2(mv);
        match self {
            Model::Cl => p.amp_scale * (-p2 / (st * st) - m2 / (p.sigma_c * p.sigma_c)).exp(),
            Model::Collected => {
                p.amp_scale
                    * (-p2 / (st * st) - m2 / (p.sigma_c * p.sigma_c)).exp()
                    * sinc(2.0 * m2 / (p.sigma_s * p.sigma_s))
            }
            Model::General(_) => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                let qs = [(pv[0] + mv[0]) * r, (pv[1] + mv[1]) * r];
                let qi = [(pv[0] - mv[0]) * r, (pv[1] - mv[1]) * r];
                self.kernel(qs, qi, p)
            }
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collected" => Ok(Model::Collected),
            "cl" => Ok(Model::Cl),
            "general" => Ok(Model::General(ScaledMomentumConstants::unit())),
            _ => Err(Error::Validation(format!(
                "unknown model '{s}' (expected collected, cl or general)"
            ))),
        }
    }
}

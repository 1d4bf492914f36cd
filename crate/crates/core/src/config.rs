//! Flat TOML run configuration with unit-suffixed keys.
//!
//! Every key is optional in the file and command-line flags override file
//! values. The run manifest is a `RunConfig` with every used key filled in,
//! so it can be fed back as a config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{DesignGeometry, Layout, OptimizeOptions};
use crate::error::{Error, Result};
use crate::herald::HeraldKernel;
use crate::io::{from_toml, read_text, to_toml};
use crate::model::{params_from_optics, JtmaParams, Model, OpticalSystem, ScaledMomentumConstants};
use crate::quadrature::QuadratureSpec;
use crate::scan::Noise;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // source parameters
    pub sigma_p_rad_per_mm: Option<f64>,
    pub sigma_s_rad_per_mm: Option<f64>,
    pub sigma_c_rad_per_mm: Option<f64>,
    pub origin_s_rad_per_mm: Option<f64>,
    pub origin_i_rad_per_mm: Option<f64>,
    pub amp_scale: Option<f64>,
    /// "810nm" or "1550nm"; used when the sigmas are not given.
    pub optics: Option<String>,
    pub pump_waist_mm: Option<f64>,
    pub collection_calibration: Option<f64>,
    pub focal_length_mm: Option<f64>,
    pub lambda_signal_nm: Option<f64>,
    // kernel
    pub model: Option<String>,
    pub c_s: Option<f64>,
    pub c_i: Option<f64>,
    // quadrature
    pub quad_order: Option<usize>,
    pub quad_truncation_rad_per_mm: Option<f64>,
    pub quad_rel_tol: Option<f64>,
    pub quad_max_refinements: Option<usize>,
    // scan
    pub grid_points: Option<usize>,
    pub grid_half_width_rad_per_mm: Option<f64>,
    pub noise: Option<String>,
    pub seed: Option<u64>,
    pub peak_counts: Option<f64>,
    pub background_counts: Option<f64>,
    pub dwell_time_s: Option<f64>,
    pub dense_points: Option<usize>,
    // design
    pub d: Option<usize>,
    pub objective: Option<String>,
    pub layout: Option<String>,
    pub alpha: Option<f64>,
    pub spacing_factor: Option<f64>,
    pub crosstalk_cap: Option<f64>,
    pub herald_d1_rad_per_mm: Option<f64>,
    pub herald_d2_rad_per_mm: Option<Vec<f64>>,
    pub herald_kernel: Option<String>,
    // approximation check
    pub ratios: Option<Vec<f64>>,
    // files
    pub scan_csv: Option<String>,
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        from_toml(&read_text(path)?, path)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            sigma_p_rad_per_mm, sigma_s_rad_per_mm, sigma_c_rad_per_mm, origin_s_rad_per_mm, origin_i_rad_per_mm,
            amp_scale, optics, pump_waist_mm, collection_calibration, focal_length_mm, lambda_signal_nm, model,
            c_s, c_i, quad_order, quad_truncation_rad_per_mm, quad_rel_tol, quad_max_refinements, grid_points,
            grid_half_width_rad_per_mm, noise, seed, peak_counts, background_counts, dwell_time_s, dense_points,
            d, objective, layout, alpha, spacing_factor, crosstalk_cap, herald_d1_rad_per_mm,
            herald_d2_rad_per_mm, herald_kernel, ratios, scan_csv, output_dir
        )
    }

    fn optical_system(&self) -> Result<Option<OpticalSystem>> {
        let Some(name) = self.optics.as_deref() else {
            return Ok(None);
        };
        let mut sys = match name {
            "810nm" => OpticalSystem::degenerate_810nm(),
            "1550nm" => OpticalSystem::degenerate_1550nm(),
            _ => return Err(Error::Validation(format!("unknown optics preset {name:?}; expected 810nm or 1550nm"))),
        };
        if let Some(w) = self.pump_waist_mm {
            sys.pump_waist_mm = w;
        }
        if let Some(c) = self.collection_calibration {
            sys.collection_calibration = c;
        }
        if let Some(f) = self.focal_length_mm {
            sys.focal_length_mm = f;
        }
        sys.validate()?;
        Ok(Some(sys))
    }

    /// Explicit sigmas win over an optics preset.
    pub fn params(&self) -> Result<JtmaParams> {
        let base = match (self.sigma_p_rad_per_mm, self.sigma_c_rad_per_mm) {
            (Some(sp), Some(sc)) => JtmaParams::new(sp, self.sigma_s_rad_per_mm.unwrap_or(f64::INFINITY), sc)?,
            (None, None) => match self.optical_system()? {
                Some(sys) => params_from_optics(&sys)?,
                None => {
                    return Err(Error::Validation(
                        "set sigma_p_rad_per_mm and sigma_c_rad_per_mm, or an optics preset".into(),
                    ))
                }
            },
            _ => {
                return Err(Error::Validation(
                    "sigma_p_rad_per_mm and sigma_c_rad_per_mm must be given together".into(),
                ))
            }
        };
        let p = base
            .with_origins(self.origin_s_rad_per_mm.unwrap_or(0.0), self.origin_i_rad_per_mm.unwrap_or(0.0))
            .with_amp_scale(self.amp_scale.unwrap_or(1.0));
        p.validate()?;
        Ok(p)
    }

    pub fn model(&self) -> Result<Model> {
        match self.model.as_deref().unwrap_or("cl") {
            "general" => Ok(Model::General(ScaledMomentumConstants::new(
                self.c_s.unwrap_or(1.0),
                self.c_i.unwrap_or(1.0),
            )?)),
            other => other.parse(),
        }
    }

    pub fn quadrature(&self, base: QuadratureSpec) -> Result<QuadratureSpec> {
        let q = QuadratureSpec {
            order: self.quad_order.unwrap_or(base.order),
            truncation_radius: self.quad_truncation_rad_per_mm.or(base.truncation_radius),
            target_rel_tol: self.quad_rel_tol.unwrap_or(base.target_rel_tol),
            max_refinements: self.quad_max_refinements.unwrap_or(base.max_refinements),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn noise(&self) -> Result<Noise> {
        match self.noise.as_deref().unwrap_or("poisson") {
            "none" => Ok(Noise::None),
            "poisson" => Ok(Noise::Poisson {
                seed: self.seed.unwrap_or(0),
            }),
            other => Err(Error::Validation(format!("unknown noise {other:?}; expected none or poisson"))),
        }
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions> {
        if let Some(o) = self.objective.as_deref() {
            if o != "max_ent" {
                return Err(Error::Validation(format!("unknown objective {o:?}; expected max_ent")));
            }
        }
        let d = OptimizeOptions::default();
        Ok(OptimizeOptions {
            layout: self.layout.as_deref().map(str::parse::<Layout>).transpose()?.unwrap_or(d.layout),
            geometry: DesignGeometry {
                alpha: self.alpha.unwrap_or(d.geometry.alpha),
                spacing_factor: self.spacing_factor.unwrap_or(d.geometry.spacing_factor),
            },
            crosstalk_cap: self.crosstalk_cap.unwrap_or(d.crosstalk_cap),
            model: self.model()?,
            ..d
        })
    }

    pub fn herald_kernel(&self) -> Result<HeraldKernel> {
        self.herald_kernel.as_deref().map(str::parse).transpose().map(Option::unwrap_or_default)
    }

    /// Wavelength and lens for SLM-plane coordinates.
    pub fn slm_optics(&self) -> Result<(f64, f64)> {
        let sys = self.optical_system()?.unwrap_or_else(OpticalSystem::degenerate_810nm);
        Ok((
            self.lambda_signal_nm.unwrap_or(sys.lambda_signal_nm),
            self.focal_length_mm.unwrap_or(sys.focal_length_mm),
        ))
    }

    pub fn to_toml(&self) -> Result<String> {
        to_toml(self)
    }
}

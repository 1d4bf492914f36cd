//! File formats: scan CSV with metadata sidecar, fit report, basis and mode-matrix files.
//!
//! All text is UTF-8 with LF line endings. Floats use Rust's shortest
//! round-trip representation so written files are byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{Layout, PixelBasis};
use crate::error::{Error, Result};
use crate::fit::{fmt6, FitReport};
use crate::metrics::{EntanglementMetrics, ModeMatrix};
use crate::model::{momentum_to_slm, JtmaParams};
use crate::scan::{ProbabilityGrid, ScanData, ScanGrid};

pub const SCAN_HEADER: &str = "a_s_rad_per_mm,a_i_rad_per_mm,counts";
pub const PROBABILITY_HEADER: &str = "a_s_rad_per_mm,a_i_rad_per_mm,probability";
pub const MODE_MATRIX_HEADER: &str = "a,b,re,im";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `scan.csv` -> `scan.meta.toml`
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// Generation record stored next to a scan CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanMeta {
    pub dwell_time_s: f64,
    pub count_scale: f64,
    pub noise: String,
    pub seed: Option<u64>,
    pub model: String,
    pub sigma_p_rad_per_mm: f64,
    /// Absent for the thin-crystal limit.
    pub sigma_s_rad_per_mm: Option<f64>,
    pub sigma_c_rad_per_mm: f64,
    pub origin_s_rad_per_mm: f64,
    pub origin_i_rad_per_mm: f64,
    pub amp_scale: f64,
    pub quad_order: usize,
    pub converged: bool,
}

impl ScanMeta {
    pub fn params(&self) -> Result<JtmaParams> {
        Ok(JtmaParams::new(
            self.sigma_p_rad_per_mm,
            self.sigma_s_rad_per_mm.unwrap_or(f64::INFINITY),
            self.sigma_c_rad_per_mm,
        )?
        .with_origins(self.origin_s_rad_per_mm, self.origin_i_rad_per_mm)
        .with_amp_scale(self.amp_scale))
    }
}

pub fn scan_csv_string(data: &ScanData) -> String {
    let mut s = String::with_capacity(32 * data.counts.len());
    s.push_str(SCAN_HEADER);
    s.push('\n');
    let ni = data.grid.a_i_values.len();
    for (is, a_s) in data.grid.a_s_values.iter().enumerate() {
        for (ii, a_i) in data.grid.a_i_values.iter().enumerate() {
            let _ = writeln!(s, "{a_s},{a_i},{}", data.counts[is * ni + ii]);
        }
    }
    s
}

pub fn write_scan(path: &Path, data: &ScanData, meta: &ScanMeta) -> Result<()> {
    write_text(path, &scan_csv_string(data))?;
    write_text(&sidecar_path(path), &to_toml(meta)?)
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T> {
    let f = field.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what} column"),
    })?;
    f.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {f:?}"),
    })
}

/// Parses a row-major scan CSV; the grid is rebuilt from the first row block.
pub fn parse_scan_csv(text: &str) -> Result<(ScanGrid, Vec<u64>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCAN_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {SCAN_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (k, raw) in lines {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut it = raw.split(',');
        let a_s: f64 = parse_field(it.next(), line, "a_s")?;
        let a_i: f64 = parse_field(it.next(), line, "a_i")?;
        let c: u64 = parse_field(it.next(), line, "counts")?;
        if it.next().is_some() {
            return Err(Error::Parse {
                line,
                msg: "expected 3 columns".into(),
            });
        }
        if !a_s.is_finite() || !a_i.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite coordinate".into(),
            });
        }
        rows.push((line, a_s, a_i, c));
    }
    if rows.is_empty() {
        return Err(Error::Validation("scan CSV has no data rows".into()));
    }
    let s0 = rows[0].1;
    let a_i_values: Vec<f64> = rows.iter().take_while(|r| r.1 == s0).map(|r| r.2).collect();
    let ni = a_i_values.len();
    if rows.len() % ni != 0 {
        return Err(Error::Parse {
            line: rows.last().unwrap().0,
            msg: format!("{} rows is not a multiple of the {ni} idler positions", rows.len()),
        });
    }
    let mut a_s_values = Vec::with_capacity(rows.len() / ni);
    for (k, r) in rows.iter().enumerate() {
        let (is, ii) = (k / ni, k % ni);
        if ii == 0 {
            a_s_values.push(r.1);
        }
        if r.1 != a_s_values[is] || r.2 != a_i_values[ii] {
            return Err(Error::Parse {
                line: r.0,
                msg: "rows must be row-major over a rectangular grid (a_s outer, a_i inner)".into(),
            });
        }
    }
    let grid = ScanGrid::new(a_s_values, a_i_values)?;
    Ok((grid, rows.into_iter().map(|r| r.3).collect()))
}

/// Reads a scan and, when present, its sidecar.
pub fn read_scan(path: &Path) -> Result<(ScanData, Option<ScanMeta>)> {
    let (grid, counts) = parse_scan_csv(&read_text(path)?)?;
    let side = sidecar_path(path);
    let meta: Option<ScanMeta> = if side.exists() {
        Some(from_toml(&read_text(&side)?, &side)?)
    } else {
        None
    };
    let (dwell, scale) = meta.as_ref().map(|m| (m.dwell_time_s, m.count_scale)).unwrap_or((1.0, 1.0));
    Ok((ScanData::new(grid, counts, dwell, scale)?, meta))
}

pub fn probability_csv_string(g: &ProbabilityGrid) -> String {
    let mut s = String::new();
    s.push_str(PROBABILITY_HEADER);
    s.push('\n');
    let ni = g.grid.a_i_values.len();
    for (is, a_s) in g.grid.a_s_values.iter().enumerate() {
        for (ii, a_i) in g.grid.a_i_values.iter().enumerate() {
            let _ = writeln!(s, "{a_s},{a_i},{:e}", g.values[is * ni + ii]);
        }
    }
    s
}

pub fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Validation(format!("serialization failed: {e}")))
}

pub fn from_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            line,
            msg: format!("{}: {}", path.display(), e.message()),
        }
    })
}

pub fn write_fit_report(path: &Path, r: &FitReport) -> Result<()> {
    write_text(path, &r.to_text())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelRecord {
    pub center_x_rad_per_mm: f64,
    pub center_y_rad_per_mm: f64,
    pub radius_rad_per_mm: f64,
    pub slm_x_mm: f64,
    pub slm_y_mm: f64,
    pub slm_radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub layout: Layout,
    pub d: usize,
    pub max_radius_rad_per_mm: f64,
    pub axis_x_rad_per_mm: f64,
    pub axis_y_rad_per_mm: f64,
    pub lambda_nm: f64,
    pub focal_length_mm: f64,
    pub pixels: Vec<PixelRecord>,
}

impl BasisFile {
    pub fn new(b: &PixelBasis, lambda_nm: f64, focal_length_mm: f64) -> Self {
        BasisFile {
            layout: b.layout,
            d: b.d(),
            max_radius_rad_per_mm: b.max_radius,
            axis_x_rad_per_mm: b.axis[0],
            axis_y_rad_per_mm: b.axis[1],
            lambda_nm,
            focal_length_mm,
            pixels: b
                .pixels
                .iter()
                .map(|px| {
                    let slm = momentum_to_slm(px.center, lambda_nm, focal_length_mm);
                    PixelRecord {
                        center_x_rad_per_mm: px.center[0],
                        center_y_rad_per_mm: px.center[1],
                        radius_rad_per_mm: px.radius,
                        slm_x_mm: slm[0],
                        slm_y_mm: slm[1],
                        slm_radius_mm: momentum_to_slm([px.radius, 0.0], lambda_nm, focal_length_mm)[0],
                    }
                })
                .collect(),
        }
    }

    pub fn basis(&self) -> Result<PixelBasis> {
        let b = PixelBasis {
            pixels: self
                .pixels
                .iter()
                .map(|p| crate::basis::Pixel {
                    center: [p.center_x_rad_per_mm, p.center_y_rad_per_mm],
                    radius: p.radius_rad_per_mm,
                })
                .collect(),
            layout: self.layout,
            max_radius: self.max_radius_rad_per_mm,
            axis: [self.axis_x_rad_per_mm, self.axis_y_rad_per_mm],
        };
        b.validate()?;
        Ok(b)
    }
}

/// `a,b,re,im` rows, signal index outer.
pub fn mode_matrix_csv_string(t: &ModeMatrix) -> String {
    let mut s = String::new();
    s.push_str(MODE_MATRIX_HEADER);
    s.push('\n');
    let d = t.dim();
    for a in 0..d {
        for b in 0..d {
            let z = t.entries[(a, b)];
            let _ = writeln!(s, "{a},{b},{:e},{:e}", z.re, z.im);
        }
    }
    s
}

/// Key-value metrics block accompanying a mode-matrix CSV.
pub fn metrics_string(t: &ModeMatrix, m: &EntanglementMetrics, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("d", t.dim().to_string());
    kv("schmidt_number", fmt6(m.schmidt_number));
    kv("fidelity_to_maxent", fmt6(m.fidelity));
    kv("d_ent_lower_bound", m.d_ent_lower_bound.to_string());
    kv("eof_ebits", fmt6(m.eof_ebits));
    kv("crosstalk", fmt6(t.crosstalk()));
    kv("quadrature_max_rel_error", fmt6(t.max_error));
    kv("quadrature_converged", t.converged.to_string());
    for (k, v) in extra {
        kv(k, v.clone());
    }
    let coeffs: Vec<String> = m.schmidt_coefficients.iter().map(|c| fmt6(*c)).collect();
    kv("schmidt_coefficients", format!("[{}]", coeffs.join(", ")));
    s
}

//! Validity of the collection-limited approximation.
//!
//! The sinc-bearing difference-coordinate profile
//! `f(r) = exp(-r^2/(c sigma_c^2)) sinc(2 r^2/sigma_s^2)` is compared with
//! its Gaussian replacement `g(r) = exp(-r^2/(c sigma_c^2))` through the
//! cosine similarity of the two functions on the plane, with `c = 1` on the
//! coincidence path and `c = 2` on the singles path.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sinc;
use crate::quadrature::{Axis, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPath {
    Coincidence,
    Singles,
}

impl OverlapPath {
    fn c(self) -> f64 {
        match self {
            OverlapPath::Coincidence => 1.0,
            OverlapPath::Singles => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OverlapPath::Coincidence => "coincidence",
            OverlapPath::Singles => "singles",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    /// sigma_s / sigma_c
    pub ratio: f64,
    pub overlap: f64,
    pub path: OverlapPath,
}

fn radial_rule(c: f64) -> Rule {
    // sigma_c = 1; both squared profiles decay like exp(-2 r^2 / c).
    let r_max = 8.0 * c.sqrt();
    let pts: Vec<f64> = (0..=16).map(|k| r_max * k as f64 / 16.0).collect();
    Axis::new(0.0, r_max).with_breaks(pts).rule(32)
}

/// Normalized inner product of the sinc profile with its Gaussian replacement.
pub fn cl_overlap(ratio: f64, path: OverlapPath) -> Result<OverlapResult> {
    if !(ratio > 0.0) {
        return Err(Error::Domain(format!("ratio must be > 0, got {ratio}")));
    }
    let c = path.c();
    let overlap = if ratio.is_infinite() {
        1.0
    } else {
        let rule = radial_rule(c);
        let s2 = ratio * ratio;
        let g = |r: f64| (-r * r / c).exp();
        let f = |r: f64| g(r) * sinc(2.0 * r * r / s2);
        let w = |r: f64| 2.0 * PI * r;
        let fg = rule.integrate(|r| w(r) * f(r) * g(r));
        let ff = rule.integrate(|r| w(r) * f(r) * f(r));
        let gg = rule.integrate(|r| w(r) * g(r) * g(r));
        (fg / (ff * gg).sqrt()).min(1.0)
    };
    Ok(OverlapResult { ratio, overlap, path })
}

/// Smallest ratio whose overlap reaches `target`, by bisection to 1e-4 in ratio.
pub fn threshold_ratio(target: f64, path: OverlapPath) -> Result<f64> {
    if !(target > 0.5 && target < 1.0) {
        return Err(Error::Domain(format!("target overlap must lie in (0.5, 1), got {target}")));
    }
    const HI: f64 = 1e3;
    let ov = |r: f64| cl_overlap(r, path).map(|o| o.overlap);
    if ov(HI)? < target {
        return Err(Error::Range(format!(
            "overlap {target} not reached below sigma_s/sigma_c = {HI}"
        )));
    }
    let (mut lo, mut hi) = (0.01, HI);
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if ov(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Overlaps for a list of ratios on both paths.
pub fn overlap_table(ratios: &[f64]) -> Result<Vec<(OverlapResult, OverlapResult)>> {
    ratios
        .iter()
        .map(|&r| Ok((cl_overlap(r, OverlapPath::Coincidence)?, cl_overlap(r, OverlapPath::Singles)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let o = cl_overlap(1.4161, OverlapPath::Coincidence).unwrap().overlap;
        assert!((o - 0.98991).abs() < 1e-4, "{o}");
        let o = cl_overlap(3.0 / (2.0 * 2f64.sqrt()), OverlapPath::Coincidence).unwrap().overlap;
        assert!((o - 0.95053).abs() < 1e-4, "{o}");
        assert!((cl_overlap(1.0, OverlapPath::Coincidence).unwrap().overlap - 0.93554).abs() < 1e-4);
    }

    #[test]
    fn large_ratio_tends_to_one() {
        let o = cl_overlap(1e3, OverlapPath::Singles).unwrap().overlap;
        assert!(1.0 - o < 1e-12);
        assert_eq!(cl_overlap(f64::INFINITY, OverlapPath::Coincidence).unwrap().overlap, 1.0);
    }

    #[test]
    fn thresholds() {
        let tc = threshold_ratio(0.99, OverlapPath::Coincidence).unwrap();
        let ts = threshold_ratio(0.99, OverlapPath::Singles).unwrap();
        assert!((tc - 1.41818).abs() < 2e-4, "{tc}");
        assert!((ts / tc - 2f64.sqrt()).abs() < 1e-3);
        let t95 = threshold_ratio(0.95, OverlapPath::Coincidence).unwrap();
        assert!((t95 - 1.05823).abs() < 2e-4);
    }

    #[test]
    fn bad_inputs() {
        assert!(cl_overlap(0.0, OverlapPath::Singles).is_err());
        assert!(threshold_ratio(0.4, OverlapPath::Singles).is_err());
        assert!(threshold_ratio(1.0, OverlapPath::Singles).is_err());
    }
}

//! Piecewise-analytic SLM transfer functions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Indicator of a closed disk.
    Disk { center: Vec2, radius: f64 },
    /// `+1` for `q_x < edge`, `-1` for `q_x > edge`. An infinite edge gives a flat hologram.
    PiStep { edge: f64 },
}

impl Primitive {
    pub fn eval(&self, q: Vec2) -> f64 {
        match *self {
            Primitive::Disk { center, radius } => {
                let d = [q[0] - center[0], q[1] - center[1]];
                if norm2(d) <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            Primitive::PiStep { edge } => {
                if q[0] < edge {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Signed regions whose indicators sum to this primitive, shifted so the
    /// optic axis sits at the origin when the hologram frame is offset by `origin`.
    pub(crate) fn regions(&self, origin: f64) -> Vec<(f64, Region)> {
        match *self {
            Primitive::Disk { center, radius } => vec![(
                1.0,
                Region::Disk {
                    center: [center[0] - origin, center[1]],
                    radius,
                },
            )],
            Primitive::PiStep { edge } => {
                let e = edge - origin;
                let mut out = Vec::with_capacity(2);
                if e > f64::NEG_INFINITY {
                    out.push((1.0, Region::Slab { lo: f64::NEG_INFINITY, hi: e }));
                }
                if e < f64::INFINITY {
                    out.push((-1.0, Region::Slab { lo: e, hi: f64::INFINITY }));
                }
                out
            }
        }
    }
}

/// Integration region in one photon's momentum plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// `lo < q_x < hi`, any `q_y`.
    Slab { lo: f64, hi: f64 },
    Disk { center: Vec2, radius: f64 },
}

/// `Phi(q) = global_gain * sum_k coefficients[k] * primitives[k](q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hologram {
    pub primitives: Vec<Primitive>,
    pub coefficients: Vec<Complex64>,
    pub global_gain: f64,
}

impl Hologram {
    /// Builds a hologram, rejecting any whose modulus could exceed 1.
    pub fn new(primitives: Vec<Primitive>, coefficients: Vec<Complex64>, global_gain: f64) -> Result<Self> {
        if primitives.len() != coefficients.len() {
            return Err(Error::Validation(format!(
                "{} primitives but {} coefficients",
                primitives.len(),
                coefficients.len()
            )));
        }
        let h = Hologram {
            primitives,
            coefficients,
            global_gain,
        };
        let bound = h.modulus_bound();
        if !(bound <= 1.0 + 1e-12) {
            return Err(Error::Validation(format!("hologram modulus bound {bound} exceeds 1")));
        }
        Ok(h)
    }

    pub fn pi_step(edge: f64) -> Self {
        Hologram {
            primitives: vec![Primitive::PiStep { edge }],
            coefficients: vec![Complex64::new(1.0, 0.0)],
            global_gain: 1.0,
        }
    }

    /// `Phi = 1` everywhere.
    pub fn flat() -> Self {
        Self::pi_step(f64::INFINITY)
    }

    pub fn disk(center: Vec2, radius: f64) -> Self {
        Hologram {
            primitives: vec![Primitive::Disk { center, radius }],
            coefficients: vec![Complex64::new(1.0, 0.0)],
            global_gain: 1.0,
        }
    }

    pub fn eval(&self, q: Vec2) -> Complex64 {
        let s: Complex64 = self
            .primitives
            .iter()
            .zip(&self.coefficients)
            .map(|(p, c)| c * p.eval(q))
            .sum();
        s * self.global_gain
    }

    /// Upper bound on `max_q |Phi(q)|`: `gain * max|c|` for pairwise disjoint
    /// disks, `gain * sum|c|` otherwise.
    pub fn modulus_bound(&self) -> f64 {
        let disjoint_disks = self.primitives.iter().all(|p| matches!(p, Primitive::Disk { .. }))
            && self.primitives.iter().enumerate().all(|(i, a)| {
                self.primitives[i + 1..].iter().all(|b| disks_disjoint(a, b))
            });
        let g = self.global_gain.abs();
        if disjoint_disks {
            g * self.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max)
        } else {
            g * self.coefficients.iter().map(|c| c.norm()).sum::<f64>()
        }
    }
}

fn disks_disjoint(a: &Primitive, b: &Primitive) -> bool {
    match (a, b) {
        (
            Primitive::Disk { center: ca, radius: ra },
            Primitive::Disk { center: cb, radius: rb },
        ) => norm2([ca[0] - cb[0], ca[1] - cb[1]]).sqrt() > ra + rb,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_step_values() {
        let h = Hologram::pi_step(3.0);
        assert_eq!(h.eval([2.9, 100.0]).re, 1.0);
        assert_eq!(h.eval([3.1, -4.0]).re, -1.0);
        assert_eq!(Hologram::flat().eval([1e12, 0.0]).re, 1.0);
    }

    #[test]
    fn overlapping_gain_is_rejected() {
        let prims = vec![
            Primitive::Disk { center: [0.0, 0.0], radius: 2.0 },
            Primitive::Disk { center: [1.0, 0.0], radius: 2.0 },
        ];
        let c = vec![Complex64::new(0.8, 0.0); 2];
        assert!(Hologram::new(prims.clone(), c.clone(), 1.0).is_err());
        assert!(Hologram::new(prims, c, 0.5).is_ok());
    }

    #[test]
    fn pi_step_regions_cover_plane() {
        let r = Primitive::PiStep { edge: 2.0 }.regions(0.5);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0], (1.0, Region::Slab { lo: f64::NEG_INFINITY, hi: 1.5 }));
        assert_eq!(Primitive::PiStep { edge: f64::INFINITY }.regions(0.0).len(), 1);
    }
}

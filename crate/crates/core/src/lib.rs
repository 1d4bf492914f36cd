//! Collected biphoton JTMA modeling for SPDC sources.
//!
//! The crate covers the amplitude family ([`model`]), the tensor-product
//! quadrature engine ([`quadrature`]), the 2D pi-step scan forward model
//! and its closed forms ([`scan`]), slice-wise fitting ([`fit`]), the
//! collection-limited validity check ([`validate`]), and discrete
//! pixel-basis design ([`basis`], [`metrics`], [`herald`]).
//!
//! All momenta are in rad/mm.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitude;
pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod fit;
pub mod herald;
pub mod hologram;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod scan;
pub mod validate;

pub use error::{Error, Result};
pub use hologram::{Hologram, Primitive};
pub use model::{JtmaParams, Model, OpticalSystem, ScaledMomentumConstants, Vec2};
pub use quadrature::{Integral, QuadratureSpec};

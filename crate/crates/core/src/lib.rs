//! Single-BS, single-RIS positioning of a multi-antenna mobile station from
//! one uplink mmWave MIMO-OFDM frame.
//!
//! Pipeline: [`channel`] synthesizes the received frame, [`coarse_est`]
//! produces grid-based initial channel parameters, [`sage`] refines them,
//! [`positioning`] maps them to MS position, orientation and scatterer
//! positions, and [`bounds`] gives the matching Cramér-Rao bounds. The
//! [`harness`] module runs Monte Carlo sweeps over transmit power.
//!
//! The geometric kernel in [`geometry`] is generic over the scalar type; the
//! signal-processing stages use `f64`.

pub mod bounds;
pub mod channel;
pub mod coarse_est;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod lm;
pub mod params;
pub mod positioning;
pub mod rng;
pub mod sage;
pub mod search;

pub use error::{Error, Result};
pub use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;

pub type Vec3 = geometry::Vec3<f64>;
pub type Geometry = geometry::ScenarioGeometry<f64>;
pub type Arrays = geometry::ArrayLayout<f64>;

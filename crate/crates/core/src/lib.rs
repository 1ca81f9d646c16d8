//! Synthetic tourist mobility: GPS cohort priors, trip scope, quota-calibrated
//! ward itineraries and quarter-hour activity chains, plus the evaluation suite.

pub mod chain;
pub mod clock;
pub mod cohort;
pub mod config;
pub mod eval;
pub mod geo;
pub mod io;
pub mod matrix;
pub mod mock;
pub mod pipeline;
pub mod population;
pub mod prob;
pub mod routing;
pub mod scalar;
pub mod scope;
pub mod seed;
pub mod synthetic;

pub use geo::{WardId, Wards};

pub type GeoPoint = geo::GeoPoint<f64>;
pub type DistanceMatrix = geo::DistanceMatrix<f64>;
pub type SquareMatrix = matrix::SquareMatrix<f64>;

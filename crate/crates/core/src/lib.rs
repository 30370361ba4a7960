//! Building height estimation from shadows in single overhead images.
//!
//! The pipeline: locate the sun for the image's place and capture time
//! ([`solar`]), convert annotated shadow lengths to heights
//! ([`photogrammetry`]), recover an unknown capture time from buildings of
//! known height ([`time_inference`]), ingest and clean labelled datasets
//! ([`dataset`]), train a shadow-length regressor through the height loss
//! ([`regressor`]) and score the results ([`eval`]).
//!
//! Geometry, loss and metric code is generic over [`Scalar`] (`f32`/`f64`);
//! the aliases below fix the scalar to `f64`, which the solar ephemeris and
//! the stored records use.

pub mod dataset;
pub mod eval;
pub mod photogrammetry;
pub mod regressor;
pub mod scalar;
pub mod search;
pub mod solar;
pub mod time_inference;

pub use scalar::Scalar;
pub use solar::{GeoLocation, SolarPosition, UtcInstant};

pub type ShadowLength = photogrammetry::ShadowLength<f64>;
pub type BuildingHeight = photogrammetry::BuildingHeight<f64>;
pub type GroundSampling = photogrammetry::GroundSampling<f64>;
pub type PixelPoint = photogrammetry::PixelPoint<f64>;
pub type RegressorModel = regressor::RegressorModel<f64>;
pub type EvalReport = eval::EvalReport<f64>;

pub type ShadowLengthF32 = photogrammetry::ShadowLength<f32>;
pub type BuildingHeightF32 = photogrammetry::BuildingHeight<f32>;
pub type RegressorModelF32 = regressor::RegressorModel<f32>;

//! Neural implied-volatility surfaces with no-arbitrage penalties.
//!
//! The crate covers the full calibration loop: quote cleaning and
//! implied-volatility inversion ([`data`], [`bs`]), the smile-activated
//! network architectures ([`models`]), evaluable no-arbitrage conditions
//! ([`constraints`]), the penalized objective and its exact gradient
//! ([`losses`]), Adam training ([`training`]), an SSVI benchmark ([`ssvi`])
//! and accuracy/density diagnostics ([`evaluation`]).
//!
//! Numerical code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what training and the command-line tool use.

pub mod bs;
pub mod constraints;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod jet;
pub mod losses;
pub mod models;
mod scalar;
pub mod ssvi;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Jet64 = jet::Jet<f64>;
pub type Model = models::SurfaceModel<f64>;
pub type Model32 = models::SurfaceModel<f32>;
pub type HyperParams = losses::HyperParams<f64>;
pub type DataBatch = losses::DataBatch<f64>;
pub type ConditionGrid = constraints::ConditionGrid<f64>;
pub type PenaltyGrids = constraints::PenaltyGrids<f64>;
pub type SingleParams = models::SingleModelParams<f64>;
pub type MultiParams = models::MultiModelParams<f64>;
pub type VanillaParams = models::VanillaModelParams<f64>;





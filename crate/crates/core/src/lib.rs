#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod direct;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod manifold;
pub mod measurements;
pub mod mds;
pub mod metrics;
pub mod pathloss;
pub mod scalar;
pub mod sdp;
pub mod simulator;
pub mod spring;

pub use error::{Error, Result};
pub use scalar::Real;

pub use experiment::{run_experiment, write_outputs, Estimator, ExperimentConfig, ExperimentInput};

pub type PathlossParams64 = pathloss::PathlossParams<f64>;
pub type PathlossParams32 = pathloss::PathlossParams<f32>;
pub type RssiMatrix64 = measurements::RssiMatrix<f64>;
pub type RssiMatrix32 = measurements::RssiMatrix<f32>;
pub type MeasurementSet64 = measurements::MeasurementSet<f64>;
pub type MeasurementSet32 = measurements::MeasurementSet<f32>;
pub type DistanceEstimateMatrix64 = measurements::DistanceEstimateMatrix<f64>;
pub type DistanceEstimateMatrix32 = measurements::DistanceEstimateMatrix<f32>;
pub type Configuration64 = geometry::Configuration<f64>;
pub type Configuration32 = geometry::Configuration<f32>;
pub type ScenarioSpec64 = simulator::ScenarioSpec<f64>;
pub type ScenarioSpec32 = simulator::ScenarioSpec<f32>;
pub type SdpProblem64 = sdp::SdpProblem<f64>;
pub type SdpProblem32 = sdp::SdpProblem<f32>;

//! Policy optimization with least-squares bonus exploration for adversarial
//! linear MDPs with bandit feedback.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the `f64` instantiation.

pub mod agent;
pub mod baselines;
pub mod dp;
pub mod envgen;
pub mod linalg;
pub mod mgr;
pub mod model;
pub mod olspe;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod tables;
pub mod validation;

pub use scalar::Scalar;

pub type Model = model::LinearMdpModel<f64>;
pub type Policy = policy::PolicyTable<f64>;
pub type Costs = model::EpisodeCosts<f64>;
pub type Schedule = model::CostSchedule<f64>;
pub type Mat = linalg::Matrix<f64>;

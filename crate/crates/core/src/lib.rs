//! Hybrid filtered-basis-function feedforward tracking control.
//!
//! A fixed physics model `G_pb` filters a B-spline input basis; a linear
//! data-driven correction `G_dd`, trained online by recursive least squares
//! on delayed measurements, turns it into the hybrid predictor used by a
//! receding-horizon least-squares controller. A closed-loop spectral-radius
//! monitor flags weight updates that would destabilize the learning loop.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod hybrid;
pub mod linalg;
pub mod lti;
pub mod oracle;
pub mod plant;
pub mod scalar;
pub mod stability;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TransferFunction = lti::ContinuousTransferFunction<f64>;
pub type StateSpace = lti::DiscreteStateSpace<f64>;
pub type Basis = basis::BasisSet<f64>;
pub type Model = hybrid::HybridModel<f64>;
pub type Lift = hybrid::DataDrivenLift<f64>;
pub type TrackingController = controller::Controller<f64>;
pub type ClosedLoop = stability::ClosedLoopSystem<f64>;
pub type Simulator = plant::SimulatedPlant<f64>;

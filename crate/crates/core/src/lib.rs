//! Maximum-likelihood estimation of unknown noise covariances in linear
//! Gaussian state-space models.
//!
//! The likelihood of the primary measurement sequence and a set of sparse
//! supervisory measurements is evaluated by a Kalman filter whose state is
//! augmented with copies of the supervised past states. Gradients with respect
//! to the covariance parameters are available in closed form, either by
//! propagating sensitivities alongside the filter ([`grad_forward`]) or by
//! an adjoint sweep over a stored trace ([`grad_reverse`]).
//!
//! The crate is `no_std` (it needs `alloc`). Enabling the `std` feature only
//! adds wall-clock timing to calibration reports.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

mod error;
mod linalg;

pub mod filter;
pub mod grad_forward;
pub mod grad_reverse;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod params;

pub use error::{Error, Result};
pub use filter::{run_filter, Belief, FilterRun, FilterTrace, LossBreakdown};
pub use grad_forward::forward_gradient;
pub use grad_reverse::reverse_gradient;
pub use model::{SupervisorySpec, SystemModel};
pub use optimizer::{calibrate, CalibrationConfig, CalibrationReport, GradientMode, LossWeights};
pub use params::{CovKind, CovParam};

/// Real matrix type used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Real vector type used throughout.
pub type Vector = nalgebra::DVector<f64>;

/// A loss value together with its gradient.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub loss: LossBreakdown,
    pub grad: Vector,
}

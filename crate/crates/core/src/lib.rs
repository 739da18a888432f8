//! Shallow teacher-student networks on standard Gaussian input.
//!
//! The population loss of a one-hidden-layer student fitting an orthonormal
//! teacher is assembled from a scalar interaction kernel
//! `g(r1, r2, u) = E[sigma(r1 x) sigma(r2 y)]`. On top of it the crate provides
//! closed-form and fixed-point one-neuron optima, copy-average critical points,
//! gradient-flow simulation and a sweep harness.

pub mod activation;
pub mod critical;
pub mod error;
pub mod flow;
pub mod harness;
pub mod kernel;
pub mod loss;
pub mod network;
pub mod quadrature;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use kernel::{KernelMethod, KernelSpec, McEstimate};
pub use network::{to_order_params, OrderParams, StudentNet, TeacherFrame, TeacherNet};
pub use critical::{CriticalKind, CriticalPoint};
pub use flow::{FlowConfig, FlowRecord, InitScheme, Label};

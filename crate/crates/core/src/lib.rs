//! Nonlinear modal analysis and synthesis for discrete mechanical systems.
//!
//! The crate computes energy-dependent nonlinear modes (eigenfrequency,
//! modal damping ratio and multi-harmonic mode shape) from the complex
//! Fourier-Galerkin eigenproblem, follows them over energy with
//! pseudo-arc-length continuation, and uses them in a single-nonlinear-mode
//! reduced-order model to synthesize forced responses, backbone curves and
//! self-excited limit cycles.
//!
//! Module map:
//!
//! - [`model`]: mass/damping/stiffness matrices with local nonlinear elements,
//!   plus the 2-DOF cubic and clamped-beam fixtures.
//! - [`aft`]: harmonic signals and the alternating frequency-time evaluation
//!   of nonlinear force harmonics with analytical Jacobians.
//! - [`linmodal`]: linear modal bases and dynamic compliance.
//! - [`continuation`]: the predictor-corrector path follower shared by the
//!   solvers.
//! - [`cnma`]: the nonlinear eigenproblem, its Newton solver and branch
//!   continuation.
//! - [`synthesis`]: modal database, FRF, backbone, LCO and reconstruction.
//! - [`validate`]: reference harmonic balance and time integration.
//! - [`io`]: model files and tabular exports.

pub mod aft;
pub mod cnma;
pub mod continuation;
pub mod error;
pub mod io;
pub mod linalg;
pub mod linmodal;
pub mod model;
pub mod synthesis;
pub mod validate;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dense real matrix used throughout the crate.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout the crate.
pub type RVec = nalgebra::DVector<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<Complex64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<Complex64>;

//! Capacity-achieving transmit covariance for MIMO channels under
//! per-antenna power constraints.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: Hermitian eigendecomposition, SVD and PSD helpers.
//! - [`channel`]: channel model, constraints and the rate functional.
//! - [`perantenna`]: closed-form covariance for a fixed dual variable and the
//!   dual iterations that drive it to the per-antenna optimum.
//! - [`baselines`]: sum-power water-filling, independent (MAC) signalling,
//!   forced channel eigenbeams and the MISO closed form.
//! - [`oracle`]: an independent projected-gradient solver and a brute-force
//!   grid search used to cross-check everything above.
//! - [`ergodic`]: Rayleigh Monte-Carlo sweeps and CSV emission.
//! - [`verify`]: the acceptance battery, shared by the CLI and the test suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod ergodic;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod perantenna;
pub mod verify;

pub use channel::{ChannelMatrix, ConstraintMode, InputCovariance, PowerConstraint};
pub use error::{Error, Result};
pub use numerics::ComplexMatrix;
pub use perantenna::{opt_cov, SolveReport, SolverOptions};

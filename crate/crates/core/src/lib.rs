//! Heavy-tailed probability toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`]: one-dimensional heavy-tailed laws (tails, hazards, quantiles,
//!   samplers, mean-excess function).
//! * [`procsim`]: exact stationary samplers for m-dependent constructions.
//! * [`conditions`]: finite-grid checkers for tail-independence and
//!   boundary conditions, with Pass/Fail/Inconclusive verdicts.
//! * [`ldmc`]: Monte Carlo estimators of `P(S_n > x)` and the Prokhorov and
//!   Fuk-Nagaev bounds.
//! * [`linproc`]: coefficient statistics and large-deviation experiments for
//!   linear processes.
//! * [`covmax`]: maxima of sample covariance matrix entries.
//!
//! All Monte Carlo routines are deterministic functions of a 64-bit seed and
//! produce identical output for any worker count (see [`exec`]).

pub mod conditions;
pub mod covmax;
pub mod dist;
pub mod error;
pub mod exec;
pub mod ldmc;
pub mod linproc;
pub mod numeric;
pub mod procsim;
pub mod stats;

pub use error::{Error, Result};

//! Training-set debugging with trusted items.
//!
//! Given a possibly buggy labeled training set, a handful of expert-verified
//! trusted items and a kernel learner, the debugger looks for the smallest
//! label changes that make the retrained model agree with the trusted items.
//! Changed items are flagged as likely bugs, ranked, and paired with a
//! suggested fix.

pub mod baselines;
pub mod bench;
pub mod classification;
pub mod driver;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod learners;
pub mod regression;
pub mod types;

pub use error::{DutiError, Result};

//! Cox regression for clinical-trial data whose long-term follow-up comes from
//! an incompletely linked observational source.
//!
//! Subjects censored in the trial are only informative if their records were
//! linked. The inverse-probability-of-linkage-weighted estimator models the
//! linkage probability with logistic regression and reweights the linked
//! subjects; [`estimators`] also provides the oracle, complete-case,
//! complete-case-plus and not-linked-as-censored comparators.

pub mod coxfit;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod linkage;
pub mod montecarlo;
pub mod simgen;
pub mod variance;

pub use error::{Error, Result};

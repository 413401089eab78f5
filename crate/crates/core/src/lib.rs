//! Longitudinal dyadic growth models for role-asymmetric dyads.
//!
//! The pipeline runs from long-format panel data through person-level
//! centering and pairwise stacking to design matrices, then fits the
//! common-fate growth model or its actor–partner extension by maximum
//! likelihood or by Gibbs sampling, and reports estimates under dummy or
//! effect coding of the role indicator.

pub mod data;
pub mod design;
pub mod error;
pub mod fit_bayes;
pub mod fit_ml;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod transform;

pub use error::{Error, ErrorClass, Result};

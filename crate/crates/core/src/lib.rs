//! Certified robustness of recurrent text classifiers against programmable
//! string and tree transformations.
//!
//! A perturbation space is a set of match-and-replace transformations, each
//! with a budget. [`cert`] over-approximates the final LSTM states of every
//! string in the space with interval boxes, sharing work between strings
//! through a memo table over tight sub-spaces; [`treecert`] does the same for
//! binary TreeLSTMs. Exhaustive enumeration and a search-based attack give
//! the matching ground truth and lower bounds.

pub mod cert;
pub mod error;
pub mod harness;
pub mod interval;
pub mod model;
pub mod perturbation;
pub mod treecert;
pub mod vocab;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalBox, Matrix};
pub use model::{Arch, ModelBundle, State};
pub use perturbation::{PerturbationSpace, Transformation};
pub use vocab::{Symbol, Vocab};

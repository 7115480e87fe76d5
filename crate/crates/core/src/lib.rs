//! Stochastic And-Or scene grammar: parse graphs, energies, samplers,
//! weight learning, and projection to 2D instance maps.

// Range checks are written `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod energy;
pub mod error;
pub mod grammar;
pub mod learning;
pub mod mcmc;
pub mod projection;

pub use error::{Error, Result};
pub use grammar::{GrammarSpec, ObjectInstance, ParseGraph, Relation, Weights};

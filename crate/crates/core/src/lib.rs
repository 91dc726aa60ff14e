//! Mean-field loss networks with migration: equilibria, large-deviation
//! rate functions, quasipotentials and exit-time simulation.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod domain;
pub mod equilibria;
pub mod error;
pub mod meanfield;
pub mod model;
pub mod ratefn;
pub mod sim;

pub use domain::Domain;
pub use error::{Error, Result};
pub use model::{ModelParams, Occupancy, StateSpace, TangentVector};

//! Fisher information carried by quantum-jump measurement records.
//!
//! The crate models continuously monitored open quantum systems in Lindblad
//! form, simulates jump records, and evaluates how much information those
//! records hold about a model parameter.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compression;
pub mod config;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod monitoring;
pub mod parallel;
pub mod quadrature;
pub mod renewal;
pub mod trajectory;

pub use error::{Error, Result};

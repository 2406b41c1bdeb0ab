//! Discrete-time heterogeneous multi-agent systems under multi-step coupling.
//!
//! Each integer round runs the node dynamics once and the linear coupling
//! step `K - 1` times. For large `K` every agent tracks `p_i s[t]`, where `s`
//! solves the blended dynamics `s[t+1] = sum_i q_i f_i(t, p_i s[t])` and
//! `(p, q)` is the Perron pair of the weight matrix.

// `!(x < y)` is used on purpose so that NaN fails every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod apps;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
mod linalg;
pub mod sim;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};

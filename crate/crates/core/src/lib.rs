//! Simulation of a two-qubit register built from a pair of dipolar-coupled
//! NV centres: geometry, Hamiltonians, propagation, gate sequences, readout,
//! benchmarking, charge statistics and photophysics.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod benchmarking;
pub mod charge;
pub mod clifford;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod geometry;
pub mod hamiltonian;
pub mod propagation;
pub mod photophysics;
pub mod readout;
pub mod sequences;

pub use error::{Error, Result};

//! Method-of-Moments channel modelling for RIS-assisted MIMO links.
//!
//! The crate meshes wire-equivalent antennas and RIS unit cells, assembles
//! the partitioned impedance matrix of the whole scene, and derives
//! port-to-port channel matrices from it, either exactly (through the
//! admittance matrix of the loaded system) or with the reduced cascaded
//! model `Z_RS Phi_S Z_ST`.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod em_kernel;
pub mod error;
pub mod geometry;
pub mod link_metrics;
pub mod linalg;
pub mod network;
pub mod quadrature;
pub mod ris_design;

pub use error::{Error, Result};

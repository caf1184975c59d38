//! Bipartite drug–target link prediction.
//!
//! The pipeline: build a heterogeneous drug/target network from base
//! similarities and known associations, encode nodes with a self-augmented
//! multi-head graph attention network, turn each layer's embeddings into
//! Gaussian interaction profile kernels, fuse them with the base kernels,
//! and predict unknown associations with a dual Laplacian regularized
//! least-squares solver trained by alternating closed-form updates and
//! Adam steps on the encoder.

pub mod autodiff;
pub mod cli;
pub mod dlaprls;
pub mod error;
pub mod eval;
pub mod gat;
pub mod ingest;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

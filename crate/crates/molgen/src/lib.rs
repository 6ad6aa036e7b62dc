//! Three-stage permutation-invariant GAN for molecular graphs.
//!
//! The crate bundles everything the pipeline needs: an in-house
//! reverse-mode autodiff engine ([`tensor`]), equivariant GNN layers
//! ([`gnn`]), the (A, X, W) graph encoding ([`graph`]), SMILES and validity
//! chemistry ([`chem`]), the staged GAN itself ([`stages`]), evaluation
//! metrics ([`metrics`]), and executable checks of the equivariance theory
//! ([`verify`]).

pub mod chem;
pub mod config;
pub mod dataset;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod stages;
pub mod tensor;
pub mod verify;

//! Barycentric aggregation of Gaussian posteriors for multimodal VAEs.

pub mod barycenter;
pub mod cli;
pub mod data;
pub mod diffgraph;
pub mod eval;
pub mod gaussian;
pub mod linalg;
pub mod mmvae;
pub mod rng;

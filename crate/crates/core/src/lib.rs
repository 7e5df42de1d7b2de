//! Simulation and limit theory for the two-alternating-urn generalized Pólya
//! model and its multitype Galton-Watson embedding.

pub mod corpus;
pub mod embedding;
pub mod harness;
pub mod limits;
pub mod model;
pub mod poly;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod urn;

//! Desk-scale 2D bidomain cardiac electrophysiology.
//!
//! The crate simulates transmembrane and extracellular potentials on an
//! idealized two-ventricle cross-section embedded in a rectangular torso,
//! produces synthetic ECGs through a precomputed torso transfer matrix,
//! builds POD reduced-order models from simulation snapshots, and identifies
//! membrane parameters or infarct locations from ECG mismatch with a
//! surrogate-assisted genetic algorithm.
//!
//! Module map:
//! - [`mesh`]: idealized geometry, triangulation, region tags, persistence
//! - [`ionic`]: two-variable membrane model and gate updates
//! - [`fem`]: P1 assembly and the constrained symmetric solver
//! - [`bidomain`]: full-order semi-implicit time integration
//! - [`ecg`]: torso Laplace solve, transfer matrix, lead formation
//! - [`pod`]: snapshot collection, SVD basis, reduced operators, ROM stepping
//! - [`postproc`]: APD/DI detection, restitution, ECG metrics
//! - [`inverse`]: cost function, genetic algorithm, RBF surrogate
//! - [`config`] / [`manifest`]: run configuration and reproducibility records
//! - [`experiments`]: pinned end-to-end experiment recipes

pub mod bidomain;
pub mod config;
pub mod container;
pub mod ecg;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod inverse;
pub mod ionic;
pub mod manifest;
pub mod mesh;
pub mod pod;
pub mod postproc;

pub use error::{Error, Result};

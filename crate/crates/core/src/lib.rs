//! Collaborative filtering with group-alignment and global-uniformity
//! regularization, and a harness for measuring popularity bias.
//!
//! The pipeline is `dataset` (load, 5-core, split, popularity groups) →
//! `trainer` (BPR + MMD alignment + Gaussian-potential uniformity + L2, Adam)
//! → `eval` (HR/NDCG, PRU, DP, exposure and representation diagnostics).

pub mod backbones;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;

//! Nearest-neighbors matrix factorization (NNMF) and the experimental tooling
//! around it: dataset preparation, shrunk-cosine neighborhoods, SGD trainers
//! for Funk, BPR and probabilistic MF, classic baselines, top-N evaluation and
//! seed-stability measurement.
//!
//! NNMF replaces the user and item factor matrices `P`, `Q` of plain matrix
//! factorization with `S^U P` and `S^I Q`, where `S^U`, `S^I` are fixed sparse
//! similarity matrices with a unit diagonal. With identity similarities every
//! trainer in [`factorization`] reduces, bit for bit, to its plain-MF form.

pub mod baselines;
pub mod config;
pub mod data;
pub mod dense;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod io;
pub mod pipeline;
pub mod search;
pub mod similarity;
pub mod stability;

pub use error::{Error, Result};

/// Deterministic generator used for every seeded stream in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

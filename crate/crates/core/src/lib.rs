//! Bilingual dual-encoder sentence embeddings for parallel corpus mining.
//!
//! The crate covers the whole pipeline: hashed n-gram featurization
//! ([`textpipe`]), the averaging-network towers ([`encoder`]), the
//! source-conditioned score calibration head ([`confidence`]), ranking
//! training with in-batch and hard negatives ([`trainer`]), dot-product
//! nearest-neighbor search ([`annindex`]), sentence and document mining
//! ([`miner`]), and evaluation utilities ([`evalkit`]). File formats and
//! the binary checkpoint codec live in [`io`].

pub mod annindex;
pub mod confidence;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod linalg;
pub mod miner;
pub mod model;
pub mod textpipe;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{Matrix, Real};
pub use model::{DualEncoder, ModelConfig, Side};

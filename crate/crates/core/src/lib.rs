//! Visual object tracking with hierarchical features from a recursive neural
//! network.
//!
//! A target region is warped to a canonical 32×32 observation, split into nine
//! overlapping 16×16 patches, and fed bottom-up through a shared composition
//! network over randomly generated binary merge trees. The network is trained
//! discriminatively on the first frame only; afterwards its top-node and
//! leaf-node features populate two sparse-coding dictionaries that score
//! candidate states sampled around the previous prediction.
//!
//! Module map:
//!
//! * [`imagery`]: grayscale frames, affine region warping, patch decomposition
//! * [`tree`]: patch adjacency and random merge trees
//! * [`rnn`]: parameters, forward pass, loss and backpropagation through structure
//! * [`optim`]: L-BFGS and a finite-difference gradient oracle
//! * [`sparse`]: dictionaries, non-negative sparse coding and candidate scores
//! * [`tracker`]: the end-to-end tracking loop
//! * [`eval`]: sequence ingestion, synthetic sequences and OPE metrics
//! * [`cli`]: the `rnntrack` command-line front end

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod imagery;
pub mod model;
pub mod optim;
pub mod rnn;
pub mod sparse;
pub mod tracker;
pub mod tree;

pub(crate) mod linalg;

pub use error::{Error, Result};

/// Deterministic RNG used everywhere a seed is accepted.
pub type SeedRng = rand_chacha::ChaCha8Rng;

/// Builds the RNG for `seed`, optionally on a separate stream so that
/// unrelated consumers of one user seed do not share draws.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> SeedRng {
    use rand::SeedableRng;
    let mut rng = SeedRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Learned cross-modal similarity heads over frozen image/text embeddings.
//!
//! * [`numcore`]: vectors, matrices and a small reverse-mode tape.
//! * [`embedstore`]: FGEB embedding tables and JSON dataset manifests.
//! * [`heads`]: cosine, linear, MLP and attention similarity heads.
//! * [`losses`]: in-batch and vocabulary hinge triplet losses.
//! * [`trainer`]: Adam, warm-up and fine-tune stages, checkpoints.
//! * [`evaluator`]: Mean Rank, Recall@k and reports.
//! * [`synthbench`]: seeded synthetic benchmarks.
//! * [`cli`]: the `fgmatch` command line.

pub mod cli;
pub mod embedstore;
pub mod error;
pub mod evaluator;
pub mod heads;
pub mod losses;
pub mod numcore;
pub mod synthbench;
pub mod trainer;

pub use error::{Error, FormatError, Result};

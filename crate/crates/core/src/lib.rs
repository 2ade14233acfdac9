//! Line-level risk assessment for code language models.
//!
//! Per-line internal states probed from a model are stored in [`store`]
//! files, compressed by a TopK sparse autoencoder ([`sae`]) trained with a
//! reconstruction loss plus a contrastive margin loss over pairs produced by
//! the line mutators in [`mutate`]. The sparse latents are then bound to
//! error labels by a small ranking network trained with NeuralNDCG
//! ([`rank`]), and [`eval`] holds the measurement side: Top-K hit rate,
//! snippet accuracy, Wasserstein cross-distribution distances and latent
//! diff maps. [`pipeline`] wires it all into config-driven commands.

pub mod binfile;
pub mod error;
pub mod eval;
pub mod mutate;
pub mod optim;
pub mod pipeline;
pub mod rank;
pub mod rng;
pub mod sae;
pub mod snippets;
pub mod store;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};

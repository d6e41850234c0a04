//! Desk-scale masked-language-model training dynamics lab.
//!
//! The crate trains a miniature bidirectional transformer on a synthetic
//! taxonomy corpus, checkpoints model and optimizer across training, injects
//! verbalized premises into minibatches at each checkpoint, and measures how
//! supported inferences respond via prior/posterior log-probability, PMI,
//! ranks, and MRR.
//!
//! Module map:
//! - [`diff`]: dense f64 arrays with tape-based reverse-mode differentiation
//! - [`model`]: transformer encoder with MLM and sentence-order heads
//! - [`optim`]: Adam, the LR schedule, and bit-exact checkpoints
//! - [`world`]: synthetic taxonomy, templates, corpus sampling
//! - [`probeset`]: inference examples with sibling controls
//! - [`pretrain`]: masking, sentence pairing, the training loop
//! - [`intervene`]: premise injection, one-update interventions, campaigns
//! - [`finetune`]: explicit/implicit reasoning classification
//! - [`report`], [`plot`], [`stats`]: aggregation, figures, sign test
//! - [`pipeline`]: configuration, run directories, stage drivers
//! - [`oracle`]: independent brute-force recomputations for verification
//! - [`rng`]: counter-based RNG whose state is two 64-bit words

pub mod diff;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod pretrain;
pub mod pipeline;
pub mod plot;
pub mod probeset;
pub mod report;
pub mod stats;
pub mod error;
pub mod finetune;
pub mod intervene;
pub mod rng;
pub mod world;

pub use error::{Error, Result};

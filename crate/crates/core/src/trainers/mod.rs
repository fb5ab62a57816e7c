//! Training procedures: contrastive relevance training, embedding
//! distillation, and optional masked-language-model pretraining.
//!
//! All three are seeded and deterministic: identical inputs and seeds
//! produce byte-identical parameters. Divergence (a non-finite loss,
//! activation, or gradient) surfaces as a training error carrying the
//! epoch it happened in.

pub mod adam;
pub mod contrastive;
pub mod distill;
pub mod mlm;

pub use adam::AdamState;
pub use contrastive::{
    contrastive_loss, contrastive_loss_counted, train_relevance, ContrastiveHyper,
};
pub use distill::{distill, distill_from, DistillHyper};
pub use mlm::{mlm_pretrain, MlmHyper};

use crate::error::{Error, Result};
use serde::Serialize;

/// Outcome of one training run.
#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Masked-token accuracy over the final pretraining epoch, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_accuracy: Option<f64>,
}

impl TrainReport {
    fn new(epoch_losses: Vec<f64>, wall_seconds: f64, seed: u64) -> Self {
        let final_loss = epoch_losses.last().copied().unwrap_or(0.0);
        TrainReport { epoch_losses, final_loss, wall_seconds, seed, masked_accuracy: None }
    }
}

/// Re-tag numeric failures inside a training step with the epoch index.
fn at_epoch<T>(epoch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric(msg) => Error::training(epoch, msg),
        other => other,
    })
}

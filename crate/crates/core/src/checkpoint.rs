//! Versioned JSON checkpoints of trained models.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::HyperParams;
use crate::tasks::{ModelKind, Task, TrainedModel, TrainedRun};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
}

/// Everything needed to use, or bit-exactly compare, a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: Task,
    /// Class this model scores, for classification bundles.
    pub class: Option<usize>,
    pub hyper: HyperParams,
    pub iteration: usize,
    pub model: TrainedModel,
    /// Generator state after the final sweep.
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn from_run(task: Task, class: Option<usize>, hyper: &HyperParams, run: TrainedRun) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            task,
            class,
            hyper: hyper.clone(),
            iteration: run.iteration,
            model: run.model,
            rng: run.rng,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(probe.version));
        }
        Ok(serde_json::from_str(text)?)
    }
}

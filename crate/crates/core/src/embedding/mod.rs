//! Trainable embedding, tracklet pooling, batch-hard triplet loss and Adam.

mod adam;
mod loss;
mod model;

use std::collections::BTreeSet;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use loss::{
    batch_hard_triplet_loss, euclidean, loss_gradient, model_loss, BatchHardLoss, DIST_EPS,
};
pub use model::{tracklet_feature, Architecture, Checkpoint, EmbeddingModel, Layer};

use crate::data::{CameraId, CameraPair, TrackletId};
use crate::{Error, Result};

/// Which sampler produced a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Single-camera batch (within-camera training).
    SingleCamera(CameraId),
    /// Camera-pair batch (cross-camera training).
    CameraPair(CameraPair),
    Synthetic,
}

/// `P x K` raw feature vectors, `K` per pseudo-label `0..P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub p: usize,
    pub k: usize,
    pub items: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Tracklet each item was drawn from.
    pub sources: Vec<TrackletId>,
    pub provenance: Provenance,
}

impl TripletBatch {
    /// Batch without tracklet provenance, e.g. for tests and synthetic streams.
    pub fn from_groups(groups: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = groups.len();
        let k = groups.first().map_or(0, Vec::len);
        let mut items = Vec::with_capacity(p * k);
        let mut labels = Vec::with_capacity(p * k);
        for (label, g) in groups.into_iter().enumerate() {
            labels.extend(std::iter::repeat_n(label, g.len()));
            items.extend(g);
        }
        let sources = vec![0; items.len()];
        let batch = Self {
            p,
            k,
            items,
            labels,
            sources,
            provenance: Provenance::Synthetic,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Contract(format!(
                "batch needs P >= 2 pseudo-labels, got {}",
                self.p
            )));
        }
        if self.items.len() != self.p * self.k || self.labels.len() != self.items.len() {
            return Err(Error::Contract(format!(
                "batch has {} items / {} labels, expected {}",
                self.items.len(),
                self.labels.len(),
                self.p * self.k
            )));
        }
        let distinct: BTreeSet<usize> = self.labels.iter().copied().collect();
        if distinct.len() != self.p || distinct.iter().any(|&l| l >= self.p) {
            return Err(Error::Contract("labels must be exactly 0..P".into()));
        }
        for l in 0..self.p {
            if self.labels.iter().filter(|&&x| x == l).count() != self.k {
                return Err(Error::Contract(format!("label {l} does not have K items")));
            }
        }
        Ok(())
    }
}

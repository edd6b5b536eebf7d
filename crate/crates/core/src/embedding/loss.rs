//! Batch-hard triplet loss and its gradient.
//!
//! For every anchor the loss takes the farthest same-label item and the
//! nearest different-label item under plain Euclidean distance and sums
//! `[margin + d_pos - d_neg]+` over all anchors. The anchor itself counts
//! among its positives (distance 0), so with all-equal positives the first
//! index wins the tie.
//!
//! Subgradient conventions: argmax/argmin ties go to the lowest item index
//! and the hinge is treated as active at exactly zero.

use super::model::EmbeddingModel;
use super::TripletBatch;
use crate::{Error, Result};

/// Floor on squared distance inside the square root of the distance
/// gradient.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchHardLoss {
    pub value: f64,
    /// Per anchor: whether its hinge term is active (`>= 0`).
    pub active: Vec<bool>,
    pub hardest_positive: Vec<usize>,
    pub hardest_negative: Vec<usize>,
    pub positive_dist: Vec<f64>,
    pub negative_dist: Vec<f64>,
}

impl BatchHardLoss {
    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn batch_hard_triplet_loss(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
) -> Result<BatchHardLoss> {
    if embeddings.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::Contract(format!(
            "margin must be >= 0, got {margin}"
        )));
    }
    let n = embeddings.len();
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::Contract(
            "batch needs at least two distinct labels to form negatives".into(),
        ));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&embeddings[i], &embeddings[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut out = BatchHardLoss {
        value: 0.0,
        active: Vec::with_capacity(n),
        hardest_positive: Vec::with_capacity(n),
        hardest_negative: Vec::with_capacity(n),
        positive_dist: Vec::with_capacity(n),
        negative_dist: Vec::with_capacity(n),
    };
    for a in 0..n {
        let mut pos = (usize::MAX, f64::NEG_INFINITY);
        let mut neg = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            let d = dist[a * n + j];
            if labels[j] == labels[a] {
                if d > pos.1 {
                    pos = (j, d);
                }
            } else if d < neg.1 {
                neg = (j, d);
            }
        }
        let term = margin + pos.1 - neg.1;
        let active = term >= 0.0;
        if active {
            out.value += term;
        }
        out.active.push(active);
        out.hardest_positive.push(pos.0);
        out.hardest_negative.push(neg.0);
        out.positive_dist.push(pos.1);
        out.negative_dist.push(neg.1);
    }
    Ok(out)
}

/// Loss of `model` on `batch` together with its gradient with respect to
/// the model parameters.
pub fn loss_gradient(
    model: &EmbeddingModel,
    batch: &TripletBatch,
    margin: f64,
) -> Result<(BatchHardLoss, Vec<f64>)> {
    batch.validate()?;
    let mut embeddings = Vec::with_capacity(batch.items.len());
    let mut caches = Vec::with_capacity(batch.items.len());
    for x in &batch.items {
        if x.len() != model.d_raw() {
            return Err(Error::Dimension {
                expected: model.d_raw(),
                got: x.len(),
            });
        }
        let (e, c) = model.forward(x);
        embeddings.push(e);
        caches.push(c);
    }
    let loss = batch_hard_triplet_loss(&embeddings, &batch.labels, margin)?;

    let d = model.d_emb();
    let mut de = vec![vec![0.0; d]; embeddings.len()];
    for a in 0..embeddings.len() {
        if !loss.active[a] {
            continue;
        }
        // +D(a, p) - D(a, n)
        for (other, sign) in [
            (loss.hardest_positive[a], 1.0),
            (loss.hardest_negative[a], -1.0),
        ] {
            if other == a {
                continue;
            }
            let diff: Vec<f64> = embeddings[a]
                .iter()
                .zip(&embeddings[other])
                .map(|(x, y)| x - y)
                .collect();
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            let inv = sign / sq.max(DIST_EPS).sqrt();
            for k in 0..d {
                let g = inv * diff[k];
                de[a][k] += g;
                de[other][k] -= g;
            }
        }
    }

    let mut grad = vec![0.0; model.params().len()];
    for ((x, cache), g) in batch.items.iter().zip(&caches).zip(&de) {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        model.backward(x, cache, g, &mut grad);
    }
    Ok((loss, grad))
}

/// Loss only, for callers that do not need gradients.
pub fn model_loss(model: &EmbeddingModel, batch: &TripletBatch, margin: f64) -> Result<f64> {
    let embeddings = batch
        .items
        .iter()
        .map(|x| model.embed(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_hard_triplet_loss(&embeddings, &batch.labels, margin)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_give_margin_per_anchor() {
        let e = vec![vec![0.5, -0.25]; 16];
        let labels: Vec<usize> = (0..4).flat_map(|p| [p; 4]).collect();
        let l = batch_hard_triplet_loss(&e, &labels, 0.3).unwrap();
        assert!((l.value - 4.8).abs() < 1e-12);
        assert_eq!(l.num_active(), 16);
    }

    #[test]
    fn separated_clusters_give_zero() {
        let mut e = Vec::new();
        let mut labels = Vec::new();
        for p in 0..3 {
            for k in 0..3 {
                e.push(vec![10.0 * p as f64 + 0.01 * k as f64, 0.0]);
                labels.push(p);
            }
        }
        let l = batch_hard_triplet_loss(&e, &labels, 0.3).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.num_active(), 0);
    }

    #[test]
    fn single_label_is_contract_error() {
        let e = vec![vec![0.0]; 4];
        assert!(matches!(
            batch_hard_triplet_loss(&e, &[0, 0, 0, 0], 0.3),
            Err(Error::Contract(_))
        ));
        assert!(batch_hard_triplet_loss(&e, &[0, 0, 1, 1], -0.1).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        // items 1 and 2 are both at distance 1 from anchor 0
        let e = vec![vec![0.0], vec![1.0], vec![-1.0], vec![5.0]];
        let l = batch_hard_triplet_loss(&e, &[0, 0, 0, 1], 0.0).unwrap();
        assert_eq!(l.hardest_positive[0], 1);
        let e = vec![vec![0.0], vec![9.0], vec![2.0], vec![-2.0]];
        let l = batch_hard_triplet_loss(&e, &[0, 0, 1, 1], 0.0).unwrap();
        assert_eq!(l.hardest_negative[0], 2);
    }
}

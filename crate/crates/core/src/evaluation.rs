//! Retrieval metrics (CMC, mAP) over tracklet galleries, association
//! precision/recall, and the fragmentation re-match test.
//!
//! Retrieval uses tracklet-level features pooled over every frame, so the
//! numbers depend only on the model and the data. No timestamps are used.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::association::MatchSet;
use crate::data::{CameraId, IdentityId, Tracklet, TrackletDataset, TrackletId};
use crate::embedding::{euclidean, tracklet_feature, EmbeddingModel};
use crate::par;
use crate::simulator::GroundTruth;
use crate::{Error, Result};

/// Query/gallery split with per-query validity.
///
/// Gallery entries with the query's identity *and* camera are excluded for
/// that query, as is the query itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalProtocol {
    pub queries: Vec<TrackletId>,
    pub gallery: Vec<TrackletId>,
    query_meta: Vec<(CameraId, IdentityId)>,
    gallery_meta: Vec<(CameraId, IdentityId)>,
}

impl RetrievalProtocol {
    pub fn new(
        queries: Vec<(TrackletId, CameraId, IdentityId)>,
        gallery: Vec<(TrackletId, CameraId, IdentityId)>,
    ) -> Result<Self> {
        let p = Self {
            queries: queries.iter().map(|q| q.0).collect(),
            gallery: gallery.iter().map(|g| g.0).collect(),
            query_meta: queries.iter().map(|q| (q.1, q.2)).collect(),
            gallery_meta: gallery.iter().map(|g| (g.1, g.2)).collect(),
        };
        for q in 0..p.queries.len() {
            if p.positives(q).next().is_none() {
                return Err(Error::Protocol(format!(
                    "query {} has no valid positive in the gallery",
                    p.queries[q]
                )));
            }
        }
        Ok(p)
    }

    /// One query per identity seen by at least two cameras (its lowest
    /// tracklet id); every other tracklet, distractors included, forms the
    /// gallery.
    pub fn cross_camera(dataset: &TrackletDataset) -> Result<Self> {
        let mut cams: BTreeMap<IdentityId, BTreeSet<CameraId>> = BTreeMap::new();
        let mut first: BTreeMap<IdentityId, TrackletId> = BTreeMap::new();
        for t in dataset.tracklets() {
            let id = t
                .identity()
                .ok_or_else(|| Error::Protocol(format!("tracklet {} has no identity", t.id)))?;
            cams.entry(id).or_default().insert(t.camera);
            let e = first.entry(id).or_insert(t.id);
            *e = (*e).min(t.id);
        }
        let query_ids: BTreeSet<TrackletId> = first
            .iter()
            .filter(|(id, _)| cams[id].len() >= 2)
            .map(|(_, &t)| t)
            .collect();
        let meta = |t: &Tracklet| (t.id, t.camera, t.identity().expect("checked"));
        let queries = dataset
            .tracklets()
            .iter()
            .filter(|t| query_ids.contains(&t.id))
            .map(meta)
            .collect();
        let gallery = dataset
            .tracklets()
            .iter()
            .filter(|t| !query_ids.contains(&t.id))
            .map(meta)
            .collect();
        Self::new(queries, gallery)
    }

    fn valid(&self, q: usize, g: usize) -> bool {
        self.queries[q] != self.gallery[g] && self.query_meta[q] != self.gallery_meta[g]
    }

    fn positives(&self, q: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.gallery.len())
            .filter(move |&g| self.valid(q, g) && self.gallery_meta[g].1 == self.query_meta[q].1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// `cmc[r - 1]` is the rank-`r` accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries: usize,
}

impl RetrievalMetrics {
    pub fn rank(&self, r: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(r.max(1) - 1).min(self.cmc.len() - 1)]
    }
}

/// CMC and mAP from a `queries x gallery` distance matrix.
pub fn cmc_map(dist: &[Vec<f64>], protocol: &RetrievalProtocol) -> Result<RetrievalMetrics> {
    let nq = protocol.queries.len();
    let ng = protocol.gallery.len();
    if dist.len() != nq || dist.iter().any(|r| r.len() != ng) {
        return Err(Error::Protocol(format!(
            "distance matrix must be {nq} x {ng}"
        )));
    }
    if dist.iter().flatten().any(|d| !d.is_finite()) {
        return Err(Error::Protocol("distances must be finite".into()));
    }
    if nq == 0 {
        return Err(Error::Protocol("no queries".into()));
    }
    let per_query: Vec<Result<(usize, f64)>> = par::map_range(nq, |q| {
        let mut order: Vec<usize> = (0..ng).filter(|&g| protocol.valid(q, g)).collect();
        order.sort_by(|&a, &b| dist[q][a].total_cmp(&dist[q][b]).then(a.cmp(&b)));
        let qid = protocol.query_meta[q].1;
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for (rank, &g) in order.iter().enumerate() {
            if protocol.gallery_meta[g].1 == qid {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
                first_hit.get_or_insert(rank);
            }
        }
        match first_hit {
            Some(r) => Ok((r, precision_sum / hits as f64)),
            None => Err(Error::Protocol(format!(
                "query {} has no valid positive",
                protocol.queries[q]
            ))),
        }
    });
    let mut cmc = vec![0.0; ng];
    let mut ap_sum = 0.0;
    for res in per_query {
        let (first, ap) = res?;
        for c in &mut cmc[first..] {
            *c += 1.0;
        }
        ap_sum += ap;
    }
    cmc.iter_mut().for_each(|c| *c /= nq as f64);
    Ok(RetrievalMetrics {
        cmc,
        map: ap_sum / nq as f64,
        num_queries: nq,
    })
}

/// Tracklet features pooled over all frames, keyed by tracklet id.
pub fn full_features(model: &EmbeddingModel, tracklets: &[&Tracklet]) -> Result<Vec<Vec<f64>>> {
    par::map_slice(tracklets, |t| {
        // every frame is used, so the stream is never consumed
        let mut rng = crate::rng::stream(0, "eval");
        tracklet_feature(model, t, usize::MAX, &mut rng)
    })
    .into_iter()
    .collect()
}

pub fn distance_matrix(rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map_slice(rows, |r| cols.iter().map(|c| euclidean(r, c)).collect())
}

pub fn evaluate_retrieval(
    model: &EmbeddingModel,
    dataset: &TrackletDataset,
    protocol: &RetrievalProtocol,
) -> Result<RetrievalMetrics> {
    if model.d_raw() != dataset.d_raw() {
        return Err(Error::Dimension {
            expected: dataset.d_raw(),
            got: model.d_raw(),
        });
    }
    let lookup = |ids: &[TrackletId]| -> Result<Vec<&Tracklet>> {
        ids.iter()
            .map(|&id| {
                dataset
                    .get(id)
                    .ok_or_else(|| Error::Protocol(format!("tracklet {id} not in dataset")))
            })
            .collect()
    };
    let q = full_features(model, &lookup(&protocol.queries)?)?;
    let g = full_features(model, &lookup(&protocol.gallery)?)?;
    cmc_map(&distance_matrix(&q, &g), protocol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationPr {
    pub precision: f64,
    pub recall: f64,
    /// Set when nothing was accepted; precision is then reported as 1.
    pub degenerate: bool,
    pub true_positives: usize,
    pub accepted: usize,
    pub true_pairs: usize,
}

pub fn association_pr(matches: &MatchSet, truth: &GroundTruth) -> AssociationPr {
    let accepted = matches.num_accepted();
    let true_pairs = truth.num_pairs();
    let true_positives = matches
        .accepted()
        .filter(|c| truth.same_identity(c.i, c.j))
        .count();
    let recall = if true_pairs == 0 {
        0.0
    } else {
        true_positives as f64 / true_pairs as f64
    };
    if accepted == 0 {
        return AssociationPr {
            precision: 1.0,
            recall: 0.0,
            degenerate: true,
            true_positives,
            accepted,
            true_pairs,
        };
    }
    AssociationPr {
        precision: true_positives as f64 / accepted as f64,
        recall,
        degenerate: false,
        true_positives,
        accepted,
        true_pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RematchResult {
    pub rank1: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Removes the middle third of every tracklet, uses the head as a query
/// and the tails of the same camera as the gallery, and reports how often
/// the nearest tail is the query's own.
pub fn fragmentation_rematch_eval(
    dataset: &TrackletDataset,
    model: &EmbeddingModel,
) -> Result<RematchResult> {
    if model.d_raw() != dataset.d_raw() {
        return Err(Error::Dimension {
            expected: dataset.d_raw(),
            got: model.d_raw(),
        });
    }
    let mut skipped = 0;
    let mut hits = 0usize;
    let mut evaluated = 0usize;
    for ts in dataset.by_camera().values() {
        let usable: Vec<&&Tracklet> = ts.iter().filter(|t| t.len() >= 3).collect();
        skipped += ts.len() - usable.len();
        let pooled = |part: &[crate::data::Frame]| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; model.d_emb()];
            for f in part {
                for (a, v) in acc.iter_mut().zip(model.embed(&f.feature)?) {
                    *a += v;
                }
            }
            let inv = 1.0 / part.len() as f64;
            Ok(acc.into_iter().map(|a| a * inv).collect())
        };
        let heads_tails: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_slice(&usable, |t| {
            let n = t.len();
            let frames = t.frames();
            Ok((pooled(&frames[..n / 3])?, pooled(&frames[(2 * n) / 3..])?))
        });
        let (heads, tails): (Vec<_>, Vec<_>) = heads_tails
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let dist = distance_matrix(&heads, &tails);
        for (q, row) in dist.iter().enumerate() {
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |b, (g, &d)| if d < b.1 { (g, d) } else { b },
                )
                .0;
            if best == q {
                hits += 1;
            }
            evaluated += 1;
        }
    }
    Ok(RematchResult {
        rank1: if evaluated == 0 {
            0.0
        } else {
            hits as f64 / evaluated as f64
        },
        evaluated,
        skipped,
    })
}

/// Combined report for one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    pub cmc20: f64,
    pub map: f64,
    pub assoc_precision: Option<f64>,
    pub assoc_recall: Option<f64>,
    #[serde(skip)]
    pub cmc: Vec<f64>,
}

impl MetricsReport {
    pub fn from_parts(retrieval: &RetrievalMetrics, assoc: Option<&AssociationPr>) -> Self {
        Self {
            cmc1: retrieval.rank(1),
            cmc5: retrieval.rank(5),
            cmc10: retrieval.rank(10),
            cmc20: retrieval.rank(20),
            map: retrieval.map,
            assoc_precision: assoc.map(|a| a.precision),
            assoc_recall: assoc.map(|a| a.recall),
            cmc: retrieval.cmc.clone(),
        }
    }
}

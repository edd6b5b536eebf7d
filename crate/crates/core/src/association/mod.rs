//! Cross-camera tracklet association.
//!
//! For each camera pair the tracklets of both cameras are embedded with a
//! frozen model, scored by Euclidean distance (optionally divided by the
//! spatio-temporal weight), and paired when each is the other's nearest
//! neighbour. The surviving candidates are then split by 1-D k-means on
//! their Euclidean distances and only the lowest-distance cluster is kept.

mod kmeans;
mod str;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::kmeans::{kmeans_1d, KMeans1d, DEFAULT_MAX_ITERS};
pub use self::str::{
    estimate_pair_stats, joint_distance, log_joint_distance, str_weight, CameraPairStats, SigmaForm,
};

use crate::data::{transfer_gap, CameraPair, CameraTopology, Tracklet, TrackletId, TrainingView};
use crate::embedding::{euclidean, tracklet_feature, EmbeddingModel};
use crate::par;
use crate::rng::keyed_stream;
use crate::sampling::PseudoIdentity;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair: CameraPair,
    /// Tracklet on camera `pair.0`.
    pub i: TrackletId,
    /// Tracklet on camera `pair.1`.
    pub j: TrackletId,
    pub euclid: f64,
    pub delta_t: f64,
    /// `euclid / R`; equals `euclid` when the temporal prior is off.
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairMatches {
    pub candidates: Vec<CandidatePair>,
    pub accepted: Vec<bool>,
}

impl PairMatches {
    pub fn accepted(&self) -> impl Iterator<Item = &CandidatePair> {
        self.candidates
            .iter()
            .zip(&self.accepted)
            .filter_map(|(c, &a)| a.then_some(c))
    }

    pub fn num_accepted(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }
}

/// Accepted cross-camera pairs, per camera pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: BTreeMap<CameraPair, PairMatches>,
}

impl MatchSet {
    pub fn accepted(&self) -> impl Iterator<Item = &CandidatePair> {
        self.pairs.values().flat_map(PairMatches::accepted)
    }

    pub fn num_accepted(&self) -> usize {
        self.pairs.values().map(PairMatches::num_accepted).sum()
    }

    pub fn num_candidates(&self) -> usize {
        self.pairs.values().map(|p| p.candidates.len()).sum()
    }

    pub fn match_counts(&self) -> BTreeMap<CameraPair, usize> {
        self.pairs
            .iter()
            .map(|(&cp, m)| (cp, m.num_accepted()))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.num_accepted() == 0
    }

    pub fn pseudo_identities(&self) -> Vec<PseudoIdentity> {
        self.accepted()
            .enumerate()
            .map(|(id, c)| PseudoIdentity {
                id,
                pair: c.pair,
                members: [c.i, c.j],
            })
            .collect()
    }

    /// Writes every candidate with its acceptance flag.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for m in self.pairs.values() {
            for (c, &accepted) in m.candidates.iter().zip(&m.accepted) {
                w.serialize(CsvRow {
                    pair_a: c.pair.0,
                    pair_b: c.pair.1,
                    tracklet_i: c.i,
                    tracklet_j: c.j,
                    euclid: c.euclid,
                    delta_t: c.delta_t,
                    joint: c.joint,
                    accepted,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = MatchSet::default();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            let pair = CameraPair(row.pair_a, row.pair_b);
            let entry = out.pairs.entry(pair).or_default();
            entry.candidates.push(CandidatePair {
                pair,
                i: row.tracklet_i,
                j: row.tracklet_j,
                euclid: row.euclid,
                delta_t: row.delta_t,
                joint: row.joint,
            });
            entry.accepted.push(row.accepted);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    pair_a: u32,
    pair_b: u32,
    tracklet_i: TrackletId,
    tracklet_j: TrackletId,
    euclid: f64,
    delta_t: f64,
    joint: f64,
    accepted: bool,
}

/// Index pairs `(r, c)` where `c` is row `r`'s minimum and `r` is column
/// `c`'s minimum. Ties go to the lower index. The result is a partial
/// matching sorted by row.
pub fn mutual_nearest(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let argmin = |it: &mut dyn Iterator<Item = f64>| {
        let mut best = (0, f64::INFINITY);
        let mut first = true;
        for (i, v) in it.enumerate() {
            if first || v < best.1 {
                best = (i, v);
                first = false;
            }
        }
        best.0
    };
    let row_best: Vec<usize> = scores
        .iter()
        .map(|r| argmin(&mut r.iter().copied()))
        .collect();
    let col_best: Vec<usize> = (0..cols)
        .map(|c| argmin(&mut scores.iter().map(|r| r[c])))
        .collect();
    row_best
        .iter()
        .enumerate()
        .filter(|&(r, &c)| col_best[c] == r)
        .map(|(r, &c)| (r, c))
        .collect()
}

/// Reciprocal nearest-neighbour candidates between two cameras.
///
/// `stats = None` ranks by plain Euclidean distance; otherwise by joint
/// distance under `form`.
pub fn reciprocal_nn_candidates(
    pair: CameraPair,
    cam_a: &[&Tracklet],
    cam_b: &[&Tracklet],
    feats_a: &[Vec<f64>],
    feats_b: &[Vec<f64>],
    stats: Option<(&CameraPairStats, SigmaForm)>,
) -> Vec<CandidatePair> {
    let euclid: Vec<Vec<f64>> = par::map_range(cam_a.len(), |r| {
        feats_b
            .iter()
            .map(|fb| euclidean(&feats_a[r], fb))
            .collect()
    });
    let gaps: Vec<Vec<f64>> = cam_a
        .iter()
        .map(|a| cam_b.iter().map(|b| transfer_gap(a, b)).collect())
        .collect();
    let ranked = match stats {
        None => mutual_nearest(&euclid),
        Some((s, form)) => {
            let scores: Vec<Vec<f64>> = euclid
                .iter()
                .zip(&gaps)
                .map(|(er, gr)| {
                    er.iter()
                        .zip(gr)
                        .map(|(&d, &g)| log_joint_distance(d, g, s, form))
                        .collect()
                })
                .collect();
            mutual_nearest(&scores)
        }
    };
    ranked
        .into_iter()
        .map(|(r, c)| {
            let d = euclid[r][c];
            let dt = gaps[r][c];
            CandidatePair {
                pair,
                i: cam_a[r].id,
                j: cam_b[c].id,
                euclid: d,
                delta_t: dt,
                joint: match stats {
                    None => d,
                    Some((s, form)) => joint_distance(d, dt, s, form),
                },
            }
        })
        .collect()
}

/// Accepted flags for one camera pair's candidates: all of them when
/// there are fewer than `k`, otherwise the k-means cluster with the
/// smallest center.
pub fn select_cluster(candidates: &[CandidatePair], k: usize) -> Result<Vec<bool>> {
    if k == 0 {
        return Err(Error::Cluster("k must be at least 1".into()));
    }
    if candidates.len() < k {
        return Ok(vec![true; candidates.len()]);
    }
    let values: Vec<f64> = candidates.iter().map(|c| c.euclid).collect();
    let km = kmeans_1d(&values, k, DEFAULT_MAX_ITERS)?;
    let sizes = km.cluster_sizes();
    let best = (0..k)
        .filter(|&c| sizes[c] > 0)
        .min_by(|&a, &b| km.centers[a].total_cmp(&km.centers[b]).then(a.cmp(&b)))
        .expect("some cluster is nonempty");
    Ok(km.assignments.iter().map(|&a| a == best).collect())
}

pub fn select_matches(
    candidates: BTreeMap<CameraPair, Vec<CandidatePair>>,
    k: usize,
) -> Result<MatchSet> {
    let mut out = MatchSet::default();
    for (pair, cands) in candidates {
        let accepted = select_cluster(&cands, k)?;
        out.pairs.insert(
            pair,
            PairMatches {
                candidates: cands,
                accepted,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams {
    pub lambda: f64,
    pub k: usize,
    pub use_str: bool,
    pub use_kmeans: bool,
    pub sigma_form: SigmaForm,
    /// Frame cap for tracklet features.
    pub max_images: usize,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            k: 3,
            use_str: true,
            use_kmeans: true,
            sigma_form: SigmaForm::Literal,
            max_images: 60,
        }
    }
}

/// Pooled features for every tracklet of the view, in view order. Each
/// tracklet draws its frame subset from its own keyed stream.
pub fn extract_features(
    view: &TrainingView,
    model: &EmbeddingModel,
    max_images: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    par::map_slice(view.tracklets(), |t| {
        let mut rng = keyed_stream(seed, "assoc.features", t.id);
        tracklet_feature(model, t, max_images, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Runs association on every unordered camera pair of the view.
pub fn associate_all(
    view: &TrainingView,
    model: &EmbeddingModel,
    topology: Option<&CameraTopology>,
    params: &AssociationParams,
    seed: u64,
) -> Result<MatchSet> {
    if model.d_raw() != view.d_raw() {
        return Err(Error::Dimension {
            expected: view.d_raw(),
            got: model.d_raw(),
        });
    }
    let stats = if params.use_str {
        let topology = topology.ok_or_else(|| {
            Error::Topology("spatio-temporal regularization needs a camera topology".into())
        })?;
        Some(estimate_pair_stats(
            topology,
            view.cameras(),
            params.lambda,
        )?)
    } else {
        None
    };
    let features = extract_features(view, model, params.max_images, seed)?;
    let by_camera: BTreeMap<_, Vec<(&Tracklet, &Vec<f64>)>> = view
        .tracklets()
        .iter()
        .zip(&features)
        .fold(BTreeMap::new(), |mut acc, (t, f)| {
            acc.entry(t.camera).or_insert_with(Vec::new).push((t, f));
            acc
        });
    let cams: Vec<_> = by_camera.keys().copied().collect();
    let mut pairs = Vec::new();
    for (x, &a) in cams.iter().enumerate() {
        for &b in &cams[x + 1..] {
            pairs.push(CameraPair::new(a, b));
        }
    }
    let per_pair: Vec<(CameraPair, Vec<CandidatePair>)> = par::map_slice(&pairs, |&pair| {
        let (ta, fa): (Vec<&Tracklet>, Vec<Vec<f64>>) = by_camera[&pair.0]
            .iter()
            .map(|(t, f)| (*t, (*f).clone()))
            .unzip();
        let (tb, fb): (Vec<&Tracklet>, Vec<Vec<f64>>) = by_camera[&pair.1]
            .iter()
            .map(|(t, f)| (*t, (*f).clone()))
            .unzip();
        let s = stats.as_ref().map(|m| (&m[&pair], params.sigma_form));
        (pair, reciprocal_nn_candidates(pair, &ta, &tb, &fa, &fb, s))
    });
    let k = if params.use_kmeans { params.k } else { 1 };
    select_matches(per_pair.into_iter().collect(), k)
}

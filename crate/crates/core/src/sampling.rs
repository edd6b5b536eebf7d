//! Constrained triplet-batch construction.
//!
//! [`TcsccSampler`] draws all `P` tracklets of a batch from one camera with
//! every pair separated in time by more than `time_gap`, so fragments of
//! one walk past the camera never end up with different pseudo-labels in
//! the same batch. [`TccpcSampler`] draws `P` matched tracklet pairs from a
//! single camera pair, so one person matched in several pairs never shows
//! up twice. Tracklets left out of a batch stay eligible for later ones.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::association::MatchSet;
use crate::data::{temporal_separation, CameraId, CameraPair, Tracklet, TrackletId, TrainingView};
use crate::embedding::{Provenance, TripletBatch};
use crate::{Error, Result};

const GREEDY_RESTARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Seconds; tracklets in one single-camera batch are pairwise farther
    /// apart than this.
    #[serde(rename = "time_gap_T")]
    pub time_gap: f64,
    pub max_images: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            p: 4,
            k: 4,
            time_gap: 120.0,
            max_images: 60,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!(
                "sampler.P must be >= 2, got {}",
                self.p
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!(
                "sampler.K must be >= 2, got {}",
                self.k
            )));
        }
        if !(self.time_gap >= 0.0) {
            return Err(Error::Config(format!(
                "sampler.time_gap_T must be >= 0, got {}",
                self.time_gap
            )));
        }
        if self.max_images == 0 {
            return Err(Error::Config("sampler.max_images must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frame pool of one tracklet: at most `max_images` frame indices, fixed
/// once per sampler.
fn frame_pool(t: &Tracklet, max_images: usize, rng: &mut impl Rng) -> Vec<usize> {
    if t.len() <= max_images {
        (0..t.len()).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, t.len(), max_images).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// `count` draws from `pool`, without replacement when the pool is large
/// enough.
fn draw(pool: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    if pool.len() >= count {
        pool.choose_multiple(rng, count).copied().collect()
    } else {
        (0..count)
            .map(|_| *pool.choose(rng).expect("nonempty pool"))
            .collect()
    }
}

/// Largest set of mutually separated tracklets (earliest-end-first
/// interval scheduling), as indices into `ts`.
pub fn max_separated_set(ts: &[&Tracklet], gap: Option<f64>) -> Vec<usize> {
    let Some(gap) = gap else {
        return (0..ts.len()).collect();
    };
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| {
        ts[a]
            .end_time()
            .total_cmp(&ts[b].end_time())
            .then(ts[a].start_time().total_cmp(&ts[b].start_time()))
    });
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        match chosen.last() {
            Some(&last) if ts[i].start_time() - ts[last].end_time() <= gap => {}
            _ => chosen.push(i),
        }
    }
    chosen
}

/// True when every pair in `sel` is separated by more than `gap`.
pub fn pairwise_separated(ts: &[&Tracklet], gap: Option<f64>) -> bool {
    let Some(gap) = gap else { return true };
    ts.iter()
        .enumerate()
        .all(|(i, a)| ts[i + 1..].iter().all(|b| temporal_separation(a, b) > gap))
}

/// Single-camera constrained sampler for within-camera training.
pub struct TcsccSampler<'a> {
    view: &'a TrainingView,
    cfg: SamplerConfig,
    gap: Option<f64>,
    by_camera: BTreeMap<CameraId, Vec<&'a Tracklet>>,
    feasible: Vec<CameraId>,
    pools: BTreeMap<TrackletId, Vec<usize>>,
}

impl<'a> TcsccSampler<'a> {
    /// `gap = None` drops the time constraint (weak supervision, where
    /// every tracklet is already a distinct per-camera identity).
    pub fn new(
        view: &'a TrainingView,
        cfg: SamplerConfig,
        gap: Option<f64>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let by_camera = view.by_camera();
        let feasible: Vec<CameraId> = by_camera
            .iter()
            .filter(|(_, ts)| max_separated_set(ts, gap).len() >= cfg.p)
            .map(|(&c, _)| c)
            .collect();
        if feasible.is_empty() {
            return Err(Error::SamplingInfeasible(match gap {
                Some(g) => format!(
                    "no camera has {} tracklets pairwise separated by more than {g} s",
                    cfg.p
                ),
                None => format!("no camera has {} tracklets", cfg.p),
            }));
        }
        let pools = view
            .tracklets()
            .iter()
            .map(|t| (t.id, frame_pool(t, cfg.max_images, rng)))
            .collect();
        Ok(Self {
            view,
            cfg,
            gap,
            by_camera,
            feasible,
            pools,
        })
    }

    pub fn feasible_cameras(&self) -> &[CameraId] {
        &self.feasible
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TripletBatch {
        let camera = *self
            .feasible
            .choose(rng)
            .expect("at least one feasible camera");
        let ts = &self.by_camera[&camera];
        let chosen = self.select(ts, rng);
        let mut batch = TripletBatch {
            p: self.cfg.p,
            k: self.cfg.k,
            items: Vec::with_capacity(self.cfg.p * self.cfg.k),
            labels: Vec::with_capacity(self.cfg.p * self.cfg.k),
            sources: Vec::with_capacity(self.cfg.p * self.cfg.k),
            provenance: Provenance::SingleCamera(camera),
        };
        for (label, &i) in chosen.iter().enumerate() {
            let t = ts[i];
            for f in draw(&self.pools[&t.id], self.cfg.k, rng) {
                batch.items.push(t.frames()[f].feature.clone());
                batch.labels.push(label);
                batch.sources.push(t.id);
            }
        }
        batch
    }

    /// Randomized greedy with restarts; falls back to a random subset of the
    /// maximum separated set, which always has at least `P` members on a
    /// feasible camera.
    fn select(&self, ts: &[&Tracklet], rng: &mut impl Rng) -> Vec<usize> {
        let p = self.cfg.p;
        let mut order: Vec<usize> = (0..ts.len()).collect();
        for _ in 0..GREEDY_RESTARTS {
            order.shuffle(rng);
            let mut chosen: Vec<usize> = Vec::with_capacity(p);
            for &i in &order {
                let ok = match self.gap {
                    None => true,
                    Some(g) => chosen
                        .iter()
                        .all(|&c| temporal_separation(ts[i], ts[c]) > g),
                };
                if ok {
                    chosen.push(i);
                    if chosen.len() == p {
                        return chosen;
                    }
                }
            }
        }
        let max_set = max_separated_set(ts, self.gap);
        max_set.choose_multiple(rng, p).copied().collect()
    }

    pub fn view(&self) -> &TrainingView {
        self.view
    }
}

/// One-shot single-camera batch.
pub fn sample_tcscc_batch(
    view: &TrainingView,
    cfg: SamplerConfig,
    rng: &mut impl Rng,
) -> Result<TripletBatch> {
    let sampler = TcsccSampler::new(view, cfg, Some(cfg.time_gap), rng)?;
    Ok(sampler.sample(rng))
}

/// A cross-camera pseudo-identity: the two tracklets of an accepted match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoIdentity {
    pub id: usize,
    pub pair: CameraPair,
    pub members: [TrackletId; 2],
}

/// Camera-pair constrained sampler for cross-camera training.
pub struct TccpcSampler<'a> {
    view: &'a TrainingView,
    cfg: SamplerConfig,
    by_pair: BTreeMap<CameraPair, Vec<PseudoIdentity>>,
    feasible: Vec<CameraPair>,
    pools: BTreeMap<TrackletId, Vec<usize>>,
}

impl<'a> TccpcSampler<'a> {
    pub fn new(
        view: &'a TrainingView,
        matches: &MatchSet,
        cfg: SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut by_pair: BTreeMap<CameraPair, Vec<PseudoIdentity>> = BTreeMap::new();
        for pid in matches.pseudo_identities() {
            for m in pid.members {
                if view.get(m).is_none() {
                    return Err(Error::Integrity(format!(
                        "matched tracklet {m} is not in the training view"
                    )));
                }
            }
            by_pair.entry(pid.pair).or_default().push(pid);
        }
        let feasible: Vec<CameraPair> = by_pair
            .iter()
            .filter(|(_, v)| v.len() >= cfg.p)
            .map(|(&cp, _)| cp)
            .collect();
        if feasible.is_empty() {
            return Err(Error::SamplingInfeasible(format!(
                "no camera pair has {} matched pseudo-identities",
                cfg.p
            )));
        }
        let mut pools = BTreeMap::new();
        for v in by_pair.values() {
            for pid in v {
                for m in pid.members {
                    pools.entry(m).or_insert_with(|| {
                        frame_pool(view.get(m).expect("checked above"), cfg.max_images, rng)
                    });
                }
            }
        }
        Ok(Self {
            view,
            cfg,
            by_pair,
            feasible,
            pools,
        })
    }

    pub fn feasible_pairs(&self) -> &[CameraPair] {
        &self.feasible
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TripletBatch {
        let pair = *self
            .feasible
            .choose(rng)
            .expect("at least one feasible pair");
        let chosen: Vec<&PseudoIdentity> = self.by_pair[&pair]
            .choose_multiple(rng, self.cfg.p)
            .collect();
        let k = self.cfg.k;
        let mut batch = TripletBatch {
            p: self.cfg.p,
            k,
            items: Vec::with_capacity(self.cfg.p * k),
            labels: Vec::with_capacity(self.cfg.p * k),
            sources: Vec::with_capacity(self.cfg.p * k),
            provenance: Provenance::CameraPair(pair),
        };
        for (label, pid) in chosen.iter().enumerate() {
            let pool_a = &self.pools[&pid.members[0]];
            let pool_b = &self.pools[&pid.members[1]];
            // one item from each side, the rest uniformly over the union
            let (mut ka, mut kb) = (1, 1);
            let union = (pool_a.len() + pool_b.len()) as f64;
            for _ in 2..k {
                if rng.random::<f64>() * union < pool_a.len() as f64 {
                    ka += 1;
                } else {
                    kb += 1;
                }
            }
            for (member, pool, count) in
                [(pid.members[0], pool_a, ka), (pid.members[1], pool_b, kb)]
            {
                let t = self.view.get(member).expect("checked in new");
                for f in draw(pool, count, rng) {
                    batch.items.push(t.frames()[f].feature.clone());
                    batch.labels.push(label);
                    batch.sources.push(member);
                }
            }
        }
        batch
    }
}

pub fn sample_tccpc_batch(
    view: &TrainingView,
    matches: &MatchSet,
    cfg: SamplerConfig,
    rng: &mut impl Rng,
) -> Result<TripletBatch> {
    Ok(TccpcSampler::new(view, matches, cfg, rng)?.sample(rng))
}

//! Synthetic camera networks with ground truth.
//!
//! Every identity has a latent appearance vector on the unit sphere of the
//! raw feature space, or of a random `latent_dim`-dimensional subspace of
//! it when that is set. A
//! frame seen by camera `c` has raw feature
//! `latent + bias[c] + viewpoint + noise`, where `viewpoint` is drawn once
//! per camera visit.
//! Non-distractor identities walk through 2 or more distinct cameras. With
//! the default walkway layout they pass them in position order, one
//! direction or the other, so travel time between any two cameras on a
//! route tracks their distance; with an explicit topology the order is
//! random. The gap between leaving one camera and entering the next
//! is normal with mean `path / speed` and standard deviation
//! `transfer_time_cv * mean`, resampled until positive. Each visit may be
//! split into several tracklets to mimic tracker fragmentation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::association::CameraPairStats;
use crate::data::{
    CameraId, CameraPair, CameraTopology, Frame, IdentityId, Tracklet, TrackletDataset, TrackletId,
};
use crate::rng::{stream, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_identities: usize,
    pub num_cameras: usize,
    /// Explicit topology; when absent, cameras stand along a walkway of
    /// length `area_m` and paths are distances along it.
    pub topology: Option<CameraTopology>,
    pub speed_mps: f64,
    pub area_m: f64,
    pub d_raw: usize,
    /// Dimension of a random subspace holding identity appearance; `None`
    /// spreads appearance over all `d_raw` dimensions.
    pub latent_dim: Option<usize>,
    pub appearance_noise_std: f64,
    pub camera_distortion_std: f64,
    /// Per-visit appearance offset (pose, viewpoint) shared by all frames
    /// of one camera visit, drawn in a random `viewpoint_dim`-dimensional
    /// subspace.
    pub viewpoint_std: f64,
    pub viewpoint_dim: usize,
    pub transfer_time_cv: f64,
    pub fragmentation_prob: f64,
    pub distractor_fraction: f64,
    pub frames_per_visit_range: [usize; 2],
    pub frame_interval_s: f64,
    pub cameras_per_identity_range: [usize; 2],
    /// Identities enter the network uniformly over `[0, duration_s]`.
    pub duration_s: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_identities: 200,
            num_cameras: 6,
            topology: None,
            speed_mps: 1.25,
            area_m: 300.0,
            d_raw: 64,
            latent_dim: None,
            appearance_noise_std: 0.15,
            camera_distortion_std: 0.08,
            viewpoint_std: 0.2,
            viewpoint_dim: 8,
            transfer_time_cv: 0.05,
            fragmentation_prob: 0.3,
            distractor_fraction: 0.2,
            frames_per_visit_range: [20, 80],
            frame_interval_s: 0.2,
            cameras_per_identity_range: [2, 3],
            duration_s: 3600.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |field: &str, why: String| Err(Error::Config(format!("simulator.{field}: {why}")));
        if self.num_identities == 0 {
            return bad("num_identities", "must be at least 1".into());
        }
        if self.num_cameras < 2 {
            return bad(
                "num_cameras",
                format!("must be at least 2, got {}", self.num_cameras),
            );
        }
        if self.d_raw == 0 {
            return bad("d_raw", "must be at least 1".into());
        }
        if let Some(l) = self.latent_dim.filter(|&l| l == 0 || l > self.d_raw) {
            return bad(
                "latent_dim",
                format!("must be in 1..={}, got {l}", self.d_raw),
            );
        }
        if self.viewpoint_dim == 0 || self.viewpoint_dim > self.d_raw {
            return bad(
                "viewpoint_dim",
                format!("must be in 1..={}, got {}", self.d_raw, self.viewpoint_dim),
            );
        }
        for (name, p) in [
            ("fragmentation_prob", self.fragmentation_prob),
            ("distractor_fraction", self.distractor_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name, format!("must be in [0, 1], got {p}"));
            }
        }
        for (name, s) in [
            ("appearance_noise_std", self.appearance_noise_std),
            ("camera_distortion_std", self.camera_distortion_std),
            ("viewpoint_std", self.viewpoint_std),
            ("transfer_time_cv", self.transfer_time_cv),
            ("duration_s", self.duration_s),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(name, format!("must be finite and non-negative, got {s}"));
            }
        }
        for (name, s) in [
            ("speed_mps", self.speed_mps),
            ("area_m", self.area_m),
            ("frame_interval_s", self.frame_interval_s),
        ] {
            if !(s.is_finite() && s > 0.0) {
                return bad(name, format!("must be positive, got {s}"));
            }
        }
        let [lo, hi] = self.frames_per_visit_range;
        if lo == 0 || lo > hi {
            return bad(
                "frames_per_visit_range",
                format!("need 1 <= lo <= hi, got [{lo}, {hi}]"),
            );
        }
        let [lo, hi] = self.cameras_per_identity_range;
        if lo < 2 || lo > hi {
            return bad(
                "cameras_per_identity_range",
                format!("need 2 <= lo <= hi, got [{lo}, {hi}]"),
            );
        }
        if let Some(topo) = &self.topology {
            for a in 0..self.num_cameras as CameraId {
                for b in a + 1..self.num_cameras as CameraId {
                    if topo.path(a, b).is_none() {
                        return bad("topology", format!("missing path {a}-{b}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Camera positions along the walkway, or `None` with an explicit
    /// topology. Cameras sit near evenly spaced slots with jitter, in a
    /// random order.
    pub fn camera_positions(&self) -> Option<Vec<f64>> {
        if self.topology.is_some() {
            return None;
        }
        let mut rng = stream(self.seed, "sim.topology");
        let n = self.num_cameras;
        let slot = self.area_m / n as f64;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) * slot)
            .collect();
        xs.shuffle(&mut rng);
        Some(xs)
    }

    /// The topology used for generation: the explicit one, or walkway
    /// distances between [`camera_positions`](Self::camera_positions).
    pub fn resolve_topology(&self) -> Result<CameraTopology> {
        if let Some(t) = &self.topology {
            return Ok(t.clone());
        }
        let xs = self.camera_positions().expect("no explicit topology");
        let mut paths = Vec::new();
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                paths.push((i as CameraId, j as CameraId, (xs[i] - xs[j]).abs()));
            }
        }
        CameraTopology::new(self.speed_mps, paths)
    }
}

/// Tracklet-level ground truth for a generated (or labeled) dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: BTreeMap<TrackletId, IdentityId>,
    #[serde(with = "pair_list")]
    pub pairs: BTreeMap<CameraPair, Vec<(TrackletId, TrackletId)>>,
}

mod pair_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Rec {
        a: CameraId,
        b: CameraId,
        i: TrackletId,
        j: TrackletId,
    }

    pub fn serialize<S: Serializer>(
        pairs: &BTreeMap<CameraPair, Vec<(TrackletId, TrackletId)>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let recs: Vec<Rec> = pairs
            .iter()
            .flat_map(|(cp, v)| {
                v.iter().map(move |&(i, j)| Rec {
                    a: cp.0,
                    b: cp.1,
                    i,
                    j,
                })
            })
            .collect();
        recs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<CameraPair, Vec<(TrackletId, TrackletId)>>, D::Error> {
        let recs = Vec::<Rec>::deserialize(d)?;
        let mut out: BTreeMap<CameraPair, Vec<(TrackletId, TrackletId)>> = BTreeMap::new();
        for r in recs {
            out.entry(CameraPair(r.a, r.b))
                .or_default()
                .push((r.i, r.j));
        }
        Ok(out)
    }
}

impl GroundTruth {
    /// Ground truth implied by a labeled dataset: every cross-camera pair of
    /// tracklets sharing an identity is a true pair. Pairs are oriented so
    /// that `i` is on the lower camera id. Returns `None` for unlabeled data.
    pub fn from_dataset(dataset: &TrackletDataset) -> Option<Self> {
        if !dataset.labeled() {
            return None;
        }
        let labels = dataset.labels();
        let mut by_identity: BTreeMap<IdentityId, Vec<&Tracklet>> = BTreeMap::new();
        for t in dataset.tracklets() {
            if let Some(id) = t.identity() {
                by_identity.entry(id).or_default().push(t);
            }
        }
        let mut pairs: BTreeMap<CameraPair, Vec<(TrackletId, TrackletId)>> = BTreeMap::new();
        for members in by_identity.values() {
            for (x, a) in members.iter().enumerate() {
                for b in &members[x + 1..] {
                    if a.camera == b.camera {
                        continue;
                    }
                    let (lo, hi) = if a.camera < b.camera { (a, b) } else { (b, a) };
                    pairs
                        .entry(CameraPair::new(a.camera, b.camera))
                        .or_default()
                        .push((lo.id, hi.id));
                }
            }
        }
        for v in pairs.values_mut() {
            v.sort_unstable();
        }
        Some(Self { labels, pairs })
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }

    pub fn same_identity(&self, a: TrackletId, b: TrackletId) -> bool {
        match (self.labels.get(&a), self.labels.get(&b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub dataset: TrackletDataset,
    pub truth: GroundTruth,
    pub topology: CameraTopology,
}

struct Visit {
    identity: IdentityId,
    camera: CameraId,
    frames: Vec<Frame>,
}

pub fn generate(config: &SimConfig) -> Result<SimWorld> {
    config.validate()?;
    let topology = config.resolve_topology()?;
    let positions = config.camera_positions();
    let d = config.d_raw;

    let mut app_rng = stream(config.seed, "sim.appearance");
    let basis = config
        .latent_dim
        .map(|l| random_orthonormal_rows(l, d, &mut app_rng));
    let latents: Vec<Vec<f64>> = (0..config.num_identities)
        .map(|_| {
            let Some(basis) = &basis else {
                return unit_vector(d, &mut app_rng);
            };
            let coeffs = unit_vector(basis.len(), &mut app_rng);
            let mut v = vec![0.0; d];
            for (c, row) in coeffs.iter().zip(basis) {
                for (vi, ri) in v.iter_mut().zip(row) {
                    *vi += c * ri;
                }
            }
            v
        })
        .collect();
    let biases: Vec<Vec<f64>> = (0..config.num_cameras)
        .map(|_| gaussian_vec(d, config.camera_distortion_std, &mut app_rng))
        .collect();

    let mut route_rng = stream(config.seed, "sim.routes");
    let num_distractors =
        (config.distractor_fraction * config.num_identities as f64).round() as usize;
    let mut order: Vec<usize> = (0..config.num_identities).collect();
    order.shuffle(&mut route_rng);
    let mut is_distractor = vec![false; config.num_identities];
    for &i in order.iter().take(num_distractors) {
        is_distractor[i] = true;
    }

    let mut view_rng = stream(config.seed, "sim.viewpoint");
    let view_basis = if config.viewpoint_std > 0.0 {
        random_orthonormal_rows(config.viewpoint_dim, d, &mut view_rng)
    } else {
        Vec::new()
    };

    let mut frame_rng = stream(config.seed, "sim.frames");
    let cams: Vec<CameraId> = (0..config.num_cameras as CameraId).collect();
    let [f_lo, f_hi] = config.frames_per_visit_range;
    let [c_lo, c_hi] = config.cameras_per_identity_range;
    let mut visits = Vec::new();
    for (identity, latent) in latents.iter().enumerate() {
        let n_cams = if is_distractor[identity] {
            1
        } else {
            route_rng.random_range(c_lo..=c_hi).min(config.num_cameras)
        };
        let mut route: Vec<CameraId> = cams
            .choose_multiple(&mut route_rng, n_cams)
            .copied()
            .collect();
        if let Some(xs) = &positions {
            route.sort_by(|&a, &b| xs[a as usize].total_cmp(&xs[b as usize]));
            if route_rng.random::<bool>() {
                route.reverse();
            }
        }
        let mut t = route_rng.random::<f64>() * config.duration_s;
        for (step, &cam) in route.iter().enumerate() {
            if step > 0 {
                let mean = topology.path(route[step - 1], cam).ok_or_else(|| {
                    Error::Topology(format!("missing path {}-{}", route[step - 1], cam))
                })? / topology.speed_mps();
                t += transfer_gap(mean, config.transfer_time_cv * mean, &mut route_rng);
            }
            let n_frames = route_rng.random_range(f_lo..=f_hi);
            let mut base: Vec<f64> = latent
                .iter()
                .zip(&biases[cam as usize])
                .map(|(l, b)| l + b)
                .collect();
            for row in &view_basis {
                let c = config.viewpoint_std * view_rng.sample::<f64, _>(StandardNormal);
                for (x, r) in base.iter_mut().zip(row) {
                    *x += c * r;
                }
            }
            let frames: Vec<Frame> = (0..n_frames)
                .map(|k| {
                    let noise = gaussian_vec(d, config.appearance_noise_std, &mut frame_rng);
                    let feature = base.iter().zip(noise).map(|(b, n)| b + n).collect();
                    Frame {
                        time: t + k as f64 * config.frame_interval_s,
                        feature,
                    }
                })
                .collect();
            t = frames.last().expect("n_frames >= 1").time;
            visits.push(Visit {
                identity: identity as IdentityId,
                camera: cam,
                frames,
            });
        }
    }

    let mut frag_rng = stream(config.seed, "sim.fragments");
    let mut pieces: Vec<(IdentityId, CameraId, Vec<Frame>)> = Vec::new();
    for v in visits {
        for frames in fragment(v.frames, config.fragmentation_prob, &mut frag_rng) {
            pieces.push((v.identity, v.camera, frames));
        }
    }
    pieces.sort_by(|a, b| {
        a.2[0]
            .time
            .total_cmp(&b.2[0].time)
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    let tracklets = pieces
        .into_iter()
        .enumerate()
        .map(|(id, (identity, camera, frames))| {
            Tracklet::new(id as TrackletId, camera, frames, Some(identity))
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = TrackletDataset::new(tracklets)?;
    let truth = GroundTruth::from_dataset(&dataset).expect("simulated data is labeled");
    Ok(SimWorld {
        dataset,
        truth,
        topology,
    })
}

/// The generative transfer-time law per camera pair: mean `path / speed`,
/// deviation `transfer_time_cv * mean`.
pub fn true_pair_stats(config: &SimConfig) -> Result<BTreeMap<CameraPair, CameraPairStats>> {
    let topology = config.resolve_topology()?;
    Ok(topology
        .paths()
        .iter()
        .map(|(&pair, &meters)| {
            let t_bar = meters / topology.speed_mps();
            (
                pair,
                CameraPairStats {
                    t_bar,
                    sigma: config.transfer_time_cv * t_bar,
                },
            )
        })
        .collect())
}

fn transfer_gap(mean: f64, std: f64, rng: &mut StreamRng) -> f64 {
    if std == 0.0 {
        return mean;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let gap = mean + std * z;
        if gap > 0.0 {
            return gap;
        }
    }
}

/// Splits at a uniform interior frame with probability `p`, recursing into
/// both halves.
fn fragment(frames: Vec<Frame>, p: f64, rng: &mut StreamRng) -> Vec<Vec<Frame>> {
    if frames.len() < 2 || rng.random::<f64>() >= p {
        return vec![frames];
    }
    let mut head = frames;
    let at = rng.random_range(1..head.len());
    let tail = head.split_off(at);
    let mut out = fragment(head, p, rng);
    out.extend(fragment(tail, p, rng));
    out
}

fn gaussian_vec(d: usize, std: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        })
        .collect()
}

fn unit_vector(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v = gaussian_vec(d, 1.0, rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `rows` orthonormal vectors in `dim` dimensions (Gram-Schmidt on
/// Gaussian draws).
fn random_orthonormal_rows(rows: usize, dim: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v = gaussian_vec(dim, 1.0, rng);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

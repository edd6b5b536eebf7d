//! Tracklets, datasets, camera topology, and their on-disk formats.
//!
//! Tracklet files are JSON Lines with one record per tracklet:
//!
//! ```text
//! {"tracklet_id": 3, "camera_id": 1, "identity": 17, "frames": [{"t": 12.5, "f": [0.1, ...]}, ...]}
//! ```
//!
//! `identity` may be `null`. Timestamps are seconds on one clock shared by
//! all cameras.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type TrackletId = u64;
pub type CameraId = u32;
pub type IdentityId = u64;

/// Unordered camera pair, always stored with `.0 < .1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CameraPair(pub CameraId, pub CameraId);

impl CameraPair {
    pub fn new(a: CameraId, b: CameraId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn contains(&self, c: CameraId) -> bool {
        self.0 == c || self.1 == c
    }
}

impl std::fmt::Display for CameraPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "f")]
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: TrackletId,
    pub camera: CameraId,
    frames: Vec<Frame>,
    identity: Option<IdentityId>,
}

impl Tracklet {
    /// Builds a tracklet, checking that frames are nonempty, finite, of one
    /// dimension, and strictly increasing in time.
    pub fn new(
        id: TrackletId,
        camera: CameraId,
        frames: Vec<Frame>,
        identity: Option<IdentityId>,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Integrity(format!("tracklet {id} has no frames")));
        };
        let dim = first.feature.len();
        if dim == 0 {
            return Err(Error::Integrity(format!(
                "tracklet {id} has empty feature vectors"
            )));
        }
        for (i, fr) in frames.iter().enumerate() {
            if !fr.time.is_finite() || fr.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!(
                    "tracklet {id} frame {i} has a non-finite value"
                )));
            }
            if fr.feature.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: fr.feature.len(),
                });
            }
            if i > 0 && fr.time <= frames[i - 1].time {
                return Err(Error::Integrity(format!(
                    "tracklet {id}: timestamps not strictly increasing at frame {i} ({} after {})",
                    fr.time,
                    frames[i - 1].time
                )));
            }
        }
        Ok(Self {
            id,
            camera,
            frames,
            identity,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].feature.len()
    }

    pub fn start_time(&self) -> f64 {
        self.frames[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.frames[self.frames.len() - 1].time
    }

    /// Ground-truth identity. Only evaluation and weak supervision read this;
    /// unsupervised training receives a [`TrainingView`] where it is absent.
    pub fn identity(&self) -> Option<IdentityId> {
        self.identity
    }

    pub fn without_identity(&self) -> Self {
        Self {
            identity: None,
            ..self.clone()
        }
    }
}

/// Signed separation between two tracklets' closest endpoints; negative when
/// they overlap in time.
pub fn temporal_separation(a: &Tracklet, b: &Tracklet) -> f64 {
    (b.start_time() - a.end_time()).max(a.start_time() - b.end_time())
}

/// Travel gap between two tracklets: later start minus earlier end, where
/// "earlier" is the tracklet with the smaller start time. Negative when the
/// later one begins before the earlier one ends.
pub fn transfer_gap(a: &Tracklet, b: &Tracklet) -> f64 {
    if a.start_time() <= b.start_time() {
        b.start_time() - a.end_time()
    } else {
        a.start_time() - b.end_time()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletDataset {
    tracklets: Vec<Tracklet>,
    cameras: BTreeSet<CameraId>,
    d_raw: usize,
    labeled: bool,
    index: BTreeMap<TrackletId, usize>,
}

impl TrackletDataset {
    pub fn new(tracklets: Vec<Tracklet>) -> Result<Self> {
        let Some(first) = tracklets.first() else {
            return Err(Error::Integrity(
                "dataset is empty; feature dimension unknown".into(),
            ));
        };
        let d_raw = first.dim();
        let mut index = BTreeMap::new();
        for (i, t) in tracklets.iter().enumerate() {
            if t.dim() != d_raw {
                return Err(Error::Dimension {
                    expected: d_raw,
                    got: t.dim(),
                });
            }
            if index.insert(t.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate tracklet_id {}", t.id)));
            }
        }
        let cameras = tracklets.iter().map(|t| t.camera).collect();
        let labeled = tracklets.iter().any(|t| t.identity.is_some());
        Ok(Self {
            tracklets,
            cameras,
            d_raw,
            labeled,
            index,
        })
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn cameras(&self) -> &BTreeSet<CameraId> {
        &self.cameras
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn labeled(&self) -> bool {
        self.labeled
    }

    pub fn get(&self, id: TrackletId) -> Option<&Tracklet> {
        self.index.get(&id).map(|&i| &self.tracklets[i])
    }

    pub fn position(&self, id: TrackletId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn by_camera(&self) -> BTreeMap<CameraId, Vec<&Tracklet>> {
        let mut out: BTreeMap<CameraId, Vec<&Tracklet>> = BTreeMap::new();
        for t in &self.tracklets {
            out.entry(t.camera).or_default().push(t);
        }
        out
    }

    /// Identity labels by tracklet id, for tracklets that carry one.
    pub fn labels(&self) -> BTreeMap<TrackletId, IdentityId> {
        self.tracklets
            .iter()
            .filter_map(|t| t.identity.map(|id| (t.id, id)))
            .collect()
    }
}

/// Removes every identity and clears the labeled flag.
pub fn strip_labels(dataset: &TrackletDataset) -> TrackletDataset {
    TrackletDataset {
        tracklets: dataset
            .tracklets
            .iter()
            .map(Tracklet::without_identity)
            .collect(),
        labeled: false,
        ..dataset.clone()
    }
}

/// Identity-free dataset handed to training and association code.
///
/// The only constructors strip identities, so anything that takes a
/// `TrainingView` cannot observe ground truth.
#[derive(Debug, Clone)]
pub struct TrainingView {
    dataset: TrackletDataset,
}

impl TrainingView {
    pub fn unsupervised(dataset: &TrackletDataset) -> Self {
        Self {
            dataset: strip_labels(dataset),
        }
    }

    /// Weakly supervised view: per-camera identities are known, so all
    /// tracklets of one identity in one camera are merged into one tracklet
    /// (id = smallest member id). Cross-camera identity is then discarded.
    pub fn weakly_supervised(dataset: &TrackletDataset) -> Result<Self> {
        let mut groups: BTreeMap<(CameraId, IdentityId), Vec<&Tracklet>> = BTreeMap::new();
        let mut merged = Vec::new();
        for t in dataset.tracklets() {
            match t.identity {
                Some(id) => groups.entry((t.camera, id)).or_default().push(t),
                None => {
                    return Err(Error::Integrity(format!(
                        "weak supervision needs per-camera identities; tracklet {} has none",
                        t.id
                    )))
                }
            }
        }
        for members in groups.values() {
            let id = members.iter().map(|t| t.id).min().expect("nonempty group");
            let mut frames: Vec<Frame> = members
                .iter()
                .flat_map(|t| t.frames.iter().cloned())
                .collect();
            frames.sort_by(|a, b| a.time.total_cmp(&b.time));
            frames.dedup_by(|b, a| a.time == b.time);
            merged.push(Tracklet::new(id, members[0].camera, frames, None)?);
        }
        merged.sort_by_key(|t| t.id);
        Ok(Self {
            dataset: TrackletDataset::new(merged)?,
        })
    }

    pub fn dataset(&self) -> &TrackletDataset {
        &self.dataset
    }
}

impl std::ops::Deref for TrainingView {
    type Target = TrackletDataset;

    fn deref(&self) -> &TrackletDataset {
        &self.dataset
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackletRecord {
    tracklet_id: TrackletId,
    camera_id: CameraId,
    identity: Option<IdentityId>,
    frames: Vec<Frame>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrackletDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset(reader: impl BufRead) -> Result<TrackletDataset> {
    let mut tracklets: Vec<Tracklet> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackletRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let t = match Tracklet::new(rec.tracklet_id, rec.camera_id, rec.frames, rec.identity) {
            Ok(t) => t,
            Err(Error::Dimension { expected, got }) => {
                return Err(Error::Dimension { expected, got })
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: e.to_string(),
                })
            }
        };
        if let Some(first) = tracklets.first() {
            if first.dim() != t.dim() {
                return Err(Error::Dimension {
                    expected: first.dim(),
                    got: t.dim(),
                });
            }
        }
        if !seen.insert(t.id) {
            return Err(Error::Integrity(format!(
                "duplicate tracklet_id {} at line {lineno}",
                t.id
            )));
        }
        tracklets.push(t);
    }
    TrackletDataset::new(tracklets)
}

pub fn save_dataset(dataset: &TrackletDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(dataset: &TrackletDataset, mut w: impl Write) -> Result<()> {
    for t in dataset.tracklets() {
        let rec = TrackletRecord {
            tracklet_id: t.id,
            camera_id: t.camera,
            identity: t.identity,
            frames: t.frames.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Walking-path lengths between cameras plus a nominal pedestrian speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct CameraTopology {
    speed_mps: f64,
    paths: BTreeMap<CameraPair, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathRecord {
    a: CameraId,
    b: CameraId,
    meters: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    speed_mps: f64,
    paths: Vec<PathRecord>,
}

impl TryFrom<TopologyFile> for CameraTopology {
    type Error = Error;

    fn try_from(file: TopologyFile) -> Result<Self> {
        CameraTopology::new(
            file.speed_mps,
            file.paths.iter().map(|p| (p.a, p.b, p.meters)),
        )
    }
}

impl From<CameraTopology> for TopologyFile {
    fn from(t: CameraTopology) -> Self {
        TopologyFile {
            speed_mps: t.speed_mps,
            paths: t
                .paths
                .iter()
                .map(|(p, &meters)| PathRecord {
                    a: p.0,
                    b: p.1,
                    meters,
                })
                .collect(),
        }
    }
}

impl CameraTopology {
    pub fn new(
        speed_mps: f64,
        paths: impl IntoIterator<Item = (CameraId, CameraId, f64)>,
    ) -> Result<Self> {
        if !(speed_mps.is_finite() && speed_mps > 0.0) {
            return Err(Error::Topology(format!(
                "speed_mps must be positive, got {speed_mps}"
            )));
        }
        let mut map = BTreeMap::new();
        for (a, b, meters) in paths {
            if a == b {
                return Err(Error::Topology(format!("path from camera {a} to itself")));
            }
            if !(meters.is_finite() && meters > 0.0) {
                return Err(Error::Topology(format!(
                    "path {a}-{b} must have positive length, got {meters}"
                )));
            }
            if let Some(prev) = map.insert(CameraPair::new(a, b), meters) {
                if prev != meters {
                    return Err(Error::Topology(format!(
                        "asymmetric path lengths for {a}-{b}: {prev} vs {meters}"
                    )));
                }
            }
        }
        Ok(Self {
            speed_mps,
            paths: map,
        })
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_mps
    }

    pub fn path(&self, a: CameraId, b: CameraId) -> Option<f64> {
        self.paths.get(&CameraPair::new(a, b)).copied()
    }

    pub fn paths(&self) -> &BTreeMap<CameraPair, f64> {
        &self.paths
    }
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<CameraTopology> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_topology(topology: &CameraTopology, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(topology)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

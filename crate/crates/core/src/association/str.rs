//! Spatio-temporal regularization: a Gaussian plausibility weight on the
//! travel gap between two tracklets seen by a camera pair.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{CameraId, CameraPair, CameraTopology};
use crate::{Error, Result};

/// Expected transfer time between two cameras and its spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPairStats {
    pub t_bar: f64,
    pub sigma: f64,
}

impl CameraPairStats {
    pub fn new(t_bar: f64, sigma: f64) -> Result<Self> {
        if !(t_bar > 0.0 && t_bar.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Contract(format!(
                "camera pair stats need t_bar > 0 and sigma > 0, got {t_bar}, {sigma}"
            )));
        }
        Ok(Self { t_bar, sigma })
    }
}

/// Denominator of the Gaussian exponent.
///
/// `Literal` divides the squared deviation by `2 sigma`; `Squared` is the
/// textbook `2 sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaForm {
    #[default]
    Literal,
    Squared,
}

impl SigmaForm {
    pub fn from_squared_flag(squared_sigma: bool) -> Self {
        if squared_sigma {
            Self::Squared
        } else {
            Self::Literal
        }
    }

    /// `-ln R`, the penalty exponent. Finite for all finite inputs, unlike
    /// `R` itself which underflows for large deviations.
    pub fn neg_log_weight(self, delta_t: f64, stats: &CameraPairStats) -> f64 {
        let dev = delta_t - stats.t_bar;
        let denom = match self {
            Self::Literal => 2.0 * stats.sigma,
            Self::Squared => 2.0 * stats.sigma * stats.sigma,
        };
        dev * dev / denom
    }

    pub fn weight(self, delta_t: f64, stats: &CameraPairStats) -> f64 {
        (-self.neg_log_weight(delta_t, stats)).exp()
    }
}

/// `exp(-(delta_t - t_bar)^2 / (2 sigma))`.
pub fn str_weight(delta_t: f64, stats: &CameraPairStats) -> f64 {
    SigmaForm::Literal.weight(delta_t, stats)
}

/// Transfer-time prior from path length and walking speed:
/// `t_bar = meters / speed`, `sigma = lambda * t_bar`. Every pair of
/// `cameras` must have a path.
pub fn estimate_pair_stats(
    topology: &CameraTopology,
    cameras: &BTreeSet<CameraId>,
    lambda: f64,
) -> Result<BTreeMap<CameraPair, CameraPairStats>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!(
            "str lambda must be positive, got {lambda}"
        )));
    }
    let cams: Vec<CameraId> = cameras.iter().copied().collect();
    let mut out = BTreeMap::new();
    for (i, &a) in cams.iter().enumerate() {
        for &b in &cams[i + 1..] {
            let meters = topology
                .path(a, b)
                .ok_or_else(|| Error::Topology(format!("no path between cameras {a} and {b}")))?;
            let t_bar = meters / topology.speed_mps();
            out.insert(
                CameraPair::new(a, b),
                CameraPairStats::new(t_bar, lambda * t_bar)?,
            );
        }
    }
    Ok(out)
}

/// `D / R`, with `D = 0` mapping to 0 for any gap.
pub fn joint_distance(euclid: f64, delta_t: f64, stats: &CameraPairStats, form: SigmaForm) -> f64 {
    if euclid == 0.0 {
        0.0
    } else {
        euclid / form.weight(delta_t, stats)
    }
}

/// `ln(D / R)`, used for ranking so that underflowing weights still order
/// correctly.
pub fn log_joint_distance(
    euclid: f64,
    delta_t: f64,
    stats: &CameraPairStats,
    form: SigmaForm,
) -> f64 {
    euclid.ln() + form.neg_log_weight(delta_t, stats)
}

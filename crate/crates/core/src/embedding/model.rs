use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Tracklet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Architecture {
    /// `e = W x + b`
    Linear,
    /// `e = W2 tanh(W1 x + b1) + b2`
    Mlp { hidden: usize },
}

/// Embedding from raw features to `d_emb` dimensions.
///
/// Parameters live in one flat vector so gradients and optimizer moments
/// share its layout. Linear: `W (d_emb x d_raw), b (d_emb)`. MLP:
/// `W1 (h x d_raw), b1 (h), W2 (d_emb x h), b2 (d_emb)`. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    arch: Architecture,
    d_raw: usize,
    d_emb: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub hidden: Vec<f64>,
}

impl EmbeddingModel {
    pub fn num_params(arch: Architecture, d_raw: usize, d_emb: usize) -> usize {
        match arch {
            Architecture::Linear => d_emb * d_raw + d_emb,
            Architecture::Mlp { hidden } => hidden * d_raw + hidden + d_emb * hidden + d_emb,
        }
    }

    pub fn from_params(
        arch: Architecture,
        d_raw: usize,
        d_emb: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::num_params(arch, d_raw, d_emb);
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(Self {
            arch,
            d_raw,
            d_emb,
            params,
        })
    }

    pub fn zeros(arch: Architecture, d_raw: usize, d_emb: usize) -> Self {
        Self {
            arch,
            d_raw,
            d_emb,
            params: vec![0.0; Self::num_params(arch, d_raw, d_emb)],
        }
    }

    /// Linear model whose weight is the identity on the leading
    /// `min(d_raw, d_emb)` coordinates.
    pub fn identity(d_raw: usize, d_emb: usize) -> Self {
        let mut m = Self::zeros(Architecture::Linear, d_raw, d_emb);
        for i in 0..d_raw.min(d_emb) {
            m.params[i * d_raw + i] = 1.0;
        }
        m
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(arch: Architecture, d_raw: usize, d_emb: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(arch, d_raw, d_emb);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for w in slice {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        };
        match arch {
            Architecture::Linear => fill(&mut m.params[..d_emb * d_raw], d_raw),
            Architecture::Mlp { hidden } => {
                let w1 = hidden * d_raw;
                fill(&mut m.params[..w1], d_raw);
                let w2_start = w1 + hidden;
                fill(&mut m.params[w2_start..w2_start + d_emb * hidden], hidden);
            }
        }
        m
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_raw {
            return Err(Error::Dimension {
                expected: self.d_raw,
                got: x.len(),
            });
        }
        Ok(self.forward(x).0)
    }

    pub(crate) fn forward(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        match self.arch {
            Architecture::Linear => {
                let (w, b) = self.params.split_at(self.d_emb * self.d_raw);
                (affine(w, b, x), ForwardCache { hidden: Vec::new() })
            }
            Architecture::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * self.d_raw);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.d_emb * hidden);
                let h: Vec<f64> = affine(w1, b1, x).into_iter().map(f64::tanh).collect();
                let e = affine(w2, b2, &h);
                (e, ForwardCache { hidden: h })
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d e` for
    /// one input `x`.
    pub(crate) fn backward(&self, x: &[f64], cache: &ForwardCache, de: &[f64], grad: &mut [f64]) {
        match self.arch {
            Architecture::Linear => {
                let (gw, gb) = grad.split_at_mut(self.d_emb * self.d_raw);
                outer_accumulate(gw, gb, de, x);
            }
            Architecture::Mlp { hidden } => {
                let w2_start = hidden * self.d_raw + hidden;
                let w2 = &self.params[w2_start..w2_start + self.d_emb * hidden];
                let (g1, g2) = grad.split_at_mut(w2_start);
                let (gw2, gb2) = g2.split_at_mut(self.d_emb * hidden);
                outer_accumulate(gw2, gb2, de, &cache.hidden);
                // back through W2 and tanh
                let mut dpre = vec![0.0; hidden];
                for (o, &g) in de.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (j, dp) in dpre.iter_mut().enumerate() {
                        *dp += g * w2[o * hidden + j];
                    }
                }
                for (dp, h) in dpre.iter_mut().zip(&cache.hidden) {
                    *dp *= 1.0 - h * h;
                }
                let (gw1, gb1) = g1.split_at_mut(hidden * self.d_raw);
                outer_accumulate(gw1, gb1, &dpre, x);
            }
        }
    }

    /// Copy with parameter `index` shifted by `delta`; used by finite-difference checks.
    pub fn perturbed(&self, index: usize, delta: f64) -> Self {
        let mut m = self.clone();
        m.params[index] += delta;
        m
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (name, rows, cols) in self.layer_shapes() {
            let len = rows * cols;
            layers.push(Layer {
                name: name.to_string(),
                rows,
                cols,
                data: self.params[offset..offset + len].to_vec(),
            });
            offset += len;
        }
        Checkpoint {
            arch: self.arch,
            d_raw: self.d_raw,
            d_emb: self.d_emb,
            layers,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let template = Self::zeros(ckpt.arch, ckpt.d_raw, ckpt.d_emb);
        let shapes = template.layer_shapes();
        if shapes.len() != ckpt.layers.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} layers, found {}",
                shapes.len(),
                ckpt.layers.len()
            )));
        }
        let mut params = Vec::with_capacity(template.params.len());
        for ((name, rows, cols), layer) in shapes.iter().zip(&ckpt.layers) {
            if layer.name != *name
                || layer.rows != *rows
                || layer.cols != *cols
                || layer.data.len() != rows * cols
            {
                return Err(Error::Checkpoint(format!(
                    "layer {} does not match expected {name} ({rows}x{cols})",
                    layer.name
                )));
            }
            params.extend_from_slice(&layer.data);
        }
        Self::from_params(ckpt.arch, ckpt.d_raw, ckpt.d_emb, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ckpt)
    }

    fn layer_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        match self.arch {
            Architecture::Linear => vec![("w", self.d_emb, self.d_raw), ("b", self.d_emb, 1)],
            Architecture::Mlp { hidden } => vec![
                ("w1", hidden, self.d_raw),
                ("b1", hidden, 1),
                ("w2", self.d_emb, hidden),
                ("b2", self.d_emb, 1),
            ],
        }
    }
}

/// On-disk model: architecture tag, dimensions, and row-major weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub d_raw: usize,
    pub d_emb: usize,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn outer_accumulate(gw: &mut [f64], gb: &mut [f64], dout: &[f64], input: &[f64]) {
    let cols = input.len();
    for (r, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[r] += g;
        for (gw_rc, &x) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
            *gw_rc += g * x;
        }
    }
}

/// Mean embedding of up to `max_images` frames sampled without replacement.
/// Tracklets with at most `max_images` frames use every frame and leave
/// `rng` untouched.
pub fn tracklet_feature(
    model: &EmbeddingModel,
    tracklet: &Tracklet,
    max_images: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if max_images == 0 {
        return Err(Error::Contract("max_images must be at least 1".into()));
    }
    let frames = tracklet.frames();
    let n = frames.len();
    let chosen: Vec<usize> = if n <= max_images {
        (0..n).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, n, max_images).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut acc = vec![0.0; model.d_emb()];
    for &i in &chosen {
        let e = model.embed(&frames[i].feature)?;
        for (a, v) in acc.iter_mut().zip(e) {
            *a += v;
        }
    }
    let inv = 1.0 / chosen.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

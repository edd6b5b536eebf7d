use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tastr_core::association::{AssociationParams, SigmaForm};
use tastr_core::embedding::{AdamConfig, Architecture};
use tastr_core::pipeline::PipelineConfig;
use tastr_core::sampling::SamplerConfig;
use tastr_core::simulator::SimConfig;

use crate::fail::{Fail, ResultExt, EXIT_CONFIG, EXIT_MISSING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    #[default]
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub d_emb: usize,
    /// Hidden width, used by `mlp` only.
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::Linear,
            d_emb: 32,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub margin: f64,
    pub steps_s1: usize,
    pub steps_cross: usize,
    pub n_iterations: usize,
    pub progressive: bool,
    pub weakly_supervised: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            margin: p.margin,
            steps_s1: p.steps_s1,
            steps_cross: p.steps_cross,
            n_iterations: p.n_iterations,
            progressive: p.progressive,
            weakly_supervised: p.weakly_supervised,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    pub k: usize,
    pub use_str: bool,
    pub use_kmeans: bool,
    pub max_images: usize,
}

impl Default for AssociationSection {
    fn default() -> Self {
        let a = AssociationParams::default();
        Self {
            k: a.k,
            use_str: a.use_str,
            use_kmeans: a.use_kmeans,
            max_images: a.max_images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrSection {
    pub lambda: f64,
    /// Use `2 sigma^2` in the Gaussian exponent instead of `2 sigma`.
    pub squared_sigma: bool,
}

impl Default for StrSection {
    fn default() -> Self {
        Self {
            lambda: AssociationParams::default().lambda,
            squared_sigma: false,
        }
    }
}

/// Everything a run needs. Serialized as TOML with every key present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub simulator: SimConfig,
    pub sampler: SamplerConfig,
    pub model: ModelSection,
    pub optimizer: AdamConfig,
    pub training: TrainingSection,
    pub association: AssociationSection,
    #[serde(rename = "str")]
    pub str_reg: StrSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Fail> {
        let text = std::fs::read_to_string(path).with_code(EXIT_MISSING, || {
            format!("cannot read config {}", path.display())
        })?;
        Self::parse(&text).map_err(|e| e.context(format!("invalid config {}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, Fail> {
        toml::from_str(text).with_code(EXIT_CONFIG, || "config does not parse".to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            ..self.simulator.clone()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            sampler: self.sampler,
            margin: self.training.margin,
            arch: match self.model.arch {
                ArchKind::Linear => Architecture::Linear,
                ArchKind::Mlp => Architecture::Mlp {
                    hidden: self.model.hidden,
                },
            },
            d_emb: self.model.d_emb,
            optimizer: self.optimizer,
            steps_s1: self.training.steps_s1,
            steps_cross: self.training.steps_cross,
            n_iterations: self.training.n_iterations,
            association: AssociationParams {
                lambda: self.str_reg.lambda,
                k: self.association.k,
                use_str: self.association.use_str,
                use_kmeans: self.association.use_kmeans,
                sigma_form: SigmaForm::from_squared_flag(self.str_reg.squared_sigma),
                max_images: self.association.max_images,
            },
            progressive: self.training.progressive,
            seed: self.seed,
            weakly_supervised: self.training.weakly_supervised,
        }
    }
}

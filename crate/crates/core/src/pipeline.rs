//! Progressive training loop: within-camera training once, then repeated
//! rounds of cross-camera association and cross-camera fine-tuning.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::association::{associate_all, AssociationParams, MatchSet};
use crate::data::{CameraTopology, TrackletDataset, TrainingView};
use crate::embedding::{
    adam_step, loss_gradient, AdamConfig, Architecture, EmbeddingModel, OptimizerState,
};
use crate::evaluation::{association_pr, evaluate_retrieval, RetrievalProtocol};
use crate::rng::SeedRegistry;
use crate::sampling::{SamplerConfig, TccpcSampler, TcsccSampler};
use crate::simulator::GroundTruth;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub margin: f64,
    pub arch: Architecture,
    pub d_emb: usize,
    pub optimizer: AdamConfig,
    pub steps_s1: usize,
    pub steps_cross: usize,
    pub n_iterations: usize,
    pub association: AssociationParams,
    /// When false, exactly one association and one cross-camera round run
    /// regardless of `n_iterations`.
    pub progressive: bool,
    pub seed: u64,
    pub weakly_supervised: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            margin: 0.3,
            arch: Architecture::Linear,
            d_emb: 32,
            optimizer: AdamConfig::default(),
            steps_s1: 2000,
            steps_cross: 1000,
            n_iterations: 5,
            association: AssociationParams::default(),
            progressive: true,
            seed: 0,
            weakly_supervised: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.optimizer.validate()?;
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "training.margin must be a finite value >= 0, got {}",
                self.margin
            )));
        }
        if self.d_emb == 0 {
            return Err(Error::Config("model.d_emb must be >= 1".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = self.arch {
            return Err(Error::Config("model.hidden must be >= 1".into()));
        }
        let a = &self.association;
        if !(a.lambda > 0.0 && a.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "str.lambda must be > 0, got {}",
                a.lambda
            )));
        }
        if a.k == 0 {
            return Err(Error::Config("association.k must be >= 1".into()));
        }
        if a.max_images == 0 {
            return Err(Error::Config("association.max_images must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of association + cross-camera rounds actually executed.
    pub fn rounds(&self) -> usize {
        if self.progressive {
            self.n_iterations
        } else {
            1
        }
    }
}

/// Summary of one completed stage. Index 0 is the within-camera model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Accepted matches keyed by camera pair (`"a-b"`).
    pub match_counts: BTreeMap<String, usize>,
    pub num_accepted: usize,
    pub num_candidates: usize,
    pub assoc_precision: Option<f64>,
    pub assoc_recall: Option<f64>,
    pub cmc1: Option<f64>,
    pub cmc5: Option<f64>,
    pub cmc10: Option<f64>,
    pub cmc20: Option<f64>,
    pub map: Option<f64>,
    /// Mean batch loss over the stage's training steps.
    pub train_loss: Option<f64>,
    pub checkpoint: Option<String>,
    pub warning: Option<String>,
    #[serde(skip)]
    pub cmc: Vec<f64>,
}

impl IterationRecord {
    fn new(iteration: usize) -> Self {
        Self {
            iteration,
            match_counts: BTreeMap::new(),
            num_accepted: 0,
            num_candidates: 0,
            assoc_precision: None,
            assoc_recall: None,
            cmc1: None,
            cmc5: None,
            cmc10: None,
            cmc20: None,
            map: None,
            train_loss: None,
            checkpoint: None,
            warning: None,
            cmc: Vec::new(),
        }
    }
}

/// Outcome of a training stage.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub mean_loss: Option<f64>,
    pub warning: Option<String>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains a freshly initialized model on single-camera batches.
pub fn train_within_camera(
    view: &TrainingView,
    cfg: &PipelineConfig,
    init_rng: &mut impl Rng,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    let mut model = EmbeddingModel::random(cfg.arch, view.d_raw(), cfg.d_emb, init_rng);
    if cfg.steps_s1 == 0 {
        return Ok(TrainOutcome {
            model,
            mean_loss: None,
            warning: None,
        });
    }
    // per-camera identities are already distinct in the weak view
    let gap = (!cfg.weakly_supervised).then_some(cfg.sampler.time_gap);
    let sampler = TcsccSampler::new(view, cfg.sampler, gap, rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, model.params().len());
    let mut losses = Vec::with_capacity(cfg.steps_s1);
    for _ in 0..cfg.steps_s1 {
        let batch = sampler.sample(rng);
        let (loss, grad) = loss_gradient(&model, &batch, cfg.margin)?;
        adam_step(&mut opt, &mut model, &grad)?;
        losses.push(loss.value);
    }
    Ok(TrainOutcome {
        model,
        mean_loss: mean(&losses),
        warning: None,
    })
}

/// Fine-tunes `model` on camera-pair batches built from accepted matches.
/// Without a feasible camera pair the model comes back unchanged with a
/// warning.
pub fn train_cross_camera(
    model: &EmbeddingModel,
    view: &TrainingView,
    matches: &MatchSet,
    cfg: &PipelineConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    let unchanged = |warning: String| {
        warn!("{warning}");
        Ok(TrainOutcome {
            model: model.clone(),
            mean_loss: None,
            warning: Some(warning),
        })
    };
    if matches.num_accepted() == 0 {
        return unchanged("no accepted matches; cross-camera training skipped".into());
    }
    if cfg.steps_cross == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            mean_loss: None,
            warning: None,
        });
    }
    let sampler = match TccpcSampler::new(view, matches, cfg.sampler, rng) {
        Ok(s) => s,
        Err(Error::SamplingInfeasible(msg)) => {
            return unchanged(format!("{msg}; cross-camera training skipped"))
        }
        Err(e) => return Err(e),
    };
    let mut model = model.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, model.params().len());
    let mut losses = Vec::with_capacity(cfg.steps_cross);
    for _ in 0..cfg.steps_cross {
        let batch = sampler.sample(rng);
        let (loss, grad) = loss_gradient(&model, &batch, cfg.margin)?;
        adam_step(&mut opt, &mut model, &grad)?;
        losses.push(loss.value);
    }
    Ok(TrainOutcome {
        model,
        mean_loss: mean(&losses),
        warning: None,
    })
}

/// Output of [`run_progressive`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: EmbeddingModel,
    pub records: Vec<IterationRecord>,
    /// Stream names used, with their stream ids.
    pub streams: BTreeMap<String, u64>,
}

/// Hook called after every stage with the record, the stage's model and
/// the matches it trained on. It may fill in `checkpoint` and persist
/// artifacts; an error aborts the run.
pub trait StageObserver {
    fn on_stage(
        &mut self,
        record: &mut IterationRecord,
        model: &EmbeddingModel,
        matches: Option<&MatchSet>,
    ) -> Result<()>;
}

impl<F> StageObserver for F
where
    F: FnMut(&mut IterationRecord, &EmbeddingModel, Option<&MatchSet>) -> Result<()>,
{
    fn on_stage(
        &mut self,
        record: &mut IterationRecord,
        model: &EmbeddingModel,
        matches: Option<&MatchSet>,
    ) -> Result<()> {
        self(record, model, matches)
    }
}

/// Evaluation context built from the labeled dataset, if labels exist.
struct Evaluator<'a> {
    dataset: &'a TrackletDataset,
    protocol: Option<RetrievalProtocol>,
    truth: Option<GroundTruth>,
}

impl<'a> Evaluator<'a> {
    fn new(dataset: &'a TrackletDataset) -> Self {
        if !dataset.labeled() {
            return Self {
                dataset,
                protocol: None,
                truth: None,
            };
        }
        let protocol = match RetrievalProtocol::cross_camera(dataset) {
            Ok(p) => Some(p),
            Err(e) => {
                warn!("retrieval evaluation disabled: {e}");
                None
            }
        };
        Self {
            dataset,
            protocol,
            truth: GroundTruth::from_dataset(dataset),
        }
    }

    fn fill(
        &self,
        record: &mut IterationRecord,
        model: &EmbeddingModel,
        matches: Option<&MatchSet>,
    ) -> Result<()> {
        if let Some(p) = &self.protocol {
            let m = evaluate_retrieval(model, self.dataset, p)?;
            record.cmc1 = Some(m.rank(1));
            record.cmc5 = Some(m.rank(5));
            record.cmc10 = Some(m.rank(10));
            record.cmc20 = Some(m.rank(20));
            record.map = Some(m.map);
            record.cmc = m.cmc;
        }
        if let (Some(t), Some(ms)) = (&self.truth, matches) {
            let pr = association_pr(ms, t);
            record.assoc_precision = Some(pr.precision);
            record.assoc_recall = Some(pr.recall);
        }
        Ok(())
    }
}

/// Runs the full loop. Labels in `dataset`, when present, are used only to
/// score records; training and association see a label-free view (or the
/// merged per-camera view in weak mode).
pub fn run_progressive(
    dataset: &TrackletDataset,
    topology: Option<&CameraTopology>,
    cfg: &PipelineConfig,
    observer: &mut impl StageObserver,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let view = if cfg.weakly_supervised {
        TrainingView::weakly_supervised(dataset)?
    } else {
        TrainingView::unsupervised(dataset)
    };
    let evaluator = Evaluator::new(dataset);
    let mut seeds = SeedRegistry::new(cfg.seed);
    let mut records = Vec::new();

    let mut init_rng = seeds.stream("init");
    let mut s1_rng = seeds.stream("s1");
    let s1 = train_within_camera(&view, cfg, &mut init_rng, &mut s1_rng)?;
    let mut model = s1.model;
    let mut record = IterationRecord::new(0);
    record.train_loss = s1.mean_loss;
    evaluator.fill(&mut record, &model, None)?;
    observer.on_stage(&mut record, &model, None)?;
    info!("stage 0 (within-camera): rank-1 {:?}", record.cmc1);
    records.push(record);

    // one frame subset per tracklet for the whole run, so consecutive
    // associations differ only through the model
    let assoc_seed = seeds.derive_seed("assoc");
    for i in 1..=cfg.rounds() {
        let matches = associate_all(&view, &model, topology, &cfg.association, assoc_seed)?;
        let mut cross_rng = seeds.stream(&format!("cross/{i}"));
        let out = train_cross_camera(&model, &view, &matches, cfg, &mut cross_rng)?;
        model = out.model;

        let mut record = IterationRecord::new(i);
        record.match_counts = matches
            .match_counts()
            .into_iter()
            .map(|(cp, n)| (cp.to_string(), n))
            .collect();
        record.num_accepted = matches.num_accepted();
        record.num_candidates = matches.num_candidates();
        record.train_loss = out.mean_loss;
        record.warning = out.warning;
        evaluator.fill(&mut record, &model, Some(&matches))?;
        observer.on_stage(&mut record, &model, Some(&matches))?;
        info!(
            "iteration {i}: {} accepted of {} candidates, rank-1 {:?}",
            record.num_accepted, record.num_candidates, record.cmc1
        );
        records.push(record);
    }
    Ok(PipelineOutput {
        model,
        records,
        streams: seeds.issued().clone(),
    })
}

/// [`run_progressive`] without an observer.
pub fn run_progressive_plain(
    dataset: &TrackletDataset,
    topology: Option<&CameraTopology>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut noop = |_: &mut IterationRecord, _: &EmbeddingModel, _: Option<&MatchSet>| Ok(());
    run_progressive(dataset, topology, cfg, &mut noop)
}

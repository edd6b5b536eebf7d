use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use tastr_core::association::{associate_all, MatchSet};
use tastr_core::data::{
    load_dataset, load_topology, save_dataset, save_topology, CameraTopology, Tracklet,
    TrackletDataset, TrainingView,
};
use tastr_core::embedding::EmbeddingModel;
use tastr_core::evaluation::{
    association_pr, evaluate_retrieval, MetricsReport, RetrievalProtocol,
};
use tastr_core::pipeline::{run_progressive, IterationRecord};
use tastr_core::rng::{stream_id, SeedRegistry};
use tastr_core::simulator::{generate, GroundTruth};

use crate::config::RunConfig;
use crate::fail::{CoreExt, Fail, ResultExt, EXIT_INCOMPATIBLE, EXIT_MISSING, EXIT_STAGE};
use crate::manifest::ManifestWriter;

pub const TRACKLETS: &str = "tracklets.jsonl";
pub const TOPOLOGY: &str = "topology.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const METRICS: &str = "metrics.json";
pub const CMC: &str = "cmc.csv";

const SIM_STREAMS: [&str; 6] = [
    "sim.topology",
    "sim.appearance",
    "sim.viewpoint",
    "sim.routes",
    "sim.frames",
    "sim.fragments",
];

pub fn checkpoint_name(i: usize) -> String {
    format!("model_iter{i}.ckpt")
}

pub fn matches_name(i: usize) -> String {
    format!("matches_iter{i}.csv")
}

fn cmc_name(i: usize) -> String {
    format!("cmc_iter{i}.csv")
}

fn create_dir(dir: &Path) -> Result<(), Fail> {
    std::fs::create_dir_all(dir)
        .with_code(EXIT_STAGE, || format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Fail> {
    std::fs::write(path, contents)
        .with_code(EXIT_STAGE, || format!("cannot write {}", path.display()))
}

fn require(path: &Path) -> Result<(), Fail> {
    if path.exists() {
        Ok(())
    } else {
        Err(Fail::msg(
            EXIT_MISSING,
            format!("missing input {}", path.display()),
        ))
    }
}

pub fn cmc_csv(cmc: &[f64]) -> String {
    let mut s = String::from("rank,accuracy\n");
    for (r, a) in cmc.iter().enumerate() {
        writeln!(s, "{},{}", r + 1, a).expect("writing to a string");
    }
    s
}

fn records_json(records: &[IterationRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize") + "\n"
}

/// Loads `tracklets.jsonl`, falling back to `ground_truth.json` for labels
/// when the tracklet file carries none.
pub fn load_data(data: &Path) -> Result<TrackletDataset, Fail> {
    let path = data.join(TRACKLETS);
    require(&path)?;
    let ds = load_dataset(&path).stage(|| format!("cannot load {}", path.display()))?;
    if ds.labeled() {
        return Ok(ds);
    }
    let gt = data.join(GROUND_TRUTH);
    if !gt.exists() {
        return Ok(ds);
    }
    let truth = GroundTruth::load(&gt).stage(|| format!("cannot load {}", gt.display()))?;
    attach_labels(&ds, &truth)
}

fn attach_labels(ds: &TrackletDataset, truth: &GroundTruth) -> Result<TrackletDataset, Fail> {
    let tracklets = ds
        .tracklets()
        .iter()
        .map(|t| {
            Tracklet::new(
                t.id,
                t.camera,
                t.frames().to_vec(),
                truth.labels.get(&t.id).copied(),
            )
        })
        .collect::<tastr_core::Result<Vec<_>>>()?;
    Ok(TrackletDataset::new(tracklets)?)
}

fn load_topology_for(data: &Path, needed: bool) -> Result<Option<CameraTopology>, Fail> {
    let path = data.join(TOPOLOGY);
    if !path.exists() {
        if needed {
            return Err(Fail::msg(
                EXIT_MISSING,
                format!(
                    "missing input {} (needed for spatio-temporal regularization)",
                    path.display()
                ),
            ));
        }
        return Ok(None);
    }
    Ok(Some(
        load_topology(&path).stage(|| format!("cannot load {}", path.display()))?,
    ))
}

fn load_model(path: &Path) -> Result<EmbeddingModel, Fail> {
    require(path)?;
    EmbeddingModel::load(path).stage(|| format!("cannot load checkpoint {}", path.display()))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), Fail> {
    let sim = cfg.sim_config();
    sim.validate()?;
    create_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let mut manifest =
        ManifestWriter::create(out, "simulate", cfg.to_toml(), cfg.hash(), cfg.seed)?;
    for s in SIM_STREAMS {
        manifest
            .manifest
            .streams
            .insert(s.to_string(), stream_id(s));
    }
    let result = (|| {
        let t = Instant::now();
        let world = generate(&sim).stage(|| "simulation failed".into())?;
        manifest.time("generate", t);
        save_dataset(&world.dataset, out.join(TRACKLETS))?;
        manifest.output(TRACKLETS);
        save_topology(&world.topology, out.join(TOPOLOGY))?;
        manifest.output(TOPOLOGY);
        world.truth.save(out.join(GROUND_TRUTH))?;
        manifest.output(GROUND_TRUTH);
        info!(
            "simulated {} tracklets on {} cameras, {} true cross-camera pairs",
            world.dataset.len(),
            world.dataset.cameras().len(),
            world.truth.num_pairs()
        );
        Ok(())
    })();
    manifest.finish(&result, result.is_err().then(|| "simulate".to_string()))?;
    result
}

pub fn run(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), Fail> {
    let pcfg = cfg.pipeline();
    pcfg.validate()?;
    let dataset = load_data(data)?;
    if pcfg.weakly_supervised && !dataset.labeled() {
        return Err(Fail::msg(
            EXIT_INCOMPATIBLE,
            "weak supervision needs per-camera identities in the dataset",
        ));
    }
    let topology = load_topology_for(data, pcfg.association.use_str)?;

    create_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let mut manifest = ManifestWriter::create(out, "run", cfg.to_toml(), cfg.hash(), cfg.seed)?;
    manifest.output("config.toml");

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut stage_start = Instant::now();
    let mut observer = |record: &mut IterationRecord,
                        model: &EmbeddingModel,
                        matches: Option<&MatchSet>|
     -> tastr_core::Result<()> {
        let i = record.iteration;
        let ckpt = checkpoint_name(i);
        model.save(out.join(&ckpt))?;
        record.checkpoint = Some(ckpt.clone());
        manifest.output(ckpt);
        if let Some(m) = matches {
            m.write_csv(out.join(matches_name(i)))?;
            manifest.output(matches_name(i));
        }
        if !record.cmc.is_empty() {
            std::fs::write(out.join(cmc_name(i)), cmc_csv(&record.cmc))?;
            manifest.output(cmc_name(i));
        }
        if let Some(w) = &record.warning {
            warn!("iteration {i}: {w}");
        }
        records.push(record.clone());
        std::fs::write(out.join(METRICS), records_json(&records))?;
        manifest.output(METRICS);
        manifest.time(&format!("stage_{i}"), stage_start);
        stage_start = Instant::now();
        // keeps the manifest current if a later stage fails
        manifest
            .write()
            .map_err(|e| tastr_core::Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(())
    };
    let result = run_progressive(&dataset, topology.as_ref(), &pcfg, &mut observer);
    let failed_stage = match records.last() {
        None => "within-camera training".to_string(),
        Some(r) => format!("iteration {}", r.iteration + 1),
    };
    let result = result.map_err(Fail::from).and_then(|output| {
        manifest.manifest.streams = output.streams;
        if let Some(last) = records.last().filter(|r| !r.cmc.is_empty()) {
            write_file(&out.join(CMC), &cmc_csv(&last.cmc))?;
            manifest.output(CMC);
        }
        Ok(())
    });
    let result = result.map_err(|e| e.context(format!("stage failed: {failed_stage}")));
    manifest.finish(&result, result.is_err().then_some(failed_stage))?;
    result
}

/// Evaluation of one checkpoint. Returns the report; writes `metrics.json`
/// and `cmc.csv` into `out` when given.
pub fn eval(
    checkpoint: &Path,
    data: &Path,
    matches: Option<&Path>,
    out: Option<&Path>,
) -> Result<MetricsReport, Fail> {
    let model = load_model(checkpoint)?;
    let dataset = load_data(data)?;
    if model.d_raw() != dataset.d_raw() {
        return Err(Fail::msg(
            EXIT_INCOMPATIBLE,
            format!(
                "checkpoint expects {}-dimensional features, dataset has {}",
                model.d_raw(),
                dataset.d_raw()
            ),
        ));
    }
    if !dataset.labeled() {
        return Err(Fail::msg(
            EXIT_INCOMPATIBLE,
            "evaluation needs identity labels in the dataset or ground_truth.json",
        ));
    }
    let protocol = RetrievalProtocol::cross_camera(&dataset)?;
    let retrieval = evaluate_retrieval(&model, &dataset, &protocol)?;
    let assoc = match matches {
        Some(path) => {
            require(path)?;
            let ms =
                MatchSet::read_csv(path).stage(|| format!("cannot read {}", path.display()))?;
            let truth = GroundTruth::from_dataset(&dataset).expect("dataset is labeled");
            Some(association_pr(&ms, &truth))
        }
        None => None,
    };
    let report = MetricsReport::from_parts(&retrieval, assoc.as_ref());
    if let Some(out) = out {
        create_dir(out)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_file(&out.join(METRICS), &json)?;
        write_file(&out.join(CMC), &cmc_csv(&report.cmc))?;
    }
    Ok(report)
}

/// One association pass with a fixed checkpoint. Uses the same feature
/// sampling stream as `run` with the same seed.
pub fn associate(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
) -> Result<MatchSet, Fail> {
    let pcfg = cfg.pipeline();
    pcfg.validate()?;
    let model = load_model(checkpoint)?;
    let dataset = load_data(data)?;
    if model.d_raw() != dataset.d_raw() {
        return Err(Fail::msg(
            EXIT_INCOMPATIBLE,
            format!(
                "checkpoint expects {}-dimensional features, dataset has {}",
                model.d_raw(),
                dataset.d_raw()
            ),
        ));
    }
    let topology = load_topology_for(data, pcfg.association.use_str)?;
    let view = if pcfg.weakly_supervised {
        TrainingView::weakly_supervised(&dataset).map_err(|e| Fail::new(EXIT_INCOMPATIBLE, e))?
    } else {
        TrainingView::unsupervised(&dataset)
    };
    let seed = SeedRegistry::new(cfg.seed).derive_seed("assoc");
    let matches = associate_all(&view, &model, topology.as_ref(), &pcfg.association, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    matches
        .write_csv(out)
        .stage(|| format!("cannot write {}", out.display()))?;
    if let Some(truth) = GroundTruth::from_dataset(&dataset) {
        let pr = association_pr(&matches, &truth);
        info!(
            "{} accepted of {} candidates; precision {:.4}, recall {:.4}",
            pr.accepted,
            matches.num_candidates(),
            pr.precision,
            pr.recall
        );
    }
    Ok(matches)
}

pub fn config_path_or_default(path: Option<&PathBuf>) -> Result<RunConfig, Fail> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

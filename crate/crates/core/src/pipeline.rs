//! Stage runners: configuration, artifact layout and run manifests.
//!
//! Every stage reads its inputs from resolved paths, writes its artifacts
//! under the output directory and records a run manifest holding the resolved
//! configuration plus SHA-256 digests of everything read and written.
//! Replaying a manifest reruns the stage and compares output digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    corpus_stats, join_labels, read_labeled_ndjson, read_manifest, tag_completion,
    write_labeled_ndjson, CompletionSource,
};
use crate::datasets::{build_variant, DatasetSpec, DatasetSplit, PresetRegistry, VariantSummary};
use crate::error::{Error, Result};
use crate::eval::{
    binarize_all_levels, confusion, error_distribution, metrics, BinarizationLevel,
    ConfusionMatrix, ErrorDistribution, LevelReport, MetricsReport,
};
use crate::learner::{
    fit, holdout, load_tensors, predict, read_features, reinit_head, train_head_on_features,
    ArchitectureDescriptor, ModelCheckpoint, Network, TrainConfig,
};
use crate::nbi::{nbi_stats, parse_nbi_file, write_ndjson, NbiProfile};
use crate::report;
use crate::synth::{gen_corpus, SynthSpec};

pub const TOOL_NAME: &str = "bridgecap";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the run-manifest and JSON artifact schemas.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub nbi: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Root for manifest image paths; defaults to the manifest's directory,
    /// or the output directory when no manifest is configured.
    pub image_root: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub evaluation: Option<PathBuf>,
    pub binarized: Option<PathBuf>,
    /// Extra dataset presets, a JSON array of dataset specs.
    pub presets: Option<PathBuf>,
    /// Two-class checkpoint used to tag completion during corpus matching.
    pub completion_model: Option<PathBuf>,
    /// Feature CSVs; when set, `train` fits a linear head on them instead of images.
    pub features_train: Option<PathBuf>,
    pub features_val: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            nbi: None,
            manifest: None,
            image_root: None,
            labeled: None,
            dataset: None,
            split: None,
            model: None,
            evaluation: None,
            binarized: None,
            presets: None,
            completion_model: None,
            features_train: None,
            features_val: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Builtin(String),
    Inline(NbiProfile),
}

impl Default for ProfileChoice {
    fn default() -> Self {
        ProfileChoice::Builtin("inventory".into())
    }
}

impl ProfileChoice {
    pub fn resolve(&self) -> Result<NbiProfile> {
        let p = match self {
            ProfileChoice::Builtin(name) => NbiProfile::builtin(name)
                .ok_or_else(|| Error::Config(format!("unknown inventory profile {name:?}")))?,
            ProfileChoice::Inline(p) => p.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetChoice {
    Preset(String),
    Inline(Box<DatasetSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Defaults to the reference architecture for the dataset's classes.
    pub architecture: Option<ArchitectureDescriptor>,
    /// Checkpoint whose weights initialize every layer except a fresh head.
    pub init_from: Option<PathBuf>,
    /// Validate on a stratified holdout of the training side instead of the test side.
    pub val_fraction: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            architecture: None,
            init_from: None,
            val_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelChoice {
    /// One level per class boundary.
    #[default]
    EveryBoundary,
    /// Levels 1..=5 at 10, 15, 20, 27 and 36 tons over a 7-class design-load grouping.
    DesignLoad,
    Thresholds {
        class_upper_tons: Vec<f64>,
        thresholds: Vec<f64>,
    },
}

impl LevelChoice {
    pub fn resolve(&self, k: usize) -> Result<Vec<BinarizationLevel>> {
        match self {
            LevelChoice::EveryBoundary => Ok(BinarizationLevel::every_boundary(k)),
            LevelChoice::DesignLoad => {
                let levels: Vec<_> = BinarizationLevel::design_load_table()
                    .into_iter()
                    .filter(|l| l.boundary < k)
                    .collect();
                if levels.is_empty() {
                    return Err(Error::Config(format!(
                        "{k} classes leave no design-load level"
                    )));
                }
                Ok(levels)
            }
            LevelChoice::Thresholds {
                class_upper_tons,
                thresholds,
            } => {
                if class_upper_tons.len() != k {
                    return Err(Error::Config(format!(
                        "{} class tonnages for {k} classes",
                        class_upper_tons.len()
                    )));
                }
                BinarizationLevel::from_thresholds(class_upper_tons, thresholds)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    /// Also render SVG charts.
    pub svg: bool,
    pub levels: LevelChoice,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub nbi_profile: ProfileChoice,
    pub dataset: Option<DatasetChoice>,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub report: ReportOptions,
    pub synth: SynthSpec,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Stage {
    NbiParse,
    CorpusMatch,
    DatasetBuild { preset: Option<String> },
    Train,
    Evaluate,
    Binarize,
    SynthGen,
    Report,
}

impl Stage {
    pub fn slug(&self) -> &'static str {
        match self {
            Stage::NbiParse => "nbi-parse",
            Stage::CorpusMatch => "corpus-match",
            Stage::DatasetBuild { .. } => "dataset-build",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Binarize => "binarize",
            Stage::SynthGen => "synth-gen",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    /// Fully resolved configuration; every input path is explicit.
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Config(format!("paths.{what} is required for this command")))
}

struct Run {
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
}

impl Run {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Run {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        })
    }

    fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let b = read_bytes(path)?;
        self.record_input(path, &b);
        Ok(b)
    }

    fn input_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.input(path)?)
            .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))
    }

    /// One aggregate digest over a set of files below `root`.
    fn input_tree(&mut self, root: &Path, rel_paths: &[&str]) -> Result<()> {
        let mut sorted: Vec<&str> = rel_paths.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut h = Sha256::new();
        let mut total = 0u64;
        for rel in sorted {
            let b = read_bytes(&root.join(rel))?;
            total += b.len() as u64;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(Sha256::digest(&b));
        }
        self.inputs.push(FileDigest {
            path: format!("{}/ ({} files)", root.display(), rel_paths.len()),
            sha256: hex::encode(h.finalize()),
            bytes: total,
        });
        Ok(())
    }

    fn output(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn output_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_vec_pretty(value)?;
        v.push(b'\n');
        self.output(rel, &v)
    }
}

/// Evaluation artifact consumed by `binarize` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub schema: u32,
    pub classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport<f64>,
    pub error_distribution: ErrorDistribution<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarized {
    pub schema: u32,
    pub multiclass_accuracy: f64,
    pub levels: Vec<LevelReport<f64>>,
}

/// Runs one stage, writes its artifacts and its run manifest
/// `run-<stage>.json` into the output directory.
pub fn run_stage(stage: &Stage, config: &PipelineConfig) -> Result<RunManifest> {
    let mut cfg = config.clone();
    let mut run = Run::new(&cfg.paths.output_dir)?;
    match stage {
        Stage::NbiParse => nbi_parse(&mut cfg, &mut run)?,
        Stage::CorpusMatch => corpus_match(&mut cfg, &mut run)?,
        Stage::DatasetBuild { preset } => dataset_build(&mut cfg, &mut run, preset.as_deref())?,
        Stage::Train => train(&mut cfg, &mut run)?,
        Stage::Evaluate => evaluate(&mut cfg, &mut run)?,
        Stage::Binarize => binarize(&mut cfg, &mut run)?,
        Stage::SynthGen => synth_gen(&mut cfg, &mut run)?,
        Stage::Report => report_stage(&mut cfg, &mut run)?,
    }
    let manifest = RunManifest {
        schema: SCHEMA_VERSION,
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        stage: stage.clone(),
        config: cfg,
        seeds: run.seeds,
        inputs: run.inputs,
        outputs: run.outputs,
    };
    let path = run.out_dir.join(format!("run-{}.json", stage.slug()));
    let mut v = serde_json::to_vec_pretty(&manifest)?;
    v.push(b'\n');
    fs::write(&path, v).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub manifest: RunManifest,
    /// Output paths whose digest differs from the recorded one.
    pub mismatched: Vec<String>,
}

/// Reruns a recorded stage, optionally into another output directory, after
/// checking that its inputs are unchanged.
pub fn replay(manifest_path: &Path, output_dir: Option<&Path>) -> Result<ReplayOutcome> {
    let recorded: RunManifest = serde_json::from_str(&read_text(manifest_path)?)
        .map_err(|e| Error::Format(format!("run manifest {}: {e}", manifest_path.display())))?;
    if recorded.schema != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "run manifest schema {} (expected {SCHEMA_VERSION})",
            recorded.schema
        )));
    }
    // single files are checked up front; image trees only after the rerun
    for old in &recorded.inputs {
        let path = Path::new(&old.path);
        if path.is_file() && sha256_hex(&read_bytes(path)?) != old.sha256 {
            return Err(Error::Config(format!(
                "input {} changed since the recorded run",
                old.path
            )));
        }
    }
    let mut cfg = recorded.config.clone();
    if let Some(dir) = output_dir {
        cfg.paths.output_dir = dir.to_path_buf();
    }
    let fresh = run_stage(&recorded.stage, &cfg)?;
    for (old, new) in recorded.inputs.iter().zip(&fresh.inputs) {
        if old.sha256 != new.sha256 {
            return Err(Error::Config(format!(
                "input {} changed since the recorded run",
                old.path
            )));
        }
    }
    if recorded.inputs.len() != fresh.inputs.len() {
        return Err(Error::Config(
            "replay read a different set of inputs".into(),
        ));
    }
    let now: BTreeMap<&str, &str> = fresh
        .outputs
        .iter()
        .map(|d| (d.path.as_str(), d.sha256.as_str()))
        .collect();
    let mismatched = recorded
        .outputs
        .iter()
        .filter(|d| now.get(d.path.as_str()) != Some(&d.sha256.as_str()))
        .map(|d| d.path.clone())
        .collect();
    Ok(ReplayOutcome {
        manifest: fresh,
        mismatched,
    })
}

fn nbi_parse(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    let nbi = require(&cfg.paths.nbi, "nbi")?;
    let profile = cfg.nbi_profile.resolve()?;
    cfg.nbi_profile = ProfileChoice::Inline(profile.clone());
    run.input(&nbi)?;
    let parsed = parse_nbi_file(&nbi, &profile)?;
    let mut buf = Vec::new();
    write_ndjson(&mut buf, &parsed.records)?;
    run.output("nbi_records.ndjson", &buf)?;
    let mut rejects = csv::Writer::from_writer(Vec::new());
    rejects.write_record(["row", "reason"])?;
    for r in &parsed.rejects {
        rejects.write_record([r.row.to_string(), r.reason.clone()])?;
    }
    let rejects = rejects
        .into_inner()
        .map_err(|e| Error::Invariant(e.to_string()))?;
    run.output("nbi_rejects.csv", &rejects)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        schema: u32,
        stats: &'a crate::nbi::NbiFileStats,
        summary: crate::nbi::NbiSummary,
    }
    run.output_json(
        "nbi_summary.json",
        &Summary {
            schema: SCHEMA_VERSION,
            stats: &parsed.stats,
            summary: nbi_stats(&parsed.records),
        },
    )
}

fn image_root(cfg: &PipelineConfig, manifest: &Path) -> PathBuf {
    cfg.paths.image_root.clone().unwrap_or_else(|| {
        manifest
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn corpus_match(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    let nbi = require(&cfg.paths.nbi, "nbi")?;
    let manifest_path = require(&cfg.paths.manifest, "manifest")?;
    let profile = cfg.nbi_profile.resolve()?;
    cfg.nbi_profile = ProfileChoice::Inline(profile.clone());
    run.input(&nbi)?;
    let parsed = parse_nbi_file(&nbi, &profile)?;
    let manifest = read_manifest(run.input(&manifest_path)?.as_slice())?;
    let (mut images, join) = join_labels(&manifest, &parsed.records)?;
    if let Some(model_path) = cfg.paths.completion_model.clone() {
        let root = image_root(cfg, &manifest_path);
        cfg.paths.image_root = Some(root.clone());
        let ckpt = ModelCheckpoint::from_bytes(&run.input(&model_path)?)?;
        let rels: Vec<&str> = images.iter().map(|i| i.image_path.as_str()).collect();
        run.input_tree(&root, &rels)?;
        let tagged = tag_completion(&images, CompletionSource::Model(&ckpt), &root)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_path", "p_complete", "flag"])?;
        for p in &tagged.probes {
            w.write_record([
                p.image_path.as_str(),
                &format!("{:.6}", p.p_complete),
                p.flag.as_str(),
            ])?;
        }
        for r in &tagged.rejects {
            w.write_record([r.image_path.as_str(), "", &format!("reject: {}", r.reason)])?;
        }
        run.output(
            "completion_probes.csv",
            &w.into_inner()
                .map_err(|e| Error::Invariant(e.to_string()))?,
        )?;
        images = tagged.images;
    }
    let mut buf = Vec::new();
    write_labeled_ndjson(&mut buf, &images)?;
    run.output("labeled.ndjson", &buf)?;
    run.output_json("join_report.json", &join)?;
    run.output_json("corpus_stats.json", &corpus_stats(&images))
}

fn registry(cfg: &PipelineConfig, run: &mut Run) -> Result<PresetRegistry> {
    let mut reg = PresetRegistry::builtin();
    if let Some(p) = &cfg.paths.presets {
        let text = run.input_text(p)?;
        for spec in PresetRegistry::from_json(&text)?.specs() {
            reg.insert(spec.clone())?;
        }
    }
    Ok(reg)
}

fn dataset_build(cfg: &mut PipelineConfig, run: &mut Run, preset: Option<&str>) -> Result<()> {
    let labeled = cfg.or_out(&cfg.paths.labeled, "labeled.ndjson");
    cfg.paths.labeled = Some(labeled.clone());
    let reg = registry(cfg, run)?;
    let choice = match preset {
        Some(name) => DatasetChoice::Preset(name.to_string()),
        None => cfg
            .dataset
            .clone()
            .ok_or_else(|| Error::Config("no dataset preset given".into()))?,
    };
    let spec = match &choice {
        DatasetChoice::Preset(name) => reg
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown dataset preset {name:?}")))?,
        DatasetChoice::Inline(spec) => (**spec).clone().normalized()?,
    };
    cfg.dataset = Some(choice);
    run.seeds.insert("split".into(), spec.seed);
    run.seeds.insert(
        "downsample".into(),
        spec.downsample_seed.unwrap_or(spec.seed),
    );
    let corpus = read_labeled_ndjson(&run.input_text(&labeled)?)?;
    let variant = build_variant(&spec, &corpus, &reg)?;
    let mut buf = Vec::new();
    variant.split.write_csv(&mut buf)?;
    run.output("split.csv", &buf)?;
    let mut counts = String::from("class,label,available,realized,train,test\n");
    let s = &variant.summary;
    for (i, label) in s.classes.iter().enumerate() {
        counts.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            if label.contains(',') {
                format!("\"{label}\"")
            } else {
                label.clone()
            },
            s.available[i],
            s.realized[i],
            s.train[i],
            s.test[i]
        ));
    }
    counts.push_str(&format!(
        "total,,{},{},{},{}\n",
        s.available.iter().sum::<usize>(),
        s.total,
        s.train.iter().sum::<usize>(),
        s.test.iter().sum::<usize>()
    ));
    run.output("dataset_counts.csv", counts.as_bytes())?;
    run.output_json("dataset.json", &variant.summary)
}

fn load_dataset(cfg: &mut PipelineConfig, run: &mut Run) -> Result<(VariantSummary, DatasetSplit)> {
    let dataset = cfg.or_out(&cfg.paths.dataset, "dataset.json");
    let split = cfg.or_out(&cfg.paths.split, "split.csv");
    cfg.paths.dataset = Some(dataset.clone());
    cfg.paths.split = Some(split.clone());
    let summary: VariantSummary = serde_json::from_str(&run.input_text(&dataset)?)
        .map_err(|e| Error::Format(format!("{}: {e}", dataset.display())))?;
    let split = DatasetSplit::read_csv(run.input(&split)?.as_slice(), summary.classes.clone())?;
    Ok((summary, split))
}

fn split_image_root(cfg: &mut PipelineConfig) -> PathBuf {
    let root = match (&cfg.paths.image_root, &cfg.paths.manifest) {
        (Some(r), _) => r.clone(),
        (None, Some(m)) => image_root(cfg, m),
        // generated corpora keep their images under the output directory
        (None, None) => cfg.paths.output_dir.clone(),
    };
    cfg.paths.image_root = Some(root.clone());
    root
}

fn train(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    cfg.train.validate()?;
    run.seeds.insert("init".into(), cfg.train.init_seed);
    run.seeds.insert("shuffle".into(), cfg.train.shuffle_seed);
    let ckpt = if let Some(ft) = cfg.paths.features_train.clone() {
        let train_set = read_features(run.input(&ft)?.as_slice())?;
        let val_set = match cfg.paths.features_val.clone() {
            Some(p) => Some(read_features(run.input(&p)?.as_slice())?),
            None => None,
        };
        train_head_on_features(&train_set, val_set.as_ref(), &cfg.train)?
    } else {
        let (summary, split) = load_dataset(cfg, run)?;
        let root = split_image_root(cfg);
        let colour = summary.spec.colour;
        let size = cfg.model.image_size;
        let rels: Vec<&str> = split
            .train
            .iter()
            .chain(&split.test)
            .map(|i| i.image_path.as_str())
            .collect();
        run.input_tree(&root, &rels)?;
        let train_all = load_tensors::<f32>(&split.train, &root, size, colour)?;
        let test = load_tensors::<f32>(&split.test, &root, size, colour)?;
        let (train_set, val_set) = match cfg.model.val_fraction {
            Some(f) => holdout(&train_all, f, cfg.train.shuffle_seed)?,
            None => (train_all, test),
        };
        let k = summary.classes.len();
        let net = match &cfg.model.init_from {
            Some(p) => {
                let base = ModelCheckpoint::from_bytes(&run.input(p)?)?;
                if base.network.arch().input != [colour.channels(), size, size] {
                    return Err(Error::Config(format!(
                        "initial checkpoint expects input {:?}",
                        base.network.arch().input
                    )));
                }
                reinit_head(&base, summary.classes.clone(), cfg.train.init_seed)?.network
            }
            None => {
                let arch = cfg.model.architecture.clone().unwrap_or_else(|| {
                    ArchitectureDescriptor::reference(colour.channels(), size, k)
                });
                cfg.model.architecture = Some(arch.clone());
                Network::new(arch, cfg.train.init_seed)?
            }
        };
        if net.class_count() != k {
            return Err(Error::Config(format!(
                "architecture ends in {} classes, dataset has {k}",
                net.class_count()
            )));
        }
        let fitted = fit(net, &train_set, &val_set, &cfg.train)?;
        let mut ckpt = ModelCheckpoint::new(fitted.network, summary.classes.clone(), colour)?;
        ckpt.history = fitted.history;
        ckpt
    };
    run.output("model.ckpt", &ckpt.to_bytes()?)?;
    run.output_json("history.json", &ckpt.history)?;
    run.output("history.csv", report::history_csv(&ckpt.history).as_bytes())
}

fn evaluate(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    let model = cfg.or_out(&cfg.paths.model, "model.ckpt");
    cfg.paths.model = Some(model.clone());
    let ckpt = ModelCheckpoint::from_bytes(&run.input(&model)?)?;
    let (summary, split) = load_dataset(cfg, run)?;
    if ckpt.classes != summary.classes {
        return Err(Error::Config(format!(
            "model classes {:?} differ from dataset classes {:?}",
            ckpt.classes, summary.classes
        )));
    }
    let root = split_image_root(cfg);
    let rels: Vec<&str> = split.test.iter().map(|i| i.image_path.as_str()).collect();
    run.input_tree(&root, &rels)?;
    let [_, size, _] = ckpt.network.arch().input;
    let test = load_tensors::<f32>(&split.test, &root, size, ckpt.colour)?;
    let preds = predict(&ckpt.network, &test)?;
    let cm = confusion(&preds, &test.labels, summary.classes.clone())?;
    let m = metrics::<f64>(&cm)?;
    let dist = error_distribution::<f64>(&cm)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_path", "actual", "predicted"])?;
    for ((item, &p), &a) in split.test.iter().zip(&preds).zip(&test.labels) {
        w.write_record([
            item.image_path.as_str(),
            &(a + 1).to_string(),
            &(p + 1).to_string(),
        ])?;
    }
    run.output(
        "predictions.csv",
        &w.into_inner()
            .map_err(|e| Error::Invariant(e.to_string()))?,
    )?;
    run.output("metrics.csv", report::metrics_csv(&m).as_bytes())?;
    run.output("confusion.csv", report::confusion_csv(&cm).as_bytes())?;
    run.output(
        "error_distribution.csv",
        report::distribution_csv(&dist).as_bytes(),
    )?;
    run.output_json(
        "evaluation.json",
        &Evaluation {
            schema: SCHEMA_VERSION,
            classes: summary.classes,
            confusion: cm,
            metrics: m,
            error_distribution: dist,
        },
    )
}

fn load_evaluation(cfg: &mut PipelineConfig, run: &mut Run) -> Result<Evaluation> {
    let path = cfg.or_out(&cfg.paths.evaluation, "evaluation.json");
    cfg.paths.evaluation = Some(path.clone());
    let e: Evaluation = serde_json::from_str(&run.input_text(&path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if e.schema != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: schema {}",
            path.display(),
            e.schema
        )));
    }
    Ok(e)
}

fn binarize(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    let e = load_evaluation(cfg, run)?;
    let levels = cfg.report.levels.resolve(e.confusion.k())?;
    let reports = binarize_all_levels::<f64>(&e.confusion, &levels)?;
    // merging classes can only remove off-diagonal errors
    for r in &reports {
        if r.metrics.accuracy < r.multiclass_accuracy {
            return Err(Error::Invariant(format!(
                "level {} accuracy {} below multiclass accuracy {}",
                r.level.level, r.metrics.accuracy, r.multiclass_accuracy
            )));
        }
    }
    run.output("binarized.csv", report::levels_csv(&reports).as_bytes())?;
    run.output_json(
        "binarized.json",
        &Binarized {
            schema: SCHEMA_VERSION,
            multiclass_accuracy: e.confusion.trace() as f64 / e.confusion.total() as f64,
            levels: reports,
        },
    )
}

fn synth_gen(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    run.seeds.insert("synth".into(), cfg.synth.seed);
    let corpus = gen_corpus(&cfg.synth, &run.out_dir)?;
    for name in ["manifest.csv", "inventory.csv"] {
        let b = read_bytes(&run.out_dir.join(name))?;
        run.outputs.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(&b),
            bytes: b.len() as u64,
        });
    }
    if !cfg.synth.labels_only {
        let manifest = read_manifest(read_bytes(&corpus.manifest)?.as_slice())?;
        for e in &manifest {
            let b = read_bytes(&run.out_dir.join(&e.image_path))?;
            run.outputs.push(FileDigest {
                path: e.image_path.clone(),
                sha256: sha256_hex(&b),
                bytes: b.len() as u64,
            });
        }
    }
    #[derive(Serialize)]
    struct Summary {
        schema: u32,
        images: usize,
        bridges: usize,
        partial_images: usize,
    }
    run.output_json(
        "synth.json",
        &Summary {
            schema: SCHEMA_VERSION,
            images: corpus.images,
            bridges: corpus.bridges,
            partial_images: corpus.partial_images,
        },
    )
}

fn report_stage(cfg: &mut PipelineConfig, run: &mut Run) -> Result<()> {
    let e = load_evaluation(cfg, run)?;
    let binarized_path = cfg.or_out(&cfg.paths.binarized, "binarized.json");
    let binarized: Option<Binarized> = if binarized_path.exists() {
        cfg.paths.binarized = Some(binarized_path.clone());
        Some(
            serde_json::from_str(&run.input_text(&binarized_path)?)
                .map_err(|err| Error::Format(format!("{}: {err}", binarized_path.display())))?,
        )
    } else {
        None
    };
    let m = &e.metrics;
    run.output("report/metrics.csv", report::metrics_csv(m).as_bytes())?;
    run.output(
        "report/error_distribution.csv",
        report::distribution_csv(&e.error_distribution).as_bytes(),
    )?;
    if let Some(b) = &binarized {
        run.output(
            "report/levels.csv",
            report::levels_csv(&b.levels).as_bytes(),
        )?;
    }
    #[derive(Serialize)]
    struct Report<'a> {
        schema: u32,
        classes: &'a [String],
        metrics: &'a MetricsReport<f64>,
        error_distribution: &'a ErrorDistribution<f64>,
        levels: Option<&'a [LevelReport<f64>]>,
    }
    run.output_json(
        "report/report.json",
        &Report {
            schema: SCHEMA_VERSION,
            classes: &e.classes,
            metrics: m,
            error_distribution: &e.error_distribution,
            levels: binarized.as_ref().map(|b| b.levels.as_slice()),
        },
    )?;
    if cfg.report.svg {
        let svg = report::metrics_svg(
            "Multi-class performance (macro)",
            m.accuracy,
            m.macro_precision,
            m.macro_recall,
            m.macro_f1,
        );
        run.output("report/metrics.svg", svg.as_bytes())?;
        run.output(
            "report/error_distribution.svg",
            report::distribution_svg(&e.error_distribution).as_bytes(),
        )?;
        if let Some(b) = &binarized {
            for l in &b.levels {
                run.output(
                    &format!("report/level_{}.svg", l.level.level),
                    report::level_svg(l).as_bytes(),
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"paths": {"nbi": "x", "bogus": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"trian": {}}"#).is_err());
        let c =
            PipelineConfig::from_json(r#"{"dataset": "DL2", "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(c.dataset, Some(DatasetChoice::Preset("DL2".into())));
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn level_choices() {
        assert_eq!(LevelChoice::EveryBoundary.resolve(4).unwrap().len(), 3);
        assert_eq!(LevelChoice::DesignLoad.resolve(7).unwrap().len(), 5);
        assert_eq!(LevelChoice::DesignLoad.resolve(3).unwrap().len(), 2);
        let t = LevelChoice::Thresholds {
            class_upper_tons: vec![10.0, 20.0, 30.0],
            thresholds: vec![20.0],
        };
        assert_eq!(t.resolve(3).unwrap()[0].boundary, 2);
        assert!(t.resolve(4).is_err());
    }

    #[test]
    fn missing_required_path_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.output_dir = dir.path().to_path_buf();
        assert!(matches!(
            run_stage(&Stage::NbiParse, &cfg),
            Err(Error::Config(_))
        ));
    }
}

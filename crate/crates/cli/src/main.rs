//! `bridgecap` command line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 input or format error,
//! 3 internal invariant violation (including a replay that does not
//! reproduce its recorded outputs).

use std::path::PathBuf;
use std::process::ExitCode;

use bridgecap::pipeline::{
    replay, run_stage, DatasetChoice, LevelChoice, PipelineConfig, ProfileChoice, RunManifest,
    Stage,
};
use bridgecap::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "bridgecap",
    version,
    about = "Bridge load-capacity classification pipeline"
)]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory receiving artifacts and run manifests.
    #[arg(long, short = 'o', global = true, env = "BRIDGECAP_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an inventory file into normalized records.
    NbiParse(NbiArgs),
    /// Join an image manifest to inventory records and attach labels.
    CorpusMatch(MatchArgs),
    /// Build a dataset variant and its train/test split.
    DatasetBuild(DatasetArgs),
    /// Train a classifier on a built dataset or on feature vectors.
    Train(TrainArgs),
    /// Score a trained model on the test split.
    Evaluate(EvalArgs),
    /// Collapse an evaluation into binary threshold levels.
    Binarize(BinarizeArgs),
    /// Generate a synthetic image corpus and matching inventory.
    SynthGen(SynthArgs),
    /// Emit CSV, JSON and optional SVG summaries of an evaluation.
    Report(ReportArgs),
    /// Rerun a recorded stage and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct NbiArgs {
    #[arg(long)]
    nbi: Option<PathBuf>,
    /// Built-in inventory profile name.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[command(flatten)]
    nbi: NbiArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Two-class checkpoint used to flag complete and partial views.
    #[arg(long)]
    completion_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Preset name; falls back to the config's dataset entry.
    preset: Option<String>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// JSON array of extra dataset specs.
    #[arg(long)]
    presets: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Checkpoint whose layers seed the new model; only the head is reset.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Hold out this fraction of the training side for validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    features_train: Option<PathBuf>,
    #[arg(long)]
    features_val: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Levels {
    EveryBoundary,
    DesignLoad,
}

#[derive(Args, Debug)]
struct BinarizeArgs {
    #[arg(long)]
    evaluation: Option<PathBuf>,
    #[arg(long, value_enum)]
    levels: Option<Levels>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Comma-separated per-class image counts; overrides --classes and --per-class.
    #[arg(long, value_delimiter = ',')]
    class_counts: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    partial_fraction: Option<f64>,
    /// Write manifest and inventory only, no pixels.
    #[arg(long)]
    labels_only: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    evaluation: Option<PathBuf>,
    #[arg(long)]
    binarized: Option<PathBuf>,
    /// Also render SVG charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// A `run-<stage>.json` written by an earlier command.
    manifest: PathBuf,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_nbi(cfg: &mut PipelineConfig, a: NbiArgs) {
    set_opt(&mut cfg.paths.nbi, a.nbi);
    if let Some(p) = a.profile {
        cfg.nbi_profile = ProfileChoice::Builtin(p);
    }
}

fn apply_split(cfg: &mut PipelineConfig, a: SplitArgs) {
    set_opt(&mut cfg.paths.dataset, a.dataset);
    set_opt(&mut cfg.paths.split, a.split);
    set_opt(&mut cfg.paths.image_root, a.image_root);
}

/// Folds subcommand flags into the configuration and picks the stage.
fn resolve(cfg: &mut PipelineConfig, command: Command) -> Stage {
    match command {
        Command::NbiParse(a) => {
            apply_nbi(cfg, a);
            Stage::NbiParse
        }
        Command::CorpusMatch(a) => {
            apply_nbi(cfg, a.nbi);
            set_opt(&mut cfg.paths.manifest, a.manifest);
            set_opt(&mut cfg.paths.image_root, a.image_root);
            set_opt(&mut cfg.paths.completion_model, a.completion_model);
            Stage::CorpusMatch
        }
        Command::DatasetBuild(a) => {
            set_opt(&mut cfg.paths.labeled, a.labeled);
            set_opt(&mut cfg.paths.presets, a.presets);
            if let Some(p) = &a.preset {
                cfg.dataset = Some(DatasetChoice::Preset(p.clone()));
            }
            Stage::DatasetBuild { preset: a.preset }
        }
        Command::Train(a) => {
            apply_split(cfg, a.split);
            let t = &mut cfg.train;
            set(&mut t.max_epochs, a.epochs);
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.momentum, a.momentum);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.patience, a.patience);
            set(&mut t.init_seed, a.init_seed);
            set(&mut t.shuffle_seed, a.shuffle_seed);
            set(&mut cfg.model.image_size, a.image_size);
            set_opt(&mut cfg.model.init_from, a.init_from);
            set_opt(&mut cfg.model.val_fraction, a.val_fraction);
            set_opt(&mut cfg.paths.features_train, a.features_train);
            set_opt(&mut cfg.paths.features_val, a.features_val);
            Stage::Train
        }
        Command::Evaluate(a) => {
            apply_split(cfg, a.split);
            set_opt(&mut cfg.paths.model, a.model);
            Stage::Evaluate
        }
        Command::Binarize(a) => {
            set_opt(&mut cfg.paths.evaluation, a.evaluation);
            match a.levels {
                Some(Levels::EveryBoundary) => cfg.report.levels = LevelChoice::EveryBoundary,
                Some(Levels::DesignLoad) => cfg.report.levels = LevelChoice::DesignLoad,
                None => {}
            }
            Stage::Binarize
        }
        Command::SynthGen(a) => {
            let s = &mut cfg.synth;
            set(&mut s.classes, a.classes);
            set(&mut s.images_per_class, a.per_class);
            set_opt(&mut s.class_counts, a.class_counts);
            set(&mut s.seed, a.seed);
            set(&mut s.image_size, a.image_size);
            set(&mut s.noise, a.noise);
            set(&mut s.partial_fraction, a.partial_fraction);
            s.labels_only |= a.labels_only;
            Stage::SynthGen
        }
        Command::Report(a) => {
            set_opt(&mut cfg.paths.evaluation, a.evaluation);
            set_opt(&mut cfg.paths.binarized, a.binarized);
            cfg.report.svg |= a.svg;
            Stage::Report
        }
        Command::Replay(_) => unreachable!("replay bypasses configuration"),
    }
}

fn exit_for(e: &Error) -> u8 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_INVARIANT
    }
}

fn print_outputs(m: &RunManifest) {
    for o in &m.outputs {
        println!("{}  {}", o.sha256, o.path);
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_for(&e), e.to_string());
    if let Command::Replay(a) = cli.command {
        let outcome = replay(&a.manifest, cli.output_dir.as_deref()).map_err(fail)?;
        print_outputs(&outcome.manifest);
        if !outcome.mismatched.is_empty() {
            return Err((
                EXIT_INVARIANT,
                format!("replay differs in {}", outcome.mismatched.join(", ")),
            ));
        }
        log::info!(
            "replay reproduced {} outputs",
            outcome.manifest.outputs.len()
        );
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(fail)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.paths.output_dir, cli.output_dir);
    let stage = resolve(&mut cfg, cli.command);
    let manifest = run_stage(&stage, &cfg).map_err(fail)?;
    print_outputs(&manifest);
    log::info!(
        "{} wrote {} artifacts to {}",
        stage.slug(),
        manifest.outputs.len(),
        cfg.paths.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

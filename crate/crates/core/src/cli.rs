//! The `gen | train | eval | sweep` driver.
//!
//! Everything lands under the output root (`--out`, or `MULTIDECODE_OUT`):
//!
//! ```text
//! <out>/data/<task>-<scale>-<data hash>/   generated datasets
//! <out>/runs/<run>/run_config.json          resolved configuration
//! <out>/runs/<run>/checkpoint.json          parameters, optimizer and schedule state
//! <out>/runs/<run>/loss.csv                 epoch,lr,train_loss,val_loss
//! <out>/runs/<run>/metrics.csv              metric,value,n_items,config_hash
//! <out>/sweeps/<name>.csv                   one row per run and metric
//! ```

use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderMode;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::metrics::Score;
use crate::relcap::{self, LabelVariant, RelcapConfig, RelcapModel, Scene};
use crate::report::{self, config_hash, MetricRow, SweepRow};
use crate::synth::{self, Normalizer, SplitSizes, SynthConfig, SynthDataset, SynthModel};
use crate::training::TrainState;

pub const OUT_ENV: &str = "MULTIDECODE_OUT";
const CHECKPOINT_FORMAT: &str = "multidecode-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "multidecode",
    version,
    about = "Consistent multiple sequence decoding experiments"
)]
pub struct Cli {
    /// Output root for datasets, runs and sweeps.
    #[arg(long, global = true, env = OUT_ENV, default_value = "multidecode-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded dataset.
    Gen(GenArgs),
    /// Train one model, resuming from its checkpoint if present.
    Train(TrainArgs),
    /// Evaluate a trained run on the test split.
    Eval(EvalArgs),
    /// Train and evaluate a grid of modes, fusion variants and K.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Synth,
    Relcap,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Synth => "synth",
            Task::Relcap => "relcap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Seconds-long smoke runs.
    Tiny,
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Tiny => "tiny",
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

/// Settings shared by every subcommand that resolves a configuration.
#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relcap only: probability of relabeling a mention with a random synonym.
    #[arg(long)]
    pub synonym_rate: Option<f64>,
    /// Dataset directory; defaults to one derived from the data settings.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_mode, default_value = "consistent")]
    pub mode: DecoderMode,
    #[arg(long, value_parser = parse_fusion, default_value = "full")]
    pub fusion: FusionMode,
    /// Fusion iterations per step; the preset decides when omitted.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "label-set", value_parser = parse_label_set, default_value = "original")]
    pub label_set: LabelVariant,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run directory name under `<out>/runs`.
    #[arg(long)]
    pub run: Option<String>,
    /// Stop after this many completed epochs; a later `train` resumes.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    /// Run name under `<out>/runs`, or a path to a run directory.
    #[arg(long)]
    pub run: String,
    /// Expected task; a checkpoint of the other task is rejected.
    #[arg(long, value_enum)]
    pub task: Option<Task>,
}

#[derive(Args, Clone, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_mode, num_args = 1.., default_values = ["consistent"])]
    pub mode: Vec<DecoderMode>,
    #[arg(long, value_parser = parse_fusion, num_args = 1.., default_values = ["full"])]
    pub fusion: Vec<FusionMode>,
    #[arg(long = "K", num_args = 1..)]
    pub k: Vec<usize>,
    #[arg(long = "label-set", value_parser = parse_label_set, default_value = "original")]
    pub label_set: LabelVariant,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value = "sweep")]
    pub name: String,
}

fn parse_mode(s: &str) -> std::result::Result<DecoderMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fusion(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_label_set(s: &str) -> std::result::Result<LabelVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Task hyperparameters after presets and flags are applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskConfig {
    Synth(SynthConfig),
    Relcap(RelcapConfig),
}

impl TaskConfig {
    pub fn task(&self) -> Task {
        match self {
            TaskConfig::Synth(_) => Task::Synth,
            TaskConfig::Relcap(_) => Task::Relcap,
        }
    }

    pub fn preset(task: Task, scale: Scale) -> Result<Self> {
        Ok(match (task, scale) {
            (Task::Synth, Scale::Tiny) => TaskConfig::Synth(tiny_synth()),
            (Task::Synth, Scale::Desk) => TaskConfig::Synth(SynthConfig::desk()),
            (Task::Synth, Scale::Paper) => TaskConfig::Synth(SynthConfig::paper()),
            (Task::Relcap, Scale::Tiny) => TaskConfig::Relcap(tiny_relcap()),
            (Task::Relcap, Scale::Desk) => TaskConfig::Relcap(RelcapConfig::desk()),
            (Task::Relcap, Scale::Paper) => {
                return Err(Error::Config("the captioning task has no paper-scale preset".into()))
            }
        })
    }

    fn seed(&self) -> u64 {
        match self {
            TaskConfig::Synth(c) => c.seed,
            TaskConfig::Relcap(c) => c.seed,
        }
    }

    fn epochs(&self) -> usize {
        match self {
            TaskConfig::Synth(c) => c.epochs,
            TaskConfig::Relcap(c) => c.epochs,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Synth(c) => c.validate(),
            TaskConfig::Relcap(c) => c.validate(),
        }
    }

    /// The part of the configuration that determines the generated data.
    fn data_identity(&self) -> serde_json::Value {
        match self {
            TaskConfig::Synth(c) => serde_json::json!({ "sizes": c.sizes, "seed": c.seed }),
            TaskConfig::Relcap(c) => serde_json::json!({
                "scene": c.scene,
                "train_scenes": c.train_scenes,
                "test_scenes": c.test_scenes,
                "seed": c.seed,
            }),
        }
    }
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        sizes: SplitSizes {
            train: 200,
            val: 50,
            test: 50,
        },
        hidden: 16,
        embed: 8,
        epochs: 2,
        ..SynthConfig::desk()
    }
}

pub fn tiny_relcap() -> RelcapConfig {
    RelcapConfig {
        train_scenes: 8,
        test_scenes: 4,
        embed: 8,
        hidden: 16,
        epochs: 2,
        runs: 2,
        ..RelcapConfig::desk()
    }
}

fn resolve_data(args: &DataArgs) -> Result<TaskConfig> {
    let mut config = TaskConfig::preset(args.task, args.scale)?;
    match &mut config {
        TaskConfig::Synth(c) => {
            c.seed = args.seed;
            if args.synonym_rate.is_some() {
                return Err(Error::Config("--synonym-rate applies to the relcap task only".into()));
            }
        }
        TaskConfig::Relcap(c) => {
            c.seed = args.seed;
            if let Some(rate) = args.synonym_rate {
                c.scene.synonym_rate = rate;
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Applies model flags; `k` falls back to the preset's iteration count.
fn resolve_model(mut config: TaskConfig, model: &ModelArgs) -> Result<(TaskConfig, DecoderMode)> {
    let fusion = match &mut config {
        TaskConfig::Synth(c) => {
            if model.label_set != LabelVariant::Original {
                return Err(Error::Config("--label-set applies to the relcap task only".into()));
            }
            if let Some(e) = model.epochs {
                c.epochs = e;
            }
            if let Some(lr) = model.lr {
                c.lr = lr;
            }
            &mut c.fusion
        }
        TaskConfig::Relcap(c) => {
            c.label_set = model.label_set;
            if let Some(e) = model.epochs {
                c.epochs = e;
            }
            if let Some(lr) = model.lr {
                c.lr = lr;
            }
            &mut c.fusion
        }
    };
    fusion.mode = model.fusion;
    if let Some(k) = model.k {
        fusion.iterations = k;
    }
    if fusion.mode != FusionMode::Full {
        if model.k.is_some_and(|k| k != 1) {
            return Err(Error::Config(format!(
                "--fusion {} runs a single round; drop --K",
                fusion.mode
            )));
        }
        fusion.iterations = 1;
    }
    if let Some(lr) = model.lr {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
    }
    config.validate()?;
    Ok((config, model.mode))
}

fn data_dir(out: &Path, args: &DataArgs, config: &TaskConfig) -> Result<PathBuf> {
    if let Some(d) = &args.data {
        return Ok(d.clone());
    }
    let hash = config_hash(&config.data_identity())?;
    Ok(out
        .join("data")
        .join(format!("{}-{}-{}", args.task, args.scale, &hash[..8])))
}

/// Everything a run needs to be reproduced; written as `run_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub task: Task,
    pub mode: DecoderMode,
    pub fusion: FusionMode,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub scale: Scale,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub config: TaskConfig,
}

/// The hashed identity of a run: task settings and decoder mode.
fn run_hash(config: &TaskConfig, mode: DecoderMode) -> Result<String> {
    config_hash(&(config, mode))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskModel {
    Synth(SynthModel),
    Relcap(RelcapModel),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub state: TrainState,
    pub model: TaskModel,
    pub final_metrics: Option<Vec<MetricRow>>,
}

impl Checkpoint {
    pub fn task(&self) -> Task {
        match self.model {
            TaskModel::Synth(_) => Task::Synth,
            TaskModel::Relcap(_) => Task::Relcap,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&cli.out, &args).map(|_| ()),
        Command::Train(args) => cmd_train(&cli.out, &args).map(|_| ()),
        Command::Eval(args) => cmd_eval(&cli.out, &args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(&cli.out, &args).map(|_| ()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes through a sibling temporary file so an interrupted write never
/// leaves a truncated artifact behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Generates the dataset for `args` and returns its directory.
pub fn cmd_gen(out: &Path, args: &GenArgs) -> Result<PathBuf> {
    let config = resolve_data(&args.data)?;
    let dir = data_dir(out, &args.data, &config)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    match &config {
        TaskConfig::Synth(c) => {
            let data = synth::build_dataset(c.sizes, c.seed);
            data.save(&dir)?;
            print!("{}", synth_summary(&data));
        }
        TaskConfig::Relcap(c) => {
            let (train, test) = relcap::build_splits(c)?;
            relcap::write_scenes(&dir.join("train.jsonl"), &train)?;
            relcap::write_scenes(&dir.join("test.jsonl"), &test)?;
            for variant in [LabelVariant::Original, LabelVariant::Consistent] {
                let path = dir.join(format!("labels_{variant}.txt"));
                write_atomic(&path, label_lines(&train, &test, variant).as_bytes())?;
            }
            print!("{}", relcap_summary(&train, &test));
        }
    }
    write_json(&dir.join("data_config.json"), &config.data_identity())?;
    println!("dataset: {}", dir.display());
    Ok(dir)
}

fn synth_summary(data: &SynthDataset) -> String {
    let sizes = data.sizes();
    let mut s = format!("pairs: train {} val {} test {}\n", sizes.train, sizes.val, sizes.test);
    let n = data.train.len().max(1) as f64;
    let mean = |f: &dyn Fn(&synth::PairedSequences) -> f64| data.train.iter().map(f).sum::<f64>() / n;
    s.push_str(&format!(
        "train means: a {:.3} b {:.3} c {:.3} d {:.3} y1(16) {:.2} y2(16) {:.2}\n",
        mean(&|p| p.a),
        mean(&|p| p.b),
        mean(&|p| p.c),
        mean(&|p| p.d),
        mean(&|p| p.y1[synth::SEQ_LEN - 1]),
        mean(&|p| p.y2[synth::SEQ_LEN - 1]),
    ));
    s
}

/// One line per caption: `split scene pair tokens...`.
fn label_lines(train: &[Scene], test: &[Scene], variant: LabelVariant) -> String {
    let mut s = String::new();
    for (split, scenes) in [("train", train), ("test", test)] {
        for scene in scenes {
            for (i, c) in scene.labels(variant).captions.iter().enumerate() {
                s.push_str(&format!("{split}\t{}\t{i}\t{}\n", scene.id, c.tokens.join(" ")));
            }
        }
    }
    s
}

fn relcap_summary(train: &[Scene], test: &[Scene]) -> String {
    let mut mentions = 0usize;
    let mut off_name = 0usize;
    let mut boxes = 0usize;
    let mut mixed = 0usize;
    for scene in train.iter().chain(test) {
        for (r, region) in scene.regions.iter().enumerate() {
            let labels: Vec<&String> = scene
                .mentions(r)
                .iter()
                .map(|&(i, tag)| {
                    let c = &scene.captions[i];
                    &c.tokens[if tag == relcap::PosTag::Subj { 1 } else { 4 }]
                })
                .collect();
            mentions += labels.len();
            off_name += labels.iter().filter(|l| ***l != region.name).count();
            if labels.len() > 1 {
                boxes += 1;
                if labels.iter().any(|l| l != &labels[0]) {
                    mixed += 1;
                }
            }
        }
    }
    format!(
        "scenes: train {} test {}; pairs per scene {}\n\
         noun mentions {mentions}, {:.1}% differ from the region's usual name\n\
         boxes with several mentions {boxes}, {:.1}% named inconsistently\n",
        train.len(),
        test.len(),
        train.first().map_or(0, |s| s.pairs.len()),
        100.0 * off_name as f64 / mentions.max(1) as f64,
        100.0 * mixed as f64 / boxes.max(1) as f64,
    )
}

fn missing_dataset(dir: &Path) -> Error {
    Error::io(
        dir,
        io::Error::new(
            io::ErrorKind::NotFound,
            "dataset not found; run `gen` with the same settings first",
        ),
    )
}

enum LoadedData {
    Synth(SynthDataset),
    Relcap { train: Vec<Scene>, test: Vec<Scene> },
}

fn load_data(task: Task, dir: &Path) -> Result<LoadedData> {
    if !dir.is_dir() {
        return Err(missing_dataset(dir));
    }
    Ok(match task {
        Task::Synth => LoadedData::Synth(SynthDataset::load(dir)?),
        Task::Relcap => LoadedData::Relcap {
            train: relcap::read_scenes(&dir.join("train.jsonl"))?,
            test: relcap::read_scenes(&dir.join("test.jsonl"))?,
        },
    })
}

fn default_run_name(task: Task, mode: DecoderMode, config: &TaskConfig, hash: &str) -> String {
    let fusion = match config {
        TaskConfig::Synth(c) => c.fusion,
        TaskConfig::Relcap(c) => c.fusion,
    };
    format!("{task}-{mode}-{}-K{}-{}", fusion.mode, fusion.iterations, &hash[..8])
}

fn run_dir(out: &Path, run: &str) -> PathBuf {
    let p = Path::new(run);
    if p.is_absolute() || run.contains(std::path::MAIN_SEPARATOR) {
        p.to_path_buf()
    } else {
        out.join("runs").join(run)
    }
}

fn write_loss_trace(path: &Path, state: &TrainState) -> Result<()> {
    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
    for r in &state.history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, val));
    }
    write_atomic(path, s.as_bytes())
}

/// Trains (or resumes) one run and returns its directory.
pub fn cmd_train(out: &Path, args: &TrainArgs) -> Result<PathBuf> {
    let config = resolve_data(&args.data)?;
    let ddir = data_dir(out, &args.data, &config)?;
    let (config, mode) = resolve_model(config, &args.model)?;
    let hash = run_hash(&config, mode)?;
    let name = args
        .run
        .clone()
        .unwrap_or_else(|| default_run_name(args.data.task, mode, &config, &hash));
    let dir = run_dir(out, &name);
    let fusion = match &config {
        TaskConfig::Synth(c) => c.fusion,
        TaskConfig::Relcap(c) => c.fusion,
    };
    let run_config = RunConfig {
        command: "train".into(),
        task: args.data.task,
        mode,
        fusion: fusion.mode,
        k: fusion.iterations,
        seed: config.seed(),
        scale: args.data.scale,
        data_dir: ddir.clone(),
        run_dir: dir.clone(),
        config_hash: hash.clone(),
        config: config.clone(),
    };
    let data = load_data(args.data.task, &ddir)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("run_config.json"), &run_config)?;

    let ckpt_path = dir.join("checkpoint.json");
    let mut ckpt = if ckpt_path.exists() {
        let c: Checkpoint = read_json(&ckpt_path)?;
        if c.config_hash != hash {
            return Err(Error::Config(format!(
                "{} holds a run with config {}, not {hash}; pick another --run",
                ckpt_path.display(),
                c.config_hash
            )));
        }
        eprintln!("resuming {name} from epoch {}", c.state.epoch);
        c
    } else {
        let (model, state) = match (&config, &data) {
            (TaskConfig::Synth(c), LoadedData::Synth(d)) => (
                TaskModel::Synth(SynthModel::new(c, mode, Normalizer::fit(&d.train))?),
                synth::initial_state(c),
            ),
            (TaskConfig::Relcap(c), LoadedData::Relcap { .. }) => {
                (TaskModel::Relcap(RelcapModel::new(c, mode)?), relcap::initial_state(c))
            }
            _ => unreachable!("data loaded for the configured task"),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: hash.clone(),
            seed: config.seed(),
            state,
            model,
            final_metrics: None,
        }
    };

    let target = args.stop_after.map_or(config.epochs(), |s| s.min(config.epochs()));
    let loss_path = dir.join("loss.csv");
    let save = |model: TaskModel, state: &TrainState| -> Result<()> {
        eprintln!(
            "epoch {} lr {:.3e} loss {:.6}",
            state.epoch,
            state.lr,
            state.last_loss().unwrap_or(f64::NAN)
        );
        write_loss_trace(&loss_path, state)?;
        let c = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: hash.clone(),
            seed: config.seed(),
            state: state.clone(),
            model,
            final_metrics: None,
        };
        write_json(&ckpt_path, &c)
    };
    let mut state = ckpt.state.clone();
    ckpt.model = match (ckpt.model, &data) {
        (TaskModel::Synth(mut m), LoadedData::Synth(d)) => {
            synth::train_until(&mut m, d, &mut state, target, |m, s| {
                save(TaskModel::Synth(m.clone()), s)
            })?;
            TaskModel::Synth(m)
        }
        (TaskModel::Relcap(mut m), LoadedData::Relcap { train, .. }) => {
            relcap::train_until(&mut m, train, &mut state, target, |m, s| {
                save(TaskModel::Relcap(m.clone()), s)
            })?;
            TaskModel::Relcap(m)
        }
        _ => unreachable!("checkpoint hash pins the task"),
    };
    ckpt.state = state;
    if ckpt.state.epoch >= config.epochs() {
        let rows = evaluate_model(&ckpt.model, &data, &hash)?;
        report::write_metrics(&dir.join("metrics.csv"), &rows)?;
        print!("{}", report::render_metrics(&rows));
        ckpt.final_metrics = Some(rows);
    } else {
        eprintln!("stopped after epoch {} of {}", ckpt.state.epoch, config.epochs());
    }
    write_loss_trace(&loss_path, &ckpt.state)?;
    write_json(&ckpt_path, &ckpt)?;
    println!("run: {}", dir.display());
    Ok(dir)
}

fn evaluate_model(model: &TaskModel, data: &LoadedData, hash: &str) -> Result<Vec<MetricRow>> {
    match (model, data) {
        (TaskModel::Synth(m), LoadedData::Synth(d)) => {
            let r = synth::eval_mse(m, &d.test)?;
            let n = d.test.len() * synth::FORECAST_LEN;
            Ok(vec![
                MetricRow::new("mse_y1", r.mse_y1, n, hash),
                MetricRow::new("mse_y2", r.mse_y2, n, hash),
            ])
        }
        (TaskModel::Relcap(m), LoadedData::Relcap { test, .. }) => {
            let r = relcap::evaluate(m, test, m.config.runs, m.config.seed)?;
            let captions: usize = test.iter().map(|s| s.pairs.len()).sum();
            Ok(vec![
                MetricRow::from_score("consistency", r.consistency, hash),
                MetricRow::from_score("bbox_diversity", r.bbox_diversity, hash),
                MetricRow::from_score("image_recall", r.image_recall, hash),
                MetricRow::from_score(
                    "token_accuracy",
                    Score {
                        value: r.token_accuracy,
                        n_items: captions,
                    },
                    hash,
                ),
            ])
        }
        (m, _) => Err(Error::Contract(format!(
            "checkpoint is a {} model but the data belongs to the other task",
            match m {
                TaskModel::Synth(_) => Task::Synth,
                TaskModel::Relcap(_) => Task::Relcap,
            }
        ))),
    }
}

/// Evaluates a run's checkpoint on its test split and writes `metrics.csv`.
pub fn cmd_eval(out: &Path, args: &EvalArgs) -> Result<Vec<MetricRow>> {
    let dir = run_dir(out, &args.run);
    let run_config: RunConfig = read_json(&dir.join("run_config.json"))?;
    let ckpt: Checkpoint = read_json(&dir.join("checkpoint.json"))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            dir.join("checkpoint.json"),
            format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
        ));
    }
    if let Some(expected) = args.task {
        if expected != ckpt.task() {
            return Err(Error::Contract(format!(
                "--task {expected} given for a {} checkpoint",
                ckpt.task()
            )));
        }
    }
    if run_config.task != ckpt.task() || run_config.config_hash != ckpt.config_hash {
        return Err(Error::Contract(format!(
            "run config ({} {}) does not match checkpoint ({} {})",
            run_config.task,
            run_config.config_hash,
            ckpt.task(),
            ckpt.config_hash
        )));
    }
    let data = load_data(run_config.task, &run_config.data_dir)?;
    let rows = evaluate_model(&ckpt.model, &data, &ckpt.config_hash)?;
    report::write_metrics(&dir.join("metrics.csv"), &rows)?;
    print!("{}", report::render_metrics(&rows));
    Ok(rows)
}

/// Runs every (mode, fusion, K) combination as separate `train` and `eval`
/// processes and collects their metrics into `<out>/sweeps/<name>.csv`.
pub fn cmd_sweep(out: &Path, args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let base = resolve_data(&args.data)?;
    let ddir = data_dir(out, &args.data, &base)?;
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let common: Vec<String> = vec!["--out".into(), out.display().to_string()];
    let mut data_flags: Vec<String> = vec![
        "--task".into(),
        args.data.task.to_string(),
        "--scale".into(),
        args.data.scale.to_string(),
        "--seed".into(),
        args.data.seed.to_string(),
        "--data".into(),
        ddir.display().to_string(),
    ];
    if let Some(rate) = args.data.synonym_rate {
        data_flags.extend(["--synonym-rate".into(), rate.to_string()]);
    }
    if !ddir.is_dir() {
        spawn(
            &exe,
            "gen",
            &[common.clone(), vec!["gen".into()], data_flags.clone()].concat(),
        )?;
    }
    let ks: Vec<Option<usize>> = if args.k.is_empty() {
        vec![None]
    } else {
        args.k.iter().copied().map(Some).collect()
    };
    let mut rows = Vec::new();
    for &mode in &args.mode {
        for &fusion in &args.fusion {
            // the ablations run one round whatever --K says
            let ks = if fusion == FusionMode::Full {
                ks.clone()
            } else {
                vec![None]
            };
            for &k in &ks {
                let model = ModelArgs {
                    mode,
                    fusion,
                    k,
                    label_set: args.label_set,
                    epochs: args.epochs,
                    lr: args.lr,
                };
                let (config, _) = resolve_model(base.clone(), &model)?;
                let iterations = match &config {
                    TaskConfig::Synth(c) => c.fusion.iterations,
                    TaskConfig::Relcap(c) => c.fusion.iterations,
                };
                let run = format!("{}-{mode}-{fusion}-K{iterations}", args.name);
                let mut train = vec![
                    "train".into(),
                    "--run".into(),
                    run.clone(),
                    "--mode".into(),
                    mode.to_string(),
                    "--fusion".into(),
                    fusion.to_string(),
                    "--K".into(),
                    iterations.to_string(),
                    "--label-set".into(),
                    args.label_set.to_string(),
                ];
                if let Some(e) = args.epochs {
                    train.extend(["--epochs".into(), e.to_string()]);
                }
                if let Some(lr) = args.lr {
                    train.extend(["--lr".into(), lr.to_string()]);
                }
                spawn(&exe, &run, &[common.clone(), train, data_flags.clone()].concat())?;
                let metrics = report::read_metrics(&run_dir(out, &run).join("metrics.csv"))?;
                for m in metrics {
                    rows.push(SweepRow {
                        run: run.clone(),
                        task: args.data.task.to_string(),
                        mode: mode.to_string(),
                        fusion: fusion.to_string(),
                        k: iterations,
                        seed: args.data.seed,
                        metric: m.metric,
                        value: m.value,
                        n_items: m.n_items,
                        config_hash: m.config_hash,
                    });
                }
            }
        }
    }
    let path = out.join("sweeps").join(format!("{}.csv", args.name));
    report::write_sweep(&path, &rows)?;
    println!("{:<40} {:<16} {:>12}", "run", "metric", "value");
    for r in &rows {
        println!("{:<40} {:<16} {:>12.4}", r.run, r.metric, r.value);
    }
    println!("sweep: {}", path.display());
    Ok(rows)
}

fn spawn(exe: &Path, label: &str, args: &[String]) -> Result<()> {
    eprintln!("[{label}] {} {}", exe.display(), args.join(" "));
    let status = Process::new(exe).args(args).status().map_err(|e| Error::io(exe, e))?;
    if status.success() {
        Ok(())
    } else {
        Err(Error::SubRun {
            run: label.to_string(),
            code: status.code().unwrap_or(crate::error::exit_code::OTHER),
        })
    }
}

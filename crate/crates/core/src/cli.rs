//! Command-line entry point: `behave <command> [flags]`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
//! Every command validates its flags before touching the filesystem, writes
//! outputs atomically and records a manifest next to them.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::data::{make_dataset, DatasetConfig, NormStats, PoseSequence};
use crate::error::Error;
use crate::eval::{
    action_upper_bound, nearest_neighbors, realism_generations, reality_classifier, run_diversity_eval, run_transfer_eval,
    DiversityEvalConfig, MetricReport, NnMetric, RealismEval, RealityConfig, SeqClassifierConfig, TransferEvalConfig, TransferModel,
};
use crate::flow::{boundary_displacements, recursive_sample, train_flow, CodeSource, FlowModel, FlowTrainConfig};
use crate::fsutil::{read_json, sha256_hex, write_atomic, write_json_atomic};
use crate::model::{BehaviorModel, Objective};
use crate::render::{render_to_dir, RenderConfig, ViewPlane};
use crate::seqio::{load_sequences, save_sequences};
use crate::synth::Family;
use crate::train::{checkpoint_stats, load_model, resume, train_vae, TrainConfig, TrainOutputs};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "BEHAVE_DATA_DIR";

const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";
const STATS_FILE: &str = "stats.json";
const DATASET_FILE: &str = "dataset.json";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "behave", version, about = "Behavior/posture disentanglement for skeletal motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic motion dataset (train/test splits, stats).
    GenData(GenData),
    /// Train a behavior model.
    Train(Train),
    /// Fit the normalizing-flow prior on a trained model's behavior codes.
    TrainFlow(TrainFlowCmd),
    /// Transfer the behavior of source sequences onto a target posture.
    Transfer(Transfer),
    /// Draw behaviors from a start posture.
    Sample(Sample),
    /// Chain sampled behaviors, each starting where the previous ended.
    SampleLoop(SampleLoop),
    /// Decode interpolations between the behaviors of two sequences.
    Interpolate(Interpolate),
    /// Transfer metrics (TDE, RE, d_β, action accuracy) for one or more models.
    EvalTransfer(EvalTransfer),
    /// Sampling diversity (ASD/FSD) with the raw prior and the flow.
    EvalDiversity(EvalDiversity),
    /// Real-vs-generated classification accuracy per synthesis type.
    EvalRealism(EvalRealism),
    /// Nearest training sequences of a query, in latent or posture space.
    Nn(Nn),
    /// Render a sequence as stick-figure SVGs.
    Render(Render),
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset directory written by `gen-data`.
    #[arg(long, env = DATA_DIR_ENV)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenData {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `all` or a comma-separated list of families.
    #[arg(long)]
    families: Option<String>,
    /// Families placed entirely in the test split.
    #[arg(long)]
    held_out: Option<String>,
    /// Sequences per family.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Train fraction per family.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Reduced network and larger steps; trains in about a minute.
    Desk,
    /// Full-size network and the original hyperparameters.
    Paper,
}

#[derive(Args, Debug)]
struct Train {
    #[command(flatten)]
    data: DataArg,
    /// full (default), disable-aux, vanilla-cvae (cvae) or cae.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base hyperparameters when no --config is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    /// Training config JSON; --objective/--epochs/--seed override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from this checkpoint (same config up to the epoch count).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory (last.ckpt, log.jsonl, manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Also keep one checkpoint per epoch.
    #[arg(long)]
    keep_every_epoch: bool,
}

#[derive(Args, Debug)]
struct TrainFlowCmd {
    #[command(flatten)]
    data: DataArg,
    /// Behavior-model checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flow training config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Flow checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Transfer {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence file; every sequence is transferred.
    #[arg(long)]
    source: PathBuf,
    /// Sequence file whose first frame (of sequence --target-index) is the target posture.
    #[arg(long)]
    target_frame: PathBuf,
    #[arg(long, default_value_t = 0)]
    target_index: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Sample {
    #[arg(long)]
    ckpt: PathBuf,
    /// Flow checkpoint; without it codes come from the raw prior.
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Sequence file whose first frame (of sequence --start-index) starts every sample.
    #[arg(long)]
    start: PathBuf,
    #[arg(long, default_value_t = 0)]
    start_index: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleLoop {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    start: PathBuf,
    #[arg(long, default_value_t = 0)]
    start_index: usize,
    #[arg(long, default_value_t = 6)]
    segments: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Interpolate {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence file holding the first behavior (its first sequence).
    #[arg(long)]
    from: PathBuf,
    /// Sequence file holding the second behavior (its first sequence).
    #[arg(long)]
    to: PathBuf,
    /// Comma-separated weights in [0, 1].
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1")]
    lambdas: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalTransfer {
    #[command(flatten)]
    data: DataArg,
    /// Comma-separated `name` or `name=checkpoint`; bare names resolve in --ckpt-dir.
    #[arg(long)]
    models: Option<String>,
    /// Directory holding `<name>/last.ckpt` or `<name>.ckpt`.
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    /// A single model to evaluate (alternative to --models).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Comma-separated evaluation steps T.
    #[arg(long)]
    steps: Option<String>,
    /// Skip the RE regressors.
    #[arg(long)]
    no_re: bool,
    /// Skip the frozen-encoder action probe.
    #[arg(long)]
    no_action: bool,
    /// Also train the end-to-end action classifier (upper bound).
    #[arg(long)]
    upper_bound: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Transfer evaluation config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (report.json, report.txt, manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalDiversity {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Comma-separated sample-set sizes.
    #[arg(long)]
    sizes: Option<String>,
    /// Number of start postures (test-split first frames).
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalRealism {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Real sequences used (test split first, then train), capped by availability.
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Classifier config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NnMode {
    Latent,
    Posture,
}

#[derive(Args, Debug)]
struct Nn {
    #[command(flatten)]
    data: DataArg,
    /// Behavior model (required for the latent metric).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Query sequence file (sequence --query-index is used).
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 0)]
    query_index: usize,
    /// Corpus sequence file; defaults to the dataset's train split.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "latent")]
    metric: NnMode,
    /// Number of neighbors reported.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// JSON ranking output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Render {
    /// Sequence file.
    #[arg(long)]
    input: PathBuf,
    /// Sequence within the file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    /// front, side or top.
    #[arg(long, default_value = "front")]
    view: String,
    #[arg(long)]
    out: PathBuf,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Attaches what the command was doing to a library error.
trait Context<T> {
    fn ctx(self, what: impl FnOnce() -> String) -> CmdResult<T>;
}

impl<T> Context<T> for crate::Result<T> {
    fn ctx(self, what: impl FnOnce() -> String) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(format!("{}: {e}", what())))
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv_text: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &argv_text) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn dispatch(cmd: Command, argv: &[String]) -> CmdResult<()> {
    match cmd {
        Command::GenData(c) => gen_data(c, argv),
        Command::Train(c) => train(c, argv),
        Command::TrainFlow(c) => train_flow_cmd(c, argv),
        Command::Transfer(c) => transfer(c, argv),
        Command::Sample(c) => sample(c, argv),
        Command::SampleLoop(c) => sample_loop(c, argv),
        Command::Interpolate(c) => interpolate(c, argv),
        Command::EvalTransfer(c) => eval_transfer(c, argv),
        Command::EvalDiversity(c) => eval_diversity(c, argv),
        Command::EvalRealism(c) => eval_realism(c, argv),
        Command::Nn(c) => nn(c, argv),
        Command::Render(c) => render(c, argv),
    }
}

// ---------------------------------------------------------------- shared plumbing

fn read_config<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> CmdResult<Option<T>> {
    match path {
        None => Ok(None),
        Some(p) => read_json(p).map(Some).ctx(|| format!("reading --config {}", p.display())),
    }
}

fn data_dir(arg: &DataArg) -> CmdResult<PathBuf> {
    arg.data
        .clone()
        .ok_or_else(|| usage(format!("--data is required (or set {DATA_DIR_ENV})")))
}

/// Dataset files in world coordinates plus the train statistics.
struct DataDir {
    train: Vec<PoseSequence>,
    test: Vec<PoseSequence>,
    stats: NormStats,
    files: Vec<PathBuf>,
}

impl DataDir {
    fn load(dir: &Path) -> CmdResult<Self> {
        let files = vec![dir.join(TRAIN_FILE), dir.join(TEST_FILE), dir.join(STATS_FILE)];
        let train = load_sequences(&files[0]).ctx(|| format!("loading {}", files[0].display()))?;
        // an empty test split is not written
        let test = if files[1].exists() {
            load_sequences(&files[1]).ctx(|| format!("loading {}", files[1].display()))?
        } else {
            Vec::new()
        };
        let stats: NormStats = read_json(&files[2]).ctx(|| format!("loading {}", files[2].display()))?;
        let files = files.into_iter().filter(|f| f.exists()).collect();
        Ok(Self { train, test, stats, files })
    }

    fn normalized(&self, seqs: &[PoseSequence]) -> CmdResult<Vec<PoseSequence>> {
        seqs.iter().map(|s| self.stats.normalize(s)).collect::<crate::Result<_>>().ctx(|| "normalizing the dataset".into())
    }
}

fn load_seqs(path: &Path) -> CmdResult<Vec<PoseSequence>> {
    load_sequences(path).ctx(|| format!("loading {}", path.display()))
}

fn pick(path: &Path, index: usize) -> CmdResult<PoseSequence> {
    let mut seqs = load_seqs(path)?;
    if index >= seqs.len() {
        return Err(Failure::Runtime(format!(
            "{} holds {} sequences, index {index} requested",
            path.display(),
            seqs.len()
        )));
    }
    Ok(seqs.swap_remove(index))
}

/// A trained model with the statistics it was trained under.
struct LoadedModel {
    model: BehaviorModel,
    config: TrainConfig,
    stats: NormStats,
}

fn load_behavior(path: &Path) -> CmdResult<LoadedModel> {
    let what = || format!("loading model {}", path.display());
    let c = Checkpoint::load(path).ctx(what)?;
    let (model, config) = load_model(&c).ctx(what)?;
    let stats = checkpoint_stats(&c).ctx(what)?;
    Ok(LoadedModel { model, config, stats })
}

fn load_flow(path: &Option<PathBuf>) -> CmdResult<Option<FlowModel>> {
    match path {
        None => Ok(None),
        Some(p) => FlowModel::load(p).map(Some).ctx(|| format!("loading flow {}", p.display())),
    }
}

fn file_sha256(p: &Path) -> CmdResult<String> {
    let bytes = std::fs::read(p).map_err(|e| Failure::Runtime(format!("reading {}: {e}", p.display())))?;
    Ok(sha256_hex(&bytes))
}

fn file_digests(paths: &[&Path]) -> CmdResult<Value> {
    let mut m = serde_json::Map::new();
    for p in paths {
        m.insert(p.display().to_string(), Value::String(file_sha256(p)?));
    }
    Ok(Value::Object(m))
}

fn manifest(command: &str, argv: &[String], config: &Value, seed: Option<u64>, inputs: Value) -> Value {
    let canonical = serde_json::to_string(config).unwrap_or_default();
    json!({
        "command": command,
        "argv": argv,
        "config": config,
        "config_hash": sha256_hex(canonical.as_bytes()),
        "seed": seed,
        "inputs": inputs,
        "versions": {
            "behave": env!("CARGO_PKG_VERSION"),
            "sequence_format": crate::seqio::FORMAT_VERSION,
            "checkpoint_format": crate::checkpoint::FORMAT_VERSION,
        },
    })
}

/// Manifest path for a single-file output: `<out>.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(path: &Path, m: &Value) -> CmdResult<()> {
    write_json_atomic(path, m).ctx(|| format!("writing {}", path.display()))
}

fn save_seqs(path: &Path, seqs: &[PoseSequence]) -> CmdResult<()> {
    save_sequences(path, seqs).ctx(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> CmdResult<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| usage(format!("{flag}: cannot parse `{t}`"))))
        .collect()
}

fn check_joints(model: &BehaviorModel, seq: &PoseSequence, flag: &str) -> CmdResult<()> {
    let c = &model.config;
    if seq.joints() != c.joints {
        return Err(Failure::Runtime(format!(
            "{flag}: sequence `{}` has {} joints, the model expects {}",
            seq.id,
            seq.joints(),
            c.joints
        )));
    }
    Ok(())
}

fn world(stats: &NormStats, seqs: Vec<PoseSequence>) -> CmdResult<Vec<PoseSequence>> {
    seqs.iter().map(|s| stats.denormalize(s)).collect::<crate::Result<_>>().ctx(|| "mapping outputs to world coordinates".into())
}

fn normalized_frame(stats: &NormStats, frame: &[f64]) -> Vec<f64> {
    stats.normalize_frame(frame)
}

// ---------------------------------------------------------------- commands

fn gen_data(c: GenData, argv: &[String]) -> CmdResult<()> {
    let mut cfg: DatasetConfig = read_config(&c.config)?.unwrap_or_default();
    if let Some(f) = &c.families {
        cfg.families = Family::parse_list(f).map_err(|e| usage(format!("--families: {e}")))?;
    }
    if let Some(h) = &c.held_out {
        cfg.held_out = Family::parse_list(h).map_err(|e| usage(format!("--held-out: {e}")))?;
    }
    if let Some(n) = c.count {
        cfg.count_per_family = n;
    }
    if let Some(n) = c.frames {
        cfg.frames = n;
    }
    if let Some(r) = c.split {
        cfg.split_ratio = r;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let ds = make_dataset(&cfg).ctx(|| "generating the dataset".into())?;
    save_seqs(&c.out.join(TRAIN_FILE), &ds.train)?;
    if !ds.test.is_empty() {
        save_seqs(&c.out.join(TEST_FILE), &ds.test)?;
    }
    write_json_atomic(&c.out.join(STATS_FILE), &ds.stats).ctx(|| "writing stats".into())?;
    write_json_atomic(&c.out.join(DATASET_FILE), &cfg).ctx(|| "writing dataset config".into())?;
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_manifest(&c.out.join(MANIFEST_FILE), &manifest("gen-data", argv, &cfg_value, Some(cfg.seed), json!({})))?;
    println!("wrote {} train / {} test sequences to {}", ds.train.len(), ds.test.len(), c.out.display());
    Ok(())
}

fn train(c: Train, argv: &[String]) -> CmdResult<()> {
    let objective = c
        .objective
        .as_deref()
        .map(Objective::parse)
        .transpose()
        .map_err(|e| usage(format!("--objective: {e}")))?;
    let dir = data_dir(&c.data)?;
    let mut cfg: TrainConfig = match read_config(&c.config)? {
        Some(cfg) => cfg,
        None => match c.preset {
            Preset::Desk => TrainConfig::desk(Objective::Full, 0),
            Preset::Paper => TrainConfig::default(),
        },
    };
    if let Some(o) = objective {
        cfg.objective = o;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| usage(format!("training config: {e}")))?;
    let data = DataDir::load(&dir)?;
    let train_set = data.normalized(&data.train)?;
    let outs = TrainOutputs {
        checkpoint_dir: Some(c.out.clone()),
        keep_every_epoch: c.keep_every_epoch,
        log_path: Some(c.out.join("log.jsonl")),
        stats: Some(data.stats.clone()),
    };
    let outcome = match &c.ckpt {
        Some(p) => resume(p, &train_set, &cfg, &outs).ctx(|| format!("resuming from {}", p.display()))?,
        None => train_vae(&train_set, &cfg, &outs).ctx(|| "training".into())?,
    };
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut inputs: Vec<&Path> = data.files.iter().map(PathBuf::as_path).collect();
    if let Some(p) = &c.ckpt {
        inputs.push(p);
    }
    let mut m = manifest("train", argv, &cfg_value, Some(cfg.seed), file_digests(&inputs)?);
    m["model_digest"] = json!(outcome.state.model.digest());
    write_manifest(&c.out.join(MANIFEST_FILE), &m)?;
    match outcome.log.last() {
        Some(r) => println!(
            "epoch {} done: recon {:.4}, KL {:.3} nats, γ_KL {:.5} → {}",
            outcome.state.epoch,
            r.recon_mse,
            r.kl_nats,
            r.gamma_kl,
            c.out.join("last.ckpt").display()
        ),
        None => println!("nothing to train: {} of {} epochs already done", outcome.state.epoch, cfg.epochs),
    }
    Ok(())
}

fn train_flow_cmd(c: TrainFlowCmd, argv: &[String]) -> CmdResult<()> {
    let dir = data_dir(&c.data)?;
    let mut cfg: FlowTrainConfig = read_config(&c.config)?.unwrap_or_default();
    if let Some(b) = c.blocks {
        cfg.blocks = b;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let m = load_behavior(&c.ckpt)?;
    let data = DataDir::load(&dir)?;
    let train_set = data.normalized(&data.train)?;
    let out = train_flow(&m.model, &train_set, &cfg).ctx(|| "training the flow".into())?;
    let extra = json!({ "config": cfg, "model_digest": m.model.digest(), "epoch_nll": out.epoch_nll });
    out.flow.save(&c.out, extra).ctx(|| format!("writing {}", c.out.display()))?;
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut inputs: Vec<&Path> = data.files.iter().map(PathBuf::as_path).collect();
    inputs.push(&c.ckpt);
    write_manifest(&sidecar(&c.out), &manifest("train-flow", argv, &cfg_value, Some(cfg.seed), file_digests(&inputs)?))?;
    match out.epoch_nll.last() {
        Some(nll) => println!("flow trained: final epoch NLL {nll:.4} → {}", c.out.display()),
        None => println!("identity flow written to {}", c.out.display()),
    }
    Ok(())
}

fn transfer(c: Transfer, argv: &[String]) -> CmdResult<()> {
    let m = load_behavior(&c.ckpt)?;
    let sources = load_seqs(&c.source)?;
    let target = pick(&c.target_frame, c.target_index)?;
    check_joints(&m.model, &target, "--target-frame")?;
    let x_t = normalized_frame(&m.stats, target.first_frame());
    let norm: Vec<PoseSequence> = sources
        .iter()
        .map(|s| {
            check_joints(&m.model, s, "--source")?;
            m.stats.normalize(s).ctx(|| format!("normalizing `{}`", s.id))
        })
        .collect::<CmdResult<_>>()?;
    let refs: Vec<&PoseSequence> = norm.iter().collect();
    let out = m.model.transfer_many(&refs, &vec![x_t; refs.len()]).ctx(|| "transferring".into())?;
    let out: Vec<PoseSequence> = world(&m.stats, out)?
        .into_iter()
        .zip(&sources)
        .map(|(mut s, src)| {
            s.id = format!("{}-on-{}", src.id, target.id);
            s.family = src.family.clone();
            s
        })
        .collect();
    save_seqs(&c.out, &out)?;
    let cfg = json!({ "target_index": c.target_index });
    write_manifest(&sidecar(&c.out), &manifest("transfer", argv, &cfg, Some(m.config.seed), file_digests(&[&c.ckpt, &c.source, &c.target_frame])?))?;
    println!("wrote {} transferred sequence(s) to {}", out.len(), c.out.display());
    Ok(())
}

fn code_source(flow: &Option<FlowModel>) -> CodeSource<'_> {
    match flow {
        Some(f) => CodeSource::Flow(f),
        None => CodeSource::Prior,
    }
}

fn sampling_inputs(ckpt: &Path, flow: &Option<PathBuf>, start: &Path) -> CmdResult<Value> {
    let mut paths: Vec<&Path> = vec![ckpt, start];
    if let Some(f) = flow {
        paths.push(f);
    }
    file_digests(&paths)
}

fn sample(c: Sample, argv: &[String]) -> CmdResult<()> {
    if c.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let seed = c.seed.unwrap_or(0);
    let m = load_behavior(&c.ckpt)?;
    let flow = load_flow(&c.flow)?;
    let start = pick(&c.start, c.start_index)?;
    check_joints(&m.model, &start, "--start")?;
    let x_t = normalized_frame(&m.stats, start.first_frame());
    let seqs = crate::eval::sample_set(&m.model, code_source(&flow), &x_t, c.count, seed).ctx(|| "sampling".into())?;
    let mut seqs = world(&m.stats, seqs)?;
    for (i, s) in seqs.iter_mut().enumerate() {
        s.id = format!("sample-{i:03}");
    }
    save_seqs(&c.out, &seqs)?;
    let cfg = json!({ "count": c.count, "start_index": c.start_index, "flow": c.flow.is_some() });
    write_manifest(&sidecar(&c.out), &manifest("sample", argv, &cfg, Some(seed), sampling_inputs(&c.ckpt, &c.flow, &c.start)?))?;
    println!("wrote {} samples to {}", seqs.len(), c.out.display());
    Ok(())
}

fn sample_loop(c: SampleLoop, argv: &[String]) -> CmdResult<()> {
    if c.segments == 0 {
        return Err(usage("--segments must be at least 1"));
    }
    let seed = c.seed.unwrap_or(0);
    let m = load_behavior(&c.ckpt)?;
    let flow = load_flow(&c.flow)?;
    let start = pick(&c.start, c.start_index)?;
    check_joints(&m.model, &start, "--start")?;
    let x_t = normalized_frame(&m.stats, start.first_frame());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = recursive_sample(&m.model, &x_t, c.segments, code_source(&flow), &mut rng).ctx(|| "sampling".into())?;
    let jumps = boundary_displacements(&seq, m.model.config.frames);
    let seq = world(&m.stats, vec![seq])?;
    save_seqs(&c.out, &seq)?;
    let cfg = json!({ "segments": c.segments, "start_index": c.start_index, "flow": c.flow.is_some() });
    let mut man = manifest("sample-loop", argv, &cfg, Some(seed), sampling_inputs(&c.ckpt, &c.flow, &c.start)?);
    man["boundary_displacements_normalized"] = json!(jumps);
    write_manifest(&sidecar(&c.out), &man)?;
    println!("wrote {} frames ({} segments) to {}", seq[0].frames(), c.segments, c.out.display());
    Ok(())
}

fn interpolate(c: Interpolate, argv: &[String]) -> CmdResult<()> {
    let lambdas: Vec<f64> = parse_list("--lambdas", &c.lambdas)?;
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(usage(format!("--lambdas: {l} is outside [0, 1]")));
    }
    if lambdas.is_empty() {
        return Err(usage("--lambdas: no weights given"));
    }
    let m = load_behavior(&c.ckpt)?;
    let a = pick(&c.from, 0)?;
    let b = pick(&c.to, 0)?;
    check_joints(&m.model, &a, "--from")?;
    check_joints(&m.model, &b, "--to")?;
    let na = m.stats.normalize(&a).ctx(|| "normalizing --from".into())?;
    let nb = m.stats.normalize(&b).ctx(|| "normalizing --to".into())?;
    let seqs = m.model.interpolate(&na, &nb, &lambdas).ctx(|| "interpolating".into())?;
    let seqs = world(&m.stats, seqs)?;
    save_seqs(&c.out, &seqs)?;
    let cfg = json!({ "lambdas": lambdas });
    write_manifest(&sidecar(&c.out), &manifest("interpolate", argv, &cfg, None, file_digests(&[&c.ckpt, &c.from, &c.to])?))?;
    println!("wrote {} interpolations to {}", seqs.len(), c.out.display());
    Ok(())
}

/// `(name, checkpoint)` pairs from --models / --ckpt-dir / --ckpt.
fn resolve_models(c: &EvalTransfer) -> CmdResult<Vec<(String, PathBuf)>> {
    match (&c.models, &c.ckpt) {
        (Some(_), Some(_)) => Err(usage("give either --models or --ckpt, not both")),
        (None, None) => Err(usage("--models or --ckpt is required")),
        (None, Some(p)) => Ok(vec![("model".to_string(), p.clone())]),
        (Some(list), None) => {
            let mut out = Vec::new();
            for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (name, path) = match item.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let dir = c
                            .ckpt_dir
                            .as_ref()
                            .ok_or_else(|| usage(format!("--models: `{item}` has no path and --ckpt-dir is not set")))?;
                        let nested = dir.join(item).join("last.ckpt");
                        let path = if nested.exists() { nested } else { dir.join(format!("{item}.ckpt")) };
                        (item.to_string(), path)
                    }
                };
                if out.iter().any(|(n, _)| *n == name) {
                    return Err(usage(format!("--models: `{name}` listed twice")));
                }
                out.push((name, path));
            }
            if out.is_empty() {
                return Err(usage("--models: no models listed"));
            }
            Ok(out)
        }
    }
}

fn write_report(out: &Path, command: &str, argv: &[String], report: &MetricReport, seed: u64, inputs: Value) -> CmdResult<()> {
    let json_text = report.to_json().ctx(|| "serializing the report".into())?;
    write_atomic(&out.join("report.json"), json_text.as_bytes()).ctx(|| "writing report.json".into())?;
    let text = report.to_text();
    write_atomic(&out.join("report.txt"), text.as_bytes()).ctx(|| "writing report.txt".into())?;
    write_manifest(&out.join(MANIFEST_FILE), &manifest(command, argv, &report.settings, Some(seed), inputs))?;
    print!("{text}");
    Ok(())
}

fn eval_transfer(c: EvalTransfer, argv: &[String]) -> CmdResult<()> {
    let models = resolve_models(&c)?;
    let dir = data_dir(&c.data)?;
    let mut cfg: TransferEvalConfig = read_config(&c.config)?.unwrap_or_default();
    if let Some(n) = c.pairs {
        cfg.pair_count = n;
    }
    if let Some(s) = &c.steps {
        cfg.steps = parse_list("--steps", s)?;
    }
    if c.no_re {
        cfg.with_re = false;
    }
    if c.no_action {
        cfg.with_action = false;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.regressor.seed = s;
        cfg.probe.seed = s;
    }
    let data = DataDir::load(&dir)?;
    let train_set = data.normalized(&data.train)?;
    let test_set = data.normalized(&data.test)?;
    let loaded: Vec<(String, LoadedModel)> = models
        .iter()
        .map(|(n, p)| Ok((n.clone(), load_behavior(p)?)))
        .collect::<CmdResult<_>>()?;
    for (name, m) in &loaded {
        if m.stats != data.stats {
            return Err(Failure::Runtime(format!("model `{name}` was trained on a different dataset (normalization differs)")));
        }
    }
    let refs: Vec<(&str, &dyn TransferModel)> = loaded.iter().map(|(n, m)| (n.as_str(), &m.model as &dyn TransferModel)).collect();
    let transfer = run_transfer_eval(&refs, &train_set, &test_set, &cfg).ctx(|| "running the transfer evaluation".into())?;
    let ub_cfg = SeqClassifierConfig {
        seed: cfg.seed,
        ..SeqClassifierConfig::default()
    };
    let action_upper_bound = if c.upper_bound {
        Some(action_upper_bound(&train_set, &test_set, &ub_cfg).ctx(|| "training the upper-bound classifier".into())?)
    } else {
        None
    };
    let settings = json!({
        "transfer": cfg,
        "upper_bound": c.upper_bound.then_some(&ub_cfg),
        // content digests rather than paths, so reports depend only on the inputs' bytes
        "models": models
            .iter()
            .map(|(n, p)| Ok(json!({"name": n, "checkpoint_sha256": file_sha256(p)?})))
            .collect::<CmdResult<Vec<_>>>()?,
    });
    let report = MetricReport {
        settings,
        transfer,
        action_upper_bound,
        ..MetricReport::default()
    };
    let mut inputs: Vec<&Path> = data.files.iter().map(PathBuf::as_path).collect();
    inputs.extend(models.iter().map(|(_, p)| p.as_path()));
    write_report(&c.out, "eval-transfer", argv, &report, cfg.seed, file_digests(&inputs)?)
}

fn eval_diversity(c: EvalDiversity, argv: &[String]) -> CmdResult<()> {
    let dir = data_dir(&c.data)?;
    let mut cfg: DiversityEvalConfig = read_config(&c.config)?.unwrap_or_default();
    if let Some(s) = &c.sizes {
        cfg.set_sizes = parse_list("--sizes", s)?;
    }
    if cfg.set_sizes.iter().any(|&n| n < 2) {
        return Err(usage("--sizes: every sample set needs at least 2 samples"));
    }
    if let Some(n) = c.starts {
        cfg.starts = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let m = load_behavior(&c.ckpt)?;
    let flow = load_flow(&c.flow)?;
    let data = DataDir::load(&dir)?;
    let starts = data.normalized(&data.test)?;
    let rows = run_diversity_eval(&m.model, flow.as_ref(), &starts, &cfg).ctx(|| "running the diversity evaluation".into())?;
    let report = MetricReport {
        settings: json!({ "diversity": cfg }),
        diversity: rows,
        ..MetricReport::default()
    };
    let mut inputs: Vec<&Path> = data.files.iter().map(PathBuf::as_path).collect();
    inputs.push(&c.ckpt);
    if let Some(f) = &c.flow {
        inputs.push(f);
    }
    write_report(&c.out, "eval-diversity", argv, &report, cfg.seed, file_digests(&inputs)?)
}

fn eval_realism(c: EvalRealism, argv: &[String]) -> CmdResult<()> {
    if c.count < 2 {
        return Err(usage("--count must be at least 2"));
    }
    let dir = data_dir(&c.data)?;
    let mut cfg: RealityConfig = read_config(&c.config)?.unwrap_or_default();
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let m = load_behavior(&c.ckpt)?;
    let flow = load_flow(&c.flow)?;
    let data = DataDir::load(&dir)?;
    let mut real = data.normalized(&data.test)?;
    real.extend(data.normalized(&data.train)?);
    real.truncate(c.count);
    let generations = realism_generations(&m.model, flow.as_ref(), &real, cfg.seed).ctx(|| "generating sequences".into())?;
    let mut accuracy = std::collections::BTreeMap::new();
    for (kind, seqs) in &generations {
        let acc = reality_classifier(&real, seqs, &cfg).ctx(|| format!("classifying `{kind}` generations"))?;
        accuracy.insert(kind.clone(), acc);
    }
    let report = MetricReport {
        settings: json!({ "realism": cfg, "real_count": real.len() }),
        realism: Some(RealismEval {
            real_count: real.len(),
            generated_count: real.len(),
            classifier: cfg.clone(),
            accuracy,
        }),
        ..MetricReport::default()
    };
    let mut inputs: Vec<&Path> = data.files.iter().map(PathBuf::as_path).collect();
    inputs.push(&c.ckpt);
    if let Some(f) = &c.flow {
        inputs.push(f);
    }
    write_report(&c.out, "eval-realism", argv, &report, cfg.seed, file_digests(&inputs)?)
}

fn nn(c: Nn, argv: &[String]) -> CmdResult<()> {
    if c.k == 0 {
        return Err(usage("--k must be positive"));
    }
    if matches!(c.metric, NnMode::Latent) && c.ckpt.is_none() {
        return Err(usage("--ckpt is required for --metric latent"));
    }
    let corpus_path = match &c.corpus {
        Some(p) => p.clone(),
        None => data_dir(&c.data)?.join(TRAIN_FILE),
    };
    let corpus = load_seqs(&corpus_path)?;
    let query = pick(&c.query, c.query_index)?;
    let model = c.ckpt.as_deref().map(load_behavior).transpose()?;
    let metric = match (&c.metric, &model) {
        (NnMode::Latent, Some(m)) => NnMetric::Latent(&m.model, &m.stats),
        _ => NnMetric::Posture,
    };
    let ranked = nearest_neighbors(&query, &corpus, metric).ctx(|| "ranking the corpus".into())?;
    let rows: Vec<Value> = ranked
        .iter()
        .take(c.k)
        .enumerate()
        .map(|(i, (id, d))| json!({ "rank": i + 1, "id": id, "distance": d }))
        .collect();
    let mode = match c.metric {
        NnMode::Latent => "latent",
        NnMode::Posture => "posture",
    };
    let result = json!({ "query": query.id, "metric": mode, "neighbors": rows });
    write_json_atomic(&c.out, &result).ctx(|| format!("writing {}", c.out.display()))?;
    let mut inputs: Vec<&Path> = vec![&c.query, &corpus_path];
    if let Some(p) = &c.ckpt {
        inputs.push(p);
    }
    let cfg = json!({ "metric": mode, "k": c.k, "query_index": c.query_index });
    write_manifest(&sidecar(&c.out), &manifest("nn", argv, &cfg, None, file_digests(&inputs)?))?;
    for (i, (id, d)) in ranked.iter().take(c.k).enumerate() {
        println!("{:>3}  {id:<24} {d:.4}", i + 1);
    }
    Ok(())
}

fn render(c: Render, argv: &[String]) -> CmdResult<()> {
    let view: ViewPlane = c.view.parse().map_err(|e: Error| usage(format!("--view: {e}")))?;
    if !(c.fps.is_finite() && c.fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    let seq = pick(&c.input, c.index)?;
    let cfg = RenderConfig {
        fps: c.fps,
        view,
        ..RenderConfig::default()
    };
    let paths = render_to_dir(&seq, &c.out, &cfg).ctx(|| format!("rendering `{}`", seq.id))?;
    let settings = json!({ "index": c.index, "fps": c.fps, "view": c.view, "size": cfg.size });
    write_manifest(&c.out.join(MANIFEST_FILE), &manifest("render", argv, &settings, None, file_digests(&[&c.input])?))?;
    println!("wrote {} frame SVGs and animated.svg to {}", paths.len() - 1, c.out.display());
    Ok(())
}

//! Command-line front end: `synth`, `train` and `eval`.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::embedstore::{load_coarse, load_vocab, VocabSet};
use crate::error::Error;
use crate::evaluator::{evaluate, mean_rank, EvalInputs, EvalReport};
use crate::heads::{init_head, HeadKind, HeadParams, HeadShape};
use crate::synthbench::{generate, SynthConfig};
use crate::trainer::{
    file_digest, load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, Snapshot, Stage,
    TrainConfig, Trainer, TrainingRecord,
};

#[derive(Debug, Parser)]
#[command(name = "fgmatch", version, about = "Learned similarity heads over frozen image/text embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (tables and manifests).
    Synth(SynthArgs),
    /// Train a head for one stage and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a head and write a JSON report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 52)]
    pub categories: usize,
    #[arg(long, default_value_t = 12)]
    pub attributes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, default_value_t = 10)]
    pub negatives: usize,
    #[arg(long, default_value_t = 2000)]
    pub coarse_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub coarse_test: usize,
    #[arg(long, default_value_t = 5)]
    pub captions: usize,
    #[arg(long, default_value_t = 20_000)]
    pub train_items: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_items: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StageArg {
    Warmup,
    Finetune,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Warmup => Stage::Warmup,
            StageArg::Finetune => Stage::Finetune,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// Head kind for a freshly initialized head.
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Start from the parameters of an earlier checkpoint.
    #[arg(long, conflicts_with = "resume")]
    pub from: Option<PathBuf>,
    /// Continue an interrupted run of the same stage from its checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Coarse manifest for warm-up, vocabulary manifest for fine-tuning.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Line-delimited JSON training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Vocabulary manifest scored after every epoch.
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    /// JSON file with training configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub no_normalize: bool,
    /// MLP hidden width.
    #[arg(long, default_value_t = crate::heads::DEFAULT_HIDDEN)]
    pub hidden: usize,
    /// Attention heads.
    #[arg(long, default_value_t = crate::heads::DEFAULT_HEADS)]
    pub heads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Head kind; `cosine` needs no checkpoint.
    #[arg(long)]
    pub head: Option<HeadKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary manifests, one per benchmark.
    #[arg(long, num_args = 1..)]
    pub vocab: Vec<PathBuf>,
    /// Coarse test manifest for retrieval.
    #[arg(long)]
    pub coarse: Option<PathBuf>,
    /// Earlier report to compute deltas against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Output report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn basename(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn synth(a: SynthArgs) -> Outcome {
    let config = SynthConfig {
        dim: a.dim,
        n_categories: a.categories,
        n_attributes: a.attributes,
        epsilon: a.epsilon,
        noise: a.noise,
        category_jitter: a.jitter,
        n_negatives: a.negatives,
        n_coarse_train: a.coarse_train,
        n_coarse_test: a.coarse_test,
        captions_per_image: a.captions,
        n_train_items: a.train_items,
        n_eval_items: a.eval_items,
        seed: a.seed,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    for path in generate(&config)?.write(&a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

/// Stage defaults, then the config file, then explicit flags.
fn resolve_config(a: &TrainArgs) -> Outcome<TrainConfig> {
    let stage = Stage::from(a.stage);
    let mut value = serde_json::to_value(TrainConfig::for_stage(stage)).map_err(Error::from)?;
    if let Some(path) = &a.config {
        let file: Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(Error::from)?;
        let Value::Object(fields) = file else {
            return Err(Failure::Usage(format!("{} must hold a JSON object", path.display())));
        };
        for (k, v) in fields {
            if value.get(&k).is_none() {
                return Err(Failure::Usage(format!("unknown training option {k:?}")));
            }
            value[k] = v;
        }
    }
    let mut config: TrainConfig =
        serde_json::from_value(value).map_err(|e| Failure::Usage(format!("training config: {e}")))?;
    if config.stage != stage {
        return Err(Failure::Usage("config file stage disagrees with --stage".into()));
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.margin {
        config.margin = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if a.checkpoint_every.is_some() {
        config.checkpoint_every = a.checkpoint_every;
    }
    if a.no_normalize {
        config.normalize_inputs = false;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

enum StageData {
    Coarse(crate::embedstore::CoarseSet),
    Vocab(VocabSet),
}

impl StageData {
    fn load(stage: Stage, manifest: &Path, normalize: bool) -> Outcome<(Self, String)> {
        Ok(match stage {
            Stage::Warmup => {
                let set = load_coarse(manifest)?;
                let digest = set.digest();
                let set = if normalize { set.normalized()? } else { set };
                (StageData::Coarse(set), digest)
            }
            Stage::Finetune => {
                let set = load_vocab(manifest)?;
                let digest = set.digest();
                let set = if normalize { set.normalized()? } else { set };
                (StageData::Vocab(set), digest)
            }
        })
    }

    fn epoch(&self, trainer: &mut Trainer) -> Outcome<EpochRecord> {
        Ok(match self {
            StageData::Coarse(set) => trainer.warmup_epoch(set)?,
            StageData::Vocab(set) => trainer.finetune_epoch(set)?,
        })
    }
}

fn epoch_path(out: &Path, epoch: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.epoch-{epoch}.ckpt"))
}

fn train(a: TrainArgs) -> Outcome {
    let (trainer, record, data) = if let Some(path) = &a.resume {
        let mut ck = load_checkpoint(path)?;
        if let Some(kind) = a.head {
            ck = ck.expect_kind(kind)?;
        }
        let (Some(adam), Some(mut record)) = (ck.adam, ck.record) else {
            return Err(Failure::Runtime(Error::dataset(format!(
                "{} has no optimizer state to resume from",
                path.display()
            ))));
        };
        if record.config.stage != Stage::from(a.stage) {
            return Err(Failure::Usage("--stage differs from the resumed run".into()));
        }
        if let Some(epochs) = a.epochs {
            record.config.epochs = epochs;
        }
        let (data, digest) = StageData::load(record.config.stage, &a.manifest, record.config.normalize_inputs)?;
        if digest != record.dataset_digest {
            return Err(Failure::Runtime(Error::dataset(
                "manifest content differs from the one the checkpoint was trained on",
            )));
        }
        let trainer = Trainer::resume(record.config.clone(), ck.head, adam, record.epochs_done)?;
        (trainer, record, data)
    } else {
        let config = resolve_config(&a)?;
        let (head, parent) = match (&a.from, a.head) {
            (Some(path), kind) => {
                let mut ck = load_checkpoint(path)?;
                if let Some(kind) = kind {
                    ck = ck.expect_kind(kind)?;
                }
                (ck.head, Some(file_digest(path)?))
            }
            (None, Some(kind)) => {
                let dim = manifest_dim(&a.manifest)?;
                let mut shape = HeadShape::new(kind, dim);
                shape.hidden = a.hidden;
                shape.heads = a.heads;
                shape.validate().map_err(|e| Failure::Usage(e.to_string()))?;
                (init_head(shape, config.seed)?, None)
            }
            (None, None) => return Err(Failure::Usage("give --head, --from or --resume".into())),
        };
        if !head.kind().is_trainable() {
            return Err(Failure::Runtime(Error::usage(format!(
                "{} head has no trainable parameters",
                head.kind()
            ))));
        }
        let (data, digest) = StageData::load(config.stage, &a.manifest, config.normalize_inputs)?;
        let mut inputs = json!({ "manifest": basename(&a.manifest) });
        if let Some(path) = &a.from {
            inputs["from"] = json!(basename(path));
        }
        let record = TrainingRecord {
            config: config.clone(),
            epochs_done: 0,
            dataset_digest: digest,
            parent,
            inputs,
        };
        (Trainer::new(config, head)?, record, data)
    };

    let monitor = match &a.monitor {
        Some(path) => {
            let set = load_vocab(path)?;
            Some(if record.config.normalize_inputs { set.normalized()? } else { set })
        }
        None => None,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".log.jsonl");
        PathBuf::from(name)
    });
    let mut log = BufWriter::new(if a.resume.is_some() {
        File::options().create(true).append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    });

    let mut trainer = trainer;
    let save = |trainer: &Trainer, path: &Path| -> Outcome {
        let ck = Checkpoint {
            head: trainer.head().clone(),
            adam: Some(trainer.adam().clone()),
            record: Some(TrainingRecord {
                epochs_done: trainer.epochs_done(),
                ..record.clone()
            }),
        };
        save_checkpoint(&ck, path)?;
        Ok(())
    };
    while !trainer.is_finished() {
        let epoch = data.epoch(&mut trainer)?;
        let mut line = json!({
            "epoch": epoch.epoch,
            "stage": epoch.stage,
            "mean_loss": epoch.mean_loss,
            "seconds": epoch.seconds,
        });
        if let Some(set) = &monitor {
            let rank = mean_rank(trainer.head(), set)?;
            line["monitor_mean_rank"] = json!(rank.mean_rank);
            trainer.history_mut().snapshots.push(Snapshot {
                epoch: epoch.epoch,
                metric: "mean_rank".into(),
                value: rank.mean_rank,
            });
        }
        writeln!(log, "{line}")?;
        log.flush()?;
        eprintln!("{line}");
        if let Some(every) = trainer.config().checkpoint_every {
            if epoch.epoch % every == 0 && !trainer.is_finished() {
                save(&trainer, &epoch_path(&a.out, epoch.epoch))?;
            }
        }
    }
    save(&trainer, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn manifest_dim(path: &Path) -> Outcome<usize> {
    Ok(crate::embedstore::Manifest::read(path)?.dim)
}

fn eval(a: EvalArgs) -> Outcome {
    if a.vocab.is_empty() && a.coarse.is_none() {
        return Err(Failure::Usage("give at least one --vocab or a --coarse manifest".into()));
    }
    let vocabs = a.vocab.iter().map(load_vocab).collect::<Result<Vec<_>, _>>()?;
    let coarse = a.coarse.as_ref().map(load_coarse).transpose()?;
    let dim = vocabs
        .first()
        .map(|v| v.dim())
        .or(coarse.as_ref().map(|c| c.dim()))
        .expect("at least one dataset");

    let mut config = json!({
        "vocab": a.vocab.iter().map(|p| basename(p)).collect::<Vec<_>>(),
        "coarse": a.coarse.as_deref().map(basename),
    });
    let (head, normalize) = match (&a.checkpoint, a.head) {
        (Some(path), kind) => {
            let mut ck = load_checkpoint(path)?;
            if let Some(kind) = kind {
                ck = ck.expect_kind(kind)?;
            }
            config["checkpoint"] = json!({ "file": basename(path), "sha256": file_digest(path)? });
            let normalize = ck.record.as_ref().is_none_or(|r| r.config.normalize_inputs);
            config["training"] = serde_json::to_value(&ck.record).map_err(Error::from)?;
            (ck.head, normalize && !a.no_normalize)
        }
        (None, Some(HeadKind::CosineBaseline)) => (HeadParams::CosineBaseline { dim }, !a.no_normalize),
        (None, Some(kind)) => {
            return Err(Failure::Usage(format!("{kind} needs --checkpoint; only cosine runs without one")))
        }
        (None, None) => return Err(Failure::Usage("give --checkpoint or --head cosine".into())),
    };
    config["head"] = json!(head.kind());
    config["normalize_inputs"] = json!(normalize);

    let inputs = EvalInputs {
        vocabs: &vocabs,
        coarse: coarse.as_ref(),
        normalize_inputs: normalize,
        config,
    };
    let mut report = evaluate(&head, &inputs)?;
    if let Some(path) = &a.baseline {
        report = report.with_baseline(&EvalReport::read(path)?)?;
    }
    report.write(&a.out)?;
    print!("{}", report.render());
    Ok(())
}

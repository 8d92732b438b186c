use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{ArgMatches, Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vattr_core::data::{load_manifest, make_split, Partition, SplitRequest, SplitSpec};
use vattr_model::{train, Arch, AttributionModel, Example, ModelConfig, TrainConfig};

use crate::common::{
    check_cache, create_dir, load_inputs, manifest_dir, merge_config, require, thread_pool, write_echo, write_file,
};
use crate::error::{CliError, Result};

pub const MODEL_FILE: &str = "model.vamd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Class-stratified 40/10/50.
    Cs1,
    /// Evaluation speakers unseen in training.
    Cs2,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Existing split file; otherwise one is made from --split-kind.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cs1")]
    pub split_kind: SplitKind,
    /// Speakers shared by train and validation in a CS2 split.
    #[arg(long, default_value_t = 2)]
    pub common_speakers: usize,
    #[arg(long, default_value = "lpr")]
    pub arch: Arch,
    /// Run directory for the checkpoint, logs, split and echo.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds the split, initialization, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = vattr_model::train::TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = vattr_core::lp::EXPERIMENT_LP_ORDER)]
    pub lp_order: usize,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Read features extracted by `vattr extract` instead of audio.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Drop silent stretches before feature extraction (audio input only).
    #[arg(long)]
    pub remove_silence: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: TrainArgs, matches: &ArgMatches) -> Result<()> {
    let config = args.config.clone();
    let args = merge_config(args, matches, config.as_deref())?;
    execute(&args)
}

pub fn model_config(args: &TrainArgs) -> ModelConfig {
    let mut cfg = ModelConfig::new(args.arch, args.seed);
    cfg.num_heads = args.heads;
    cfg.dropout = args.dropout;
    cfg.input.lp_order = args.lp_order;
    cfg.input.remove_silence = args.remove_silence;
    cfg
}

pub fn execute(args: &TrainArgs) -> Result<()> {
    let manifest = require(&args.manifest, "manifest")?;
    let out = require(&args.out, "out")?;
    if args.remove_silence && args.cache_dir.is_some() {
        return Err(CliError::user(
            "--remove-silence applies to audio input; extract the cache with --remove-silence instead",
        ));
    }
    let cfg = model_config(args);
    cfg.validate()?;
    if let Some(cache) = &args.cache_dir {
        check_cache(cache, args.arch)?;
    }
    let records = load_manifest(manifest)?;
    let split = match &args.split {
        Some(path) => SplitSpec::load(path)?,
        None => {
            let request = match args.split_kind {
                SplitKind::Cs1 => SplitRequest::Cs1,
                SplitKind::Cs2 => SplitRequest::Cs2 {
                    common_speakers: args.common_speakers,
                },
            };
            make_split(&records, &request, args.seed)?
        }
    };
    create_dir(out)?;
    split.save(out.join("split.json"))?;
    write_echo(out, "train", args)?;

    let dir = manifest_dir(manifest);
    let pool = thread_pool(args.workers)?;
    let load = |p: Partition| -> Result<Vec<Example>> {
        let ids = split.partition(p);
        let loaded = pool.install(|| load_inputs(&records, ids, &dir, args.arch, &cfg.input, args.cache_dir.as_deref()))?;
        loaded
            .into_iter()
            .map(|(r, input)| {
                Ok(Example {
                    label: r.algorithm_class.index(),
                    id: r.utterance_id,
                    input: input?,
                })
            })
            .collect()
    };
    let train_set = load(Partition::Train)?;
    let val_set = load(Partition::Val)?;
    eprintln!(
        "training {} on {} utterances, validating on {}",
        cfg.arch.system_name(),
        train_set.len(),
        val_set.len()
    );

    let tc = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        patience: args.patience,
    };
    let mut model = AttributionModel::new(cfg)?;
    let mut log = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let report = train(&mut model, &train_set, &val_set, &tc, |e| {
        eprintln!(
            "epoch {:>3}  train loss {:.4} acc {:6.2}%  val loss {:.4} acc {:6.2}%",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
        let _ = writeln!(
            log,
            "{},{:.6},{:.4},{:.6},{:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
    });
    // keep the log of completed epochs even when training fails
    write_file(&out.join("train_log.csv"), log.as_bytes())?;
    let report = report?;
    model.save(&out.join(MODEL_FILE))?;
    let summary = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&out.join("train_report.json"), summary.as_bytes())?;
    eprintln!("best epoch {}; checkpoint {}", report.best_epoch, out.join(MODEL_FILE).display());
    Ok(())
}

use std::path::PathBuf;

use clap::{ArgMatches, Args};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vattr_core::data::{load_manifest, AlgorithmClass, Partition, SplitSpec, UtteranceRecord};
use vattr_core::eval::EvalReport;
use vattr_model::export::embeddings_csv;
use vattr_model::{argmax, late_fuse, AttentionRecord, AttributionModel, Prediction};

use crate::common::{check_cache, create_dir, load_inputs, manifest_dir, merge_config, require, thread_pool, write_echo, write_file};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// train, val or eval. Train-set evaluation is flagged in the report.
    #[arg(long, default_value = "eval")]
    pub partition: String,
    /// Checkpoint; give two together with --late-fuse.
    #[arg(long = "model", num_args = 1)]
    pub models: Vec<PathBuf>,
    /// Weights of the two models' logits.
    #[arg(long, num_args = 2, value_names = ["W1", "W2"])]
    pub late_fuse: Option<Vec<f64>>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: EvalArgs, matches: &ArgMatches) -> Result<()> {
    let config = args.config.clone();
    let args = merge_config(args, matches, config.as_deref())?;
    execute(&args)
}

/// "LPR-DNN" + "LMS-DNN" becomes "LPR+LMS-DNN*".
fn fused_name(a: &str, b: &str) -> String {
    format!("{}+{b}*", a.strip_suffix("-DNN").unwrap_or(a))
}

pub fn execute(args: &EvalArgs) -> Result<()> {
    let manifest = require(&args.manifest, "manifest")?;
    let split_path = require(&args.split, "split")?;
    let out = require(&args.out, "out")?;
    let partition: Partition = args.partition.parse().map_err(|e| CliError::user(format!("{e}")))?;
    let weights = match (&args.late_fuse, args.models.len()) {
        (None, 1) => None,
        (Some(w), 2) => Some([w[0], w[1]]),
        (None, n) => return Err(CliError::user(format!("{n} models given; pass one, or two with --late-fuse"))),
        (Some(_), n) => return Err(CliError::user(format!("--late-fuse needs exactly two models, got {n}"))),
    };
    let models = args
        .models
        .iter()
        .map(|p| AttributionModel::load(p).map_err(|e| CliError::from(e).context(p.display())))
        .collect::<Result<Vec<_>>>()?;
    if let [a, b] = &models[..] {
        if a.config().num_classes != b.config().num_classes {
            return Err(CliError::user("fused models disagree on the number of classes"));
        }
    }
    if let Some(cache) = &args.cache_dir {
        for m in &models {
            check_cache(cache, m.arch())?;
        }
    }
    let records = load_manifest(manifest)?;
    let split = SplitSpec::load(split_path)?;
    let mut ids = split.partition(partition).to_vec();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::user(format!("partition {} is empty", args.partition)));
    }
    let dir = manifest_dir(manifest);
    let pool = thread_pool(args.workers)?;

    // predictions[model][utterance]
    let mut predictions: Vec<Vec<std::result::Result<Prediction, String>>> = Vec::new();
    let mut utterances: Vec<UtteranceRecord> = Vec::new();
    for m in &models {
        let cfg = m.config();
        let loaded = pool.install(|| load_inputs(&records, &ids, &dir, cfg.arch, &cfg.input, args.cache_dir.as_deref()))?;
        utterances = loaded.iter().map(|(r, _)| r.clone()).collect();
        let preds = pool.install(|| {
            loaded
                .par_iter()
                .map(|(_, input)| match input {
                    Ok(x) => m.predict(x).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                })
                .collect()
        });
        predictions.push(preds);
    }

    let mut failures = Vec::new();
    let (mut preds, mut truths, mut logits) = (Vec::new(), Vec::new(), Vec::new());
    for (i, r) in utterances.iter().enumerate() {
        let per_model: std::result::Result<Vec<&Prediction>, &String> =
            predictions.iter().map(|p| p[i].as_ref()).collect();
        let per_model = match per_model {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: {}: {e}", r.utterance_id);
                failures.push(r.utterance_id.clone());
                continue;
            }
        };
        let l = match weights {
            Some(w) => late_fuse(&per_model[0].logits, &per_model[1].logits, w)?,
            None => per_model[0].logits.clone(),
        };
        let class = AlgorithmClass::from_index(argmax(&l))
            .ok_or_else(|| CliError::user("model predicts a class outside the label set"))?;
        preds.push(class);
        truths.push(r.algorithm_class);
        logits.push(l);
    }
    if preds.is_empty() {
        return Err(CliError::data("every utterance failed"));
    }

    let system = match &models[..] {
        [a] => a.arch().system_name().to_string(),
        [a, b] => fused_name(a.arch().system_name(), b.arch().system_name()),
        _ => unreachable!("model count checked above"),
    };
    let mut report = EvalReport::build(&system, &args.partition, &preds, &truths, &logits)?;
    report.fusion_weights = weights;
    report.failures = failures;

    create_dir(out)?;
    write_echo(out, "eval", args)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&out.join("report.json"), json.as_bytes())?;
    write_file(&out.join("report.txt"), report.to_text().as_bytes())?;
    write_file(&out.join("confusion.csv"), report.confusion.to_csv().as_bytes())?;
    if let Some(roc) = &report.roc {
        write_file(&out.join("roc.csv"), roc.to_csv().as_bytes())?;
    }
    for (k, preds) in predictions.iter().enumerate() {
        let mut jsonl = String::new();
        let mut rows = Vec::new();
        for (r, p) in utterances.iter().zip(preds) {
            let Ok(p) = p else { continue };
            for map in &p.attention {
                jsonl.push_str(&AttentionRecord::new(&r.utterance_id, map).to_json_line());
                jsonl.push('\n');
            }
            rows.push((r.utterance_id.clone(), r.algorithm_class.label().to_string(), p.embedding.clone()));
        }
        write_file(&out.join(format!("model{k}_attention.jsonl")), jsonl.as_bytes())?;
        write_file(&out.join(format!("model{k}_embeddings.csv")), embeddings_csv(&rows).as_bytes())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vattr_core::data::{load_manifest, UtteranceRecord};
use vattr_core::features::{
    bicoherence, detect_pulses, local_jitter, local_shimmer, log_mel_energies, write_feature_cache, BicoherenceConfig,
    PulseConfig,
};
use vattr_core::lp::{lp_residual, write_residual_raw};
use vattr_model::input::mel_config;
use vattr_model::InputConfig;

use crate::common::{
    create_dir, load_audio, logmel_cache_path, lpr_cache_path, manifest_dir, merge_config, require, thread_pool,
    write_echo, write_file, Loaded, LOGMEL_DIR, LPR_DIR,
};
use crate::error::{CliError, ExitKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractKind {
    /// 80-band log-mel energies, one cache file per utterance.
    Logmel,
    /// LP residual, one cache file per utterance.
    Lpr,
    /// Jitter and shimmer of residual pulses, one CSV row per utterance.
    JitterShimmer,
    /// Bicoherence magnitude of the residual, one CSV grid per utterance.
    Bicoherence,
}

impl ExtractKind {
    fn dir_name(self) -> &'static str {
        match self {
            ExtractKind::Logmel => LOGMEL_DIR,
            ExtractKind::Lpr => LPR_DIR,
            ExtractKind::JitterShimmer => "jitter_shimmer",
            ExtractKind::Bicoherence => "bicoherence",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<ExtractKind>,
    /// Features go to `<cache-dir>/<kind>/`.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Drop silent stretches before analysis.
    #[arg(long)]
    pub remove_silence: bool,
    #[arg(long, default_value_t = vattr_core::lp::EXPERIMENT_LP_ORDER)]
    pub lp_order: usize,
    /// Parallel workers; all processors by default.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

enum Outcome {
    Done(Option<String>),
    Skipped,
}

pub fn run(args: ExtractArgs, matches: &ArgMatches) -> Result<()> {
    let config = args.config.clone();
    let args = merge_config(args, matches, config.as_deref())?;
    execute(&args)
}

pub fn execute(args: &ExtractArgs) -> Result<()> {
    let manifest = require(&args.manifest, "manifest")?;
    let kind = *require(&args.kind, "kind")?;
    let cache = require(&args.cache_dir, "cache-dir")?;
    let mut records = load_manifest(manifest)?;
    records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let dir = manifest_dir(manifest);
    let out = cache.join(kind.dir_name());
    create_dir(&out)?;
    let input = InputConfig {
        lp_order: args.lp_order,
        ..InputConfig::default()
    };
    let pool = thread_pool(args.workers)?;
    let results: Vec<Result<Outcome>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| extract_one(r, &dir, cache, kind, &input, args.remove_silence))
            .collect()
    });

    let mut summary = match kind {
        ExtractKind::JitterShimmer => Some("utterance_id,class,pulses,jitter_pct,shimmer_pct\n".to_string()),
        ExtractKind::Bicoherence => Some("utterance_id,class,segments,mean_magnitude,max_magnitude\n".to_string()),
        _ => None,
    };
    let (mut failed, mut skipped, mut worst) = (0, 0, ExitKind::Data);
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(Outcome::Done(row)) => {
                if let (Some(s), Some(row)) = (summary.as_mut(), row) {
                    s.push_str(&row);
                }
            }
            Ok(Outcome::Skipped) => {
                skipped += 1;
                eprintln!("warning: {} has no audio left after silence removal; skipped", r.utterance_id);
            }
            Err(e) => {
                failed += 1;
                if e.kind == ExitKind::Numerical {
                    worst = ExitKind::Numerical;
                }
                eprintln!("error: {}: {e}", r.utterance_id);
            }
        }
    }
    if let Some(s) = summary {
        write_file(&out.join("summary.csv"), s.as_bytes())?;
    }
    write_echo(&out, "extract", args)?;
    eprintln!(
        "{}: {} extracted, {skipped} skipped, {failed} failed",
        kind.dir_name(),
        records.len() - skipped - failed
    );
    if failed > 0 {
        return Err(CliError {
            kind: worst,
            message: format!("{failed} of {} utterances failed", records.len()),
        });
    }
    Ok(())
}

fn extract_one(
    r: &UtteranceRecord,
    dir: &Path,
    cache: &Path,
    kind: ExtractKind,
    input: &InputConfig,
    remove_silence: bool,
) -> Result<Outcome> {
    let Loaded::Audio(w) = load_audio(r, dir, remove_silence)? else {
        return Ok(Outcome::Skipped);
    };
    let id = &r.utterance_id;
    let class = r.algorithm_class.label();
    let residual = || lp_residual(&w, input.lp_order, input.lp_frame, input.lp_hop);
    let row = match kind {
        ExtractKind::Logmel => {
            write_feature_cache(logmel_cache_path(cache, id), &log_mel_energies(&w, &mel_config(input))?)?;
            None
        }
        ExtractKind::Lpr => {
            write_residual_raw(lpr_cache_path(cache, id), &residual()?)?;
            None
        }
        ExtractKind::JitterShimmer => {
            let pulses = detect_pulses(&residual()?, &PulseConfig::default())?;
            Some(format!(
                "{id},{class},{},{:.6},{:.6}\n",
                pulses.len(),
                local_jitter(&pulses)?,
                local_shimmer(&pulses)?
            ))
        }
        ExtractKind::Bicoherence => {
            let map = bicoherence(&residual()?.samples, &BicoherenceConfig::default())?;
            let mags: Vec<f64> = map.values.as_slice().iter().map(|c| c.norm()).collect();
            let mean = mags.iter().sum::<f64>() / mags.len() as f64;
            let max = mags.iter().copied().fold(0.0, f64::max);
            write_file(&cache.join("bicoherence").join(format!("{id}.csv")), map.to_csv().as_bytes())?;
            let mut row = String::new();
            let _ = writeln!(row, "{id},{class},{},{mean:.6},{max:.6}", map.num_windows);
            Some(row)
        }
    };
    Ok(Outcome::Done(row))
}

//! Config merging, echo files and per-utterance input loading.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use vattr_core::data::UtteranceRecord;
use vattr_core::features::{read_feature_cache, remove_silence, VadConfig};
use vattr_core::lp::read_residual_raw;
use vattr_core::wav::read_wav;
use vattr_core::Waveform;
use vattr_model::{prepare_input, Arch, InputConfig, ModelInput};

use crate::error::{CliError, Result};

pub const ECHO_FILE: &str = "config_echo.json";

/// Starts from the `--config` file (a previous echo or a flat object) and
/// lets every flag given on the command line override it.
pub fn merge_config<T: Serialize + DeserializeOwned>(
    parsed: T,
    matches: &ArgMatches,
    config: Option<&Path>,
) -> Result<T> {
    let Some(path) = config else {
        return Ok(parsed);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::user(format!("config {} is not valid JSON: {e}", path.display())))?;
    let base = match file.get("args") {
        Some(args) => args.clone(),
        None => file,
    };
    let Value::Object(base) = base else {
        return Err(CliError::user(format!("config {} must hold an object", path.display())));
    };
    let Value::Object(flags) = serde_json::to_value(&parsed).expect("arguments serialize") else {
        unreachable!("argument structs serialize to objects");
    };
    let mut merged = Map::new();
    for (key, flag_value) in flags {
        let from_cli = matches!(matches.value_source(&key), Some(ValueSource::CommandLine));
        let value = match base.get(&key) {
            Some(v) if !from_cli => v.clone(),
            _ => flag_value,
        };
        merged.insert(key, value);
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::user(format!("config {}: {e}", path.display())))
}

/// Writes `{command, version, args}` so the run can be repeated with
/// `--config <echo>`.
pub fn write_echo<T: Serialize>(dir: &Path, command: &str, args: &T) -> Result<()> {
    let echo = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    });
    let text = serde_json::to_string_pretty(&echo).expect("echo serializes") + "\n";
    write_file(&dir.join(ECHO_FILE), text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))
}

pub fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::user(format!("missing required --{flag}")))
}

pub fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub enum Loaded {
    Audio(Waveform),
    /// Nothing left after silence removal.
    Silent,
}

pub fn load_audio(record: &UtteranceRecord, dir: &Path, remove: bool) -> Result<Loaded> {
    let path = record.resolve_audio(dir);
    let w = read_wav(&path).map_err(|e| CliError::from(e).context(&record.utterance_id))?;
    if !remove {
        return Ok(Loaded::Audio(w));
    }
    let trimmed = remove_silence(&w, &VadConfig::default())?;
    Ok(if trimmed.is_empty() {
        Loaded::Silent
    } else {
        Loaded::Audio(trimmed)
    })
}

pub const LOGMEL_DIR: &str = "logmel";
pub const LPR_DIR: &str = "lpr";

pub fn logmel_cache_path(cache: &Path, id: &str) -> PathBuf {
    cache.join(LOGMEL_DIR).join(format!("{id}.vafx"))
}

pub fn lpr_cache_path(cache: &Path, id: &str) -> PathBuf {
    cache.join(LPR_DIR).join(format!("{id}.vars"))
}

/// Fails early with a configuration error when a cache kind `arch` needs
/// was never extracted.
pub fn check_cache(cache: &Path, arch: Arch) -> Result<()> {
    let need = [(arch.uses_logmel(), LOGMEL_DIR), (arch.uses_residual(), LPR_DIR)];
    let missing: Vec<&str> = need
        .iter()
        .filter(|(used, sub)| *used && !cache.join(sub).is_dir())
        .map(|(_, sub)| *sub)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::user(format!(
            "{arch} needs cached {} features in {}; run `vattr extract --kind <kind>` first",
            missing.join(" and "),
            cache.display()
        )))
    }
}

/// Network input for one utterance, from the cache when given, else from audio.
pub fn model_input(
    record: &UtteranceRecord,
    dir: &Path,
    arch: Arch,
    cfg: &InputConfig,
    cache: Option<&Path>,
) -> Result<ModelInput> {
    let id = &record.utterance_id;
    let Some(cache) = cache else {
        return match load_audio(record, dir, false)? {
            Loaded::Audio(w) => Ok(prepare_input(&w, arch, cfg).map_err(|e| CliError::from(e).context(id))?),
            Loaded::Silent => unreachable!("no silence removal requested"),
        };
    };
    let residual = if arch.uses_residual() {
        let r = read_residual_raw(lpr_cache_path(cache, id)).map_err(|e| CliError::from(e).context(id))?;
        if r.order != cfg.lp_order || r.sample_rate != cfg.sample_rate {
            return Err(CliError::user(format!(
                "{id}: cached residual (order {}, {} Hz) does not match the model (order {}, {} Hz)",
                r.order, r.sample_rate, cfg.lp_order, cfg.sample_rate
            )));
        }
        Some(r)
    } else {
        None
    };
    let logmel = if arch.uses_logmel() {
        let m = read_feature_cache(logmel_cache_path(cache, id)).map_err(|e| CliError::from(e).context(id))?;
        if m.num_features() != cfg.n_mels {
            return Err(CliError::user(format!(
                "{id}: cached log-mel has {} bands, the model expects {}",
                m.num_features(),
                cfg.n_mels
            )));
        }
        Some(m)
    } else {
        None
    };
    Ok(ModelInput::from_parts(residual.as_ref(), logmel.as_ref()))
}

/// Loads inputs for `ids` in parallel; output follows the order of `ids`.
pub fn load_inputs(
    records: &[UtteranceRecord],
    ids: &[String],
    dir: &Path,
    arch: Arch,
    cfg: &InputConfig,
    cache: Option<&Path>,
) -> Result<Vec<(UtteranceRecord, Result<ModelInput>)>> {
    let by_id: std::collections::HashMap<&str, &UtteranceRecord> =
        records.iter().map(|r| (r.utterance_id.as_str(), r)).collect();
    let picked = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| CliError::user(format!("split mentions {id}, which is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(picked
        .into_par_iter()
        .map(|r| {
            let input = model_input(&r, dir, arch, cfg, cache);
            (r, input)
        })
        .collect())
}

pub fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::user(format!("cannot start worker pool: {e}")))
}

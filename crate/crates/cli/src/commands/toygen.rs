use std::path::PathBuf;

use clap::{ArgMatches, Args};
use serde::{Deserialize, Serialize};
use vattr_core::data::toy::{build_toy_corpus, ToyCorpusConfig};

use crate::common::{create_dir, merge_config, require, write_echo, write_file};
use crate::error::Result;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ToygenArgs {
    /// Corpus description (TOML). The built-in four-class corpus when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory for `wav/`, `manifest.csv` and the echo.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Previous config echo or JSON object of arguments; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: ToygenArgs, matches: &ArgMatches) -> Result<()> {
    let config = args.config.clone();
    let args = merge_config(args, matches, config.as_deref())?;
    execute(&args)
}

pub fn execute(args: &ToygenArgs) -> Result<()> {
    let out = require(&args.out, "out")?;
    let cfg = match &args.spec {
        Some(path) => ToyCorpusConfig::load(path)?,
        None => ToyCorpusConfig::reference(),
    };
    // validates every class before anything is written
    cfg.class_specs()?;
    create_dir(out)?;
    let records = build_toy_corpus(&cfg, args.seed, out)?;
    write_file(&out.join("toy_spec.toml"), cfg.to_toml().as_bytes())?;
    write_echo(out, "toygen", args)?;
    eprintln!(
        "wrote {} utterances of {} classes to {}",
        records.len(),
        cfg.class.len(),
        out.display()
    );
    Ok(())
}

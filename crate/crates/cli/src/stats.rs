//! `stats`: dataset class distribution.

use std::path::PathBuf;

use alpr_core::annotations::DatasetManifest;
use anyhow::{Context, Result};
use clap::Args;

use crate::output;

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Dataset directory (labels.names plus index.json or images/ and labels/)
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output file (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

pub fn run(args: StatsArgs) -> Result<()> {
    let manifest = DatasetManifest::load_dir(&args.input, None)
        .with_context(|| format!("dataset '{}'", args.input.display()))?;
    let mut text = serde_json::to_string_pretty(&manifest.stats())?;
    text.push('\n');
    output::emit(args.output.as_deref(), &text)
}

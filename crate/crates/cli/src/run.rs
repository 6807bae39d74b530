//! `run`: one result line per frame plus a summary document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use alpr_core::cascade::{Pipeline, PipelineError, PipelineResult, PipelineStatus, StageLabels};
use alpr_core::evaluation::end_to_end_accuracy;
use alpr_core::geometry::{FrameContext, FrameDims};
use alpr_core::synthetic::{parse_frames_jsonl, truths, FrameGt};
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, PipelineOpts};
use crate::{backends, output};

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub opts: PipelineOpts,
    /// Ground-truth frames (.jsonl) or a directory of images
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output file (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Include per-stage timings in each record (timings vary run to run)
    #[arg(long)]
    pub timings: bool,
}

enum Input {
    Frames(Vec<FrameGt>),
    Images(Vec<FrameContext>),
}

#[derive(Serialize)]
struct Summary {
    frames: usize,
    statuses: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_type: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overall: Option<f64>,
}

#[derive(Serialize)]
struct SummaryLine {
    summary: Summary,
}

pub fn run(args: RunArgs) -> Result<()> {
    let resolved = config::resolve(&args.opts)?;
    let profile = config::single_profile(&resolved, "run")?;

    let input = load_input(&args.input)?;
    let frames = match &input {
        Input::Frames(f) => Some(f.as_slice()),
        Input::Images(_) => None,
    };
    let pipeline = Pipeline::new(
        resolved.pipeline.clone(),
        StageLabels::canonical(),
        backends::build_backends(&resolved.backends, frames, profile)?,
    )?;

    let contexts: Vec<FrameContext> = match &input {
        Input::Frames(f) => f.iter().map(|f| f.context()).collect(),
        Input::Images(c) => c.clone(),
    };
    let mut results = run_contexts(&pipeline, &contexts)?;
    if !args.timings {
        results = results.into_iter().map(PipelineResult::without_timings).collect();
    }

    let (per_type, overall) = match &input {
        Input::Frames(f) => {
            let acc = end_to_end_accuracy(&results, &truths(f))?;
            let overall = {
                let correct: usize = acc.values().map(|a| a.correct).sum();
                let total: usize = acc.values().map(|a| a.total).sum();
                correct as f64 / total.max(1) as f64
            };
            let per_type = acc.iter().map(|(k, a)| (k.clone(), a.ratio())).collect();
            (Some(per_type), Some(overall))
        }
        Input::Images(_) => (None, None),
    };

    let mut text = String::new();
    for r in &results {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let summary = SummaryLine {
        summary: Summary {
            frames: results.len(),
            statuses: status_counts(&results),
            per_type,
            overall,
        },
    };
    text.push_str(&serde_json::to_string(&summary)?);
    text.push('\n');
    output::emit(args.output.as_deref(), &text)
}

pub fn run_contexts(
    pipeline: &Pipeline,
    contexts: &[FrameContext],
) -> Result<Vec<PipelineResult>, PipelineError> {
    if pipeline.serialized() {
        contexts.iter().map(|c| pipeline.run(c)).collect()
    } else {
        contexts.par_iter().map(|c| pipeline.run(c)).collect()
    }
}

pub fn status_counts(results: &[PipelineResult]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in results {
        *counts.entry(status_name(r.status)).or_insert(0) += 1;
    }
    counts
}

pub fn status_name(status: PipelineStatus) -> String {
    match serde_json::to_value(status) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("statuses serialize as strings"),
    }
}

fn load_input(path: &Path) -> Result<Input> {
    if path.is_dir() {
        return Ok(Input::Images(scan_image_dir(path)?));
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read '{}'", path.display()))?;
    let frames =
        parse_frames_jsonl(&text).with_context(|| format!("'{}'", path.display()))?;
    Ok(Input::Frames(frames))
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn scan_image_dir(dir: &Path) -> Result<Vec<FrameContext>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read '{}'", dir.display()))?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no images found in '{}'", dir.display());
    }
    paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let (w, h) = image::image_dimensions(&p)
                .with_context(|| format!("cannot read image '{}'", p.display()))?;
            let dims = FrameDims::new(w, h)
                .with_context(|| format!("image '{}'", p.display()))?;
            Ok(FrameContext::original(i as u64, dims).with_image(&p))
        })
        .collect()
}

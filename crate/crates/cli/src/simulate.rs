//! `simulate`: oracle-backed sweeps over a noise × seed grid.

use std::collections::BTreeMap;
use std::path::PathBuf;

use alpr_core::cascade::{Pipeline, PipelineResult, StageLabels};
use alpr_core::detector::NoiseProfile;
use alpr_core::evaluation::{end_to_end_accuracy, mean_std};
use alpr_core::geometry::FrameContext;
use alpr_core::synthetic::{
    generate_frames, oracle_backends, parse_frames_jsonl, truths, write_frames_jsonl, FrameGt,
    SceneConfig,
};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::config::{self, PipelineOpts};
use crate::output;
use crate::run::{run_contexts, status_counts};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub opts: PipelineOpts,
    /// Ground-truth frames (.jsonl)
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub input: Option<PathBuf>,
    /// Generate a scene with this many frames per vehicle type instead
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Seed for the generated scene (independent of detector noise seeds)
    #[arg(long, value_name = "N", requires = "synthetic")]
    pub scene_seed: Option<u64>,
    /// Also write the frames that were used, as .jsonl
    #[arg(long, value_name = "PATH")]
    pub emit_frames: Option<PathBuf>,
    /// Output file (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

/// One (noise, seed) cell of the sweep.
#[derive(Serialize)]
struct Cell {
    noise: NoiseProfile,
    seed: u64,
    overall: f64,
    per_type: BTreeMap<String, f64>,
    statuses: BTreeMap<String, usize>,
}

/// One noise profile aggregated over all seeds.
#[derive(Serialize)]
struct GridRow {
    drop_prob: f64,
    jitter_px: f64,
    misclass_prob: f64,
    spurious_rate: f64,
    seeds: Vec<u64>,
    overall_mean: f64,
    overall_std: f64,
    per_type_mean: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Summary {
    frames: usize,
    cells: usize,
    grid: Vec<GridRow>,
}

#[derive(Serialize)]
struct SummaryLine {
    summary: Summary,
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let resolved = config::resolve(&args.opts)?;
    let frames = load_frames(&args)?;
    if frames.is_empty() {
        bail!("no frames to simulate");
    }
    if let Some(path) = &args.emit_frames {
        output::write_atomic(path, &write_frames_jsonl(&frames))?;
    }
    let frame_truths = truths(&frames);
    let contexts: Vec<FrameContext> = frames.iter().map(|f| f.context()).collect();

    let mut lines = Vec::new();
    let mut grid = Vec::new();
    for noise in &resolved.noises {
        let mut overalls = Vec::new();
        let mut per_type_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for &seed in &resolved.seeds {
            let profile = noise.with_seed(seed);
            let pipeline = Pipeline::new(
                resolved.pipeline.clone(),
                StageLabels::canonical(),
                oracle_backends(&frames, profile),
            )?;
            let results: Vec<PipelineResult> = run_contexts(&pipeline, &contexts)?
                .into_iter()
                .map(PipelineResult::without_timings)
                .collect();
            let acc = end_to_end_accuracy(&results, &frame_truths)?;
            let correct: usize = acc.values().map(|a| a.correct).sum();
            let total: usize = acc.values().map(|a| a.total).sum();
            let overall = correct as f64 / total as f64;
            let per_type: BTreeMap<String, f64> =
                acc.iter().map(|(k, a)| (k.clone(), a.ratio())).collect();
            for (k, v) in &per_type {
                per_type_acc.entry(k.clone()).or_default().push(*v);
            }
            overalls.push(overall);
            lines.push(serde_json::to_string(&Cell {
                noise: profile,
                seed,
                overall,
                per_type,
                statuses: status_counts(&results),
            })?);
        }
        let (overall_mean, overall_std) = mean_std(&overalls);
        grid.push(GridRow {
            drop_prob: noise.drop_prob(),
            jitter_px: noise.jitter_px(),
            misclass_prob: noise.misclass_prob(),
            spurious_rate: noise.spurious_rate(),
            seeds: resolved.seeds.clone(),
            overall_mean,
            overall_std,
            per_type_mean: per_type_acc
                .iter()
                .map(|(k, vs)| (k.clone(), mean_std(vs).0))
                .collect(),
        });
    }

    let mut text = lines.join("\n");
    text.push('\n');
    let summary = SummaryLine {
        summary: Summary {
            frames: frames.len(),
            cells: resolved.noises.len() * resolved.seeds.len(),
            grid,
        },
    };
    text.push_str(&serde_json::to_string(&summary)?);
    text.push('\n');
    output::emit(args.output.as_deref(), &text)
}

fn load_frames(args: &SimulateArgs) -> Result<Vec<FrameGt>> {
    if let Some(path) = &args.input {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read '{}'", path.display()))?;
        return parse_frames_jsonl(&text).with_context(|| format!("'{}'", path.display()));
    }
    let per_type = args.synthetic.expect("clap enforces --input or --synthetic");
    if per_type == 0 {
        bail!("--synthetic must be at least 1");
    }
    let defaults = SceneConfig::default();
    Ok(generate_frames(&SceneConfig {
        frames_per_type: per_type,
        seed: args.scene_seed.unwrap_or(defaults.seed),
        ..defaults
    }))
}

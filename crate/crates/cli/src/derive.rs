//! `derive-stages`: build the next stage's dataset(s) by cropping
//! ground-truth instances out of the previous stage's frames.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use alpr_core::annotations::{
    derive_stage_dataset, DatasetManifest, DatasetRecord, GroundTruthBox, LabelMap, Stage,
};
use alpr_core::synthetic::{parse_frames_jsonl, FrameGt};
use anyhow::{bail, Context, Result};
use clap::Args;

use crate::output;

#[derive(Args, Debug)]
pub struct DeriveArgs {
    /// Ground-truth frames (.jsonl) for the full chain, or a dataset
    /// directory for one unannotated step
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Directory to write the derived dataset(s) into
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    /// Output file for the summary (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
}

pub fn run(args: DeriveArgs) -> Result<()> {
    let written = if args.input.is_dir() {
        derive_one_step(&args.input, &args.output)?
    } else {
        derive_full_chain(&args.input, &args.output)?
    };
    let mut text = serde_json::to_string_pretty(&serde_json::json!({ "written": written }))?;
    text.push('\n');
    output::emit(args.summary.as_deref(), &text)
}

/// From a dataset directory: one derived dataset, with empty child
/// ground truth ready for annotation.
fn derive_one_step(input: &Path, output: &Path) -> Result<BTreeMap<String, usize>> {
    let manifest = DatasetManifest::load_dir(input, None)
        .with_context(|| format!("dataset '{}'", input.display()))?;
    let parent_stage = manifest.labels().stage();
    let Some(child_stage) = parent_stage.child() else {
        bail!("the {parent_stage} stage has no next stage to derive");
    };
    let child = derive_stage_dataset(&manifest, LabelMap::for_stage(child_stage), |_| {
        Ok(Vec::new())
    })?;
    child
        .save_dir(output)
        .with_context(|| format!("cannot write '{}'", output.display()))?;
    Ok(BTreeMap::from([(
        child_stage.to_string(),
        child.records().len(),
    )]))
}

/// From nested frame ground truth: the vehicle dataset plus both derived
/// stages, each populated from the frames' own annotations.
fn derive_full_chain(input: &Path, output: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read '{}'", input.display()))?;
    let frames = parse_frames_jsonl(&text).with_context(|| format!("'{}'", input.display()))?;
    let by_stem: HashMap<String, &FrameGt> = frames
        .iter()
        .map(|f| (frame_stem(f.frame_id), f))
        .collect();

    let vehicle_records: Vec<DatasetRecord> = frames
        .iter()
        .map(|f| {
            DatasetRecord::new(
                format!("images/{}.png", frame_stem(f.frame_id)),
                f.dims,
                f.vehicles
                    .iter()
                    .map(|v| GroundTruthBox {
                        class: v.class,
                        bbox: v.bbox,
                    })
                    .collect(),
            )
        })
        .collect();
    let vehicles = DatasetManifest::new(LabelMap::vehicles(), vehicle_records)?;

    let plates = derive_stage_dataset(&vehicles, LabelMap::plate(), |ctx| {
        let f = by_stem[&stem_of(&ctx.record.image)];
        Ok(f.vehicles[ctx.instance]
            .plates
            .iter()
            .map(|p| GroundTruthBox {
                class: 0,
                bbox: p.bbox,
            })
            .collect())
    })?;

    let characters = derive_stage_dataset(&plates, LabelMap::characters(), |ctx| {
        let stem = stem_of(&ctx.record.image);
        let (frame, vehicle) = stem.rsplit_once('_').ok_or_else(|| annotation_err(&stem))?;
        let f = by_stem[frame];
        let v = &f.vehicles[vehicle.parse::<usize>().map_err(|_| annotation_err(&stem))?];
        Ok(v.plates[ctx.instance].chars.clone())
    })?;

    let mut written = BTreeMap::new();
    for (stage, manifest) in [
        (Stage::Vehicle, &vehicles),
        (Stage::Plate, &plates),
        (Stage::Character, &characters),
    ] {
        let dir = output.join(stage.to_string());
        manifest
            .save_dir(&dir)
            .with_context(|| format!("cannot write '{}'", dir.display()))?;
        written.insert(stage.to_string(), manifest.records().len());
    }
    Ok(written)
}

fn frame_stem(frame_id: u64) -> String {
    format!("frame{frame_id:06}")
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn annotation_err(stem: &str) -> alpr_core::annotations::AnnotationError {
    alpr_core::annotations::AnnotationError::Derive(format!(
        "derived image stem '{stem}' does not follow the frame_vehicle pattern"
    ))
}

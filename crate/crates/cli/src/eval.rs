//! `eval`: score per-image prediction files against a dataset.

use std::collections::HashSet;
use std::path::PathBuf;

use alpr_core::annotations::{parse_predictions, DatasetManifest};
use alpr_core::detector::Detection;
use alpr_core::evaluation::{
    average_precision, match_detections, mean_average_precision, prf_at_threshold,
    ApInterpolation, EvalCounts, EvalFrame, EvalReport,
};
use anyhow::{bail, Context, Result};
use clap::Args;

use crate::output;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory (labels.names plus index.json or images/ and labels/)
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Directory of prediction files, one {image stem}.txt per image
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Output file (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// IoU above which a detection can match a ground-truth box
    #[arg(long, value_name = "F", default_value_t = 0.5)]
    pub iou_thresh: f64,
    /// Confidence cutoff for the precision/recall/F1 operating point
    #[arg(long, value_name = "F", default_value_t = 0.5)]
    pub conf_thresh: f64,
    /// Average-precision interpolation
    #[arg(long, value_enum, default_value_t = InterpArg::Envelope)]
    pub interp: InterpArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum InterpArg {
    Envelope,
    ElevenPoint,
}

impl From<InterpArg> for ApInterpolation {
    fn from(arg: InterpArg) -> Self {
        match arg {
            InterpArg::Envelope => ApInterpolation::Envelope,
            InterpArg::ElevenPoint => ApInterpolation::ElevenPoint,
        }
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::load_dir(&args.input, None)
        .with_context(|| format!("dataset '{}'", args.input.display()))?;
    let labels = manifest.labels();

    let mut det_sets: Vec<Vec<Detection>> = Vec::new();
    let mut claimed: HashSet<PathBuf> = HashSet::new();
    for rec in manifest.records() {
        let path = args.predictions.join(format!("{}.txt", rec.stem()?));
        if !path.exists() {
            det_sets.push(Vec::new());
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read '{}'", path.display()))?;
        let dets = parse_predictions(&text, rec.dims, labels)
            .with_context(|| format!("predictions '{}'", path.display()))?;
        claimed.insert(path);
        det_sets.push(dets);
    }
    for entry in std::fs::read_dir(&args.predictions)
        .with_context(|| format!("cannot read '{}'", args.predictions.display()))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") && !claimed.contains(&path) {
            bail!("prediction file '{}' matches no dataset image", path.display());
        }
    }

    let frames: Vec<EvalFrame<'_>> = manifest
        .records()
        .iter()
        .zip(&det_sets)
        .map(|(rec, dets)| EvalFrame {
            detections: dets,
            ground_truth: &rec.boxes,
        })
        .collect();

    let interp = args.interp.into();
    let mut per_class_ap = std::collections::BTreeMap::new();
    let mut aps = Vec::new();
    for (idx, name) in labels.names().iter().enumerate() {
        let ap = average_precision(&frames, idx, args.iou_thresh, interp);
        if let Some(v) = ap {
            per_class_ap.insert(name.clone(), v);
        }
        aps.push(ap);
    }
    let map50 = mean_average_precision(&aps)?;
    let prf = prf_at_threshold(&frames, args.conf_thresh, args.iou_thresh);

    let mut counts = EvalCounts {
        images: manifest.records().len(),
        ground_truth: manifest.records().iter().map(|r| r.boxes.len()).sum(),
        detections: det_sets.iter().map(Vec::len).sum(),
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for frame in &frames {
        let kept: Vec<Detection> = frame
            .detections
            .iter()
            .filter(|d| d.confidence() >= args.conf_thresh)
            .cloned()
            .collect();
        let m = match_detections(&kept, frame.ground_truth, args.iou_thresh);
        counts.true_positives += m.true_positives;
        counts.false_positives += m.false_positives;
        counts.false_negatives += m.false_negatives;
    }

    let report = EvalReport {
        per_class_ap,
        map50,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        end_to_end: std::collections::BTreeMap::new(),
        counts,
        seeds: Vec::new(),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    output::emit(args.output.as_deref(), &text)
}

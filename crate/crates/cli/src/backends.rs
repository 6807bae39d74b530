//! Turns config backend specs into live detector stages.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use alpr_core::annotations::Stage;
use alpr_core::cascade::StageBackends;
use alpr_core::detector::{
    stage_seed, Detection, Detector, DetectorError, ExternalDetector, NoiseProfile, OracleDetector,
};
use alpr_core::geometry::FrameContext;
use alpr_core::synthetic::{stage_gt, FrameGt};
use anyhow::{bail, Result};
use image::imageops::FilterType;
use tempfile::TempDir;

use crate::config::{BackendSpec, StageBackendSpec};

pub fn build_backends(
    spec: &StageBackendSpec,
    frames: Option<&[FrameGt]>,
    noise: NoiseProfile,
) -> Result<StageBackends> {
    Ok(StageBackends {
        vehicle: build_stage(Stage::Vehicle, &spec.vehicle, frames, noise)?,
        plate: build_stage(Stage::Plate, &spec.plate, frames, noise)?,
        character: build_stage(Stage::Character, &spec.character, frames, noise)?,
    })
}

fn build_stage(
    stage: Stage,
    spec: &BackendSpec,
    frames: Option<&[FrameGt]>,
    noise: NoiseProfile,
) -> Result<Arc<dyn Detector>> {
    match spec {
        BackendSpec::Named(name) if name == "oracle" => {
            let Some(frames) = frames else {
                bail!(
                    "the {stage} backend is \"oracle\", which needs ground-truth \
                     frames (a .jsonl input), not an image directory"
                );
            };
            let per_stage = noise.with_seed(stage_seed(noise.seed(), stage));
            Ok(Arc::new(
                OracleDetector::new(stage.expected_classes(), per_stage)
                    .with_frames(stage_gt(frames, stage)),
            ))
        }
        BackendSpec::Named(other) => {
            bail!("unknown {stage} backend '{other}' (expected \"oracle\" or {{ command = [...] }})")
        }
        BackendSpec::Command { command } => {
            let external = ExternalDetector::spawn(stage.to_string(), command)?;
            Ok(Arc::new(MaterializingDetector::new(
                stage.to_string(),
                external,
            )?))
        }
    }
}

/// Renders the crop a derived frame describes into a real image file so a
/// file-based backend can see it; frames that already have a file pass
/// through untouched. The crop is recomputed from the original image by
/// replaying the frame's crop-and-resize chain.
pub struct MaterializingDetector<D> {
    name: String,
    inner: D,
    dir: TempDir,
    counter: AtomicU64,
}

impl<D> MaterializingDetector<D> {
    pub fn new(name: impl Into<String>, inner: D) -> std::io::Result<Self> {
        Ok(MaterializingDetector {
            name: name.into(),
            inner,
            dir: TempDir::new()?,
            counter: AtomicU64::new(0),
        })
    }
}

impl<D: Detector> Detector for MaterializingDetector<D> {
    fn detect(&self, frame: &FrameContext) -> Result<Vec<Detection>, DetectorError> {
        if frame.image().is_some() || frame.chain().is_empty() {
            return self.inner.detect(frame);
        }
        let root = frame
            .root_image()
            .ok_or_else(|| DetectorError::MissingImage {
                name: self.name.clone(),
            })?;
        let fail = |reason: String| DetectorError::Protocol {
            name: self.name.clone(),
            reason,
        };
        let mut img = image::open(root)
            .map_err(|e| fail(format!("cannot open '{}': {e}", root.display())))?;
        for step in frame.chain() {
            let b = step.region.region();
            let x = (b.xmin().round().max(0.0) as u32).min(img.width().saturating_sub(1));
            let y = (b.ymin().round().max(0.0) as u32).min(img.height().saturating_sub(1));
            let w = (b.width().round() as u32).clamp(1, img.width() - x);
            let h = (b.height().round() as u32).clamp(1, img.height() - y);
            img = img.crop_imm(x, y, w, h).resize_exact(
                step.resized_to.width(),
                step.resized_to.height(),
                FilterType::Triangle,
            );
        }
        let path = self.dir.path().join(format!(
            "{:06}_{:08}.png",
            frame.frame_id(),
            self.counter.fetch_add(1, Ordering::Relaxed)
        ));
        img.save(&path)
            .map_err(|e| fail(format!("cannot write crop '{}': {e}", path.display())))?;
        let staged = frame.clone().with_image(&path);
        let result = self.inner.detect(&staged);
        let _ = std::fs::remove_file(&path);
        result
    }

    fn serialized(&self) -> bool {
        self.inner.serialized()
    }
}

//! Toolkit for three-stage cascade plate recognition.
//!
//! The cascade runs a vehicle detector on the full camera frame, crops the
//! best vehicle and rescans the crop for a license plate, then crops the
//! plate and rescans it for characters, which are read out as the plate
//! string. Around that pipeline this crate provides the supporting pieces:
//!
//! - [`geometry`]: boxes, frames, crop/resize coordinate mapping, NMS
//! - [`annotations`]: label maps, annotation text files, dataset manifests
//! - [`detector`]: the backend trait, a seeded mock backend, a child-process backend
//! - [`cascade`]: the pipeline itself plus reference-box gating and toll lookup
//! - [`evaluation`]: box matching, AP/mAP, precision/recall/F1, end-to-end accuracy
//! - [`synthetic`]: deterministic synthetic scenes for exercising everything above
//!
//! No stage here runs a neural network. Backends are trait objects; the
//! bundled mock backend answers from ground truth under a configurable noise
//! model, which makes the whole cascade reproducible in tests.

pub mod annotations;
pub mod cascade;
pub mod detector;
pub mod evaluation;
pub mod geometry;
pub mod synthetic;

pub use annotations::{DatasetManifest, GroundTruthBox, LabelMap, Stage, StatsReport};
pub use cascade::{Pipeline, PipelineConfig, PipelineResult, PipelineStatus};
pub use detector::{Detection, Detector, NoiseProfile, OracleDetector};
pub use evaluation::EvalReport;
pub use geometry::{BBox, CropRegion, FrameContext, FrameDims};

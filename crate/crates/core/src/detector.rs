//! Detector backends.
//!
//! A backend is anything that can answer "what do you see in this frame"
//! with a list of [`Detection`]s. The cascade never cares how the answer is
//! produced; it talks to [`Detector`] trait objects. Two backends ship here:
//!
//! - [`OracleDetector`] answers from ground truth, corrupted by a seeded
//!   [`NoiseProfile`]. It is a pure function of its inputs and the frame id,
//!   so whole pipeline runs are reproducible bit for bit.
//! - [`ExternalDetector`] drives a child process over a line protocol, for
//!   plugging in a real model server without linking against it.
//!
//! Backends return raw detections. Confidence thresholding and NMS are the
//! caller's job.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{GroundTruthBox, Stage};
use crate::geometry::{BBox, FrameContext, FrameDims};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid noise profile: {0}")]
    InvalidNoise(String),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("backend '{name}' process I/O")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend '{name}': {reason}")]
    Protocol { name: String, reason: String },
    #[error("backend '{name}' closed its output stream")]
    Exited { name: String },
    #[error("backend '{name}' needs an on-disk image, but this frame has none")]
    MissingImage { name: String },
}

/// One detected box with its class index and confidence score in `[0, 1]`.
///
/// Serialises as `{"box": [xmin, ymin, xmax, ymax], "class": k, "conf": c}`,
/// which is also the wire format of the external backend protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionWire")]
pub struct Detection {
    #[serde(rename = "box")]
    bbox: BBox,
    class: usize,
    #[serde(rename = "conf")]
    confidence: f64,
}

#[derive(Deserialize)]
struct DetectionWire {
    #[serde(rename = "box")]
    bbox: BBox,
    class: usize,
    #[serde(rename = "conf")]
    confidence: f64,
}

impl TryFrom<DetectionWire> for Detection {
    type Error = String;
    fn try_from(w: DetectionWire) -> Result<Self, String> {
        Detection::new(w.bbox, w.class, w.confidence).map_err(|e| e.to_string())
    }
}

impl Detection {
    pub fn new(bbox: BBox, class: usize, confidence: f64) -> Result<Self, DetectorError> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(DetectorError::InvalidDetection(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            bbox,
            class,
            confidence,
        })
    }

    pub(crate) fn raw(bbox: BBox, class: usize, confidence: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&confidence));
        Detection {
            bbox,
            class,
            confidence,
        }
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Same detection with its box clamped into the frame.
    pub fn clipped_to(&self, dims: FrameDims) -> Detection {
        Detection {
            bbox: self.bbox.clip_to(dims),
            ..self.clone()
        }
    }
}

/// How the mock backend corrupts ground truth. All fields are validated at
/// construction: probabilities in `[0, 1]`, jitter and spurious rate finite
/// and non-negative, `0 <= confidence_min <= confidence_max <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseProfileWire")]
pub struct NoiseProfile {
    /// Probability that a ground-truth box goes undetected.
    drop_prob: f64,
    /// Mean number of false boxes per frame (Poisson distributed).
    spurious_rate: f64,
    /// Each corner coordinate moves by a uniform offset in `[-jitter, +jitter]`.
    jitter_px: f64,
    /// Probability that a detection reports a uniformly random other class.
    misclass_prob: f64,
    confidence_min: f64,
    confidence_max: f64,
    /// Base RNG seed; the per-frame stream is derived from `(seed, frame_id)`.
    seed: u64,
}

#[derive(Deserialize)]
#[serde(default)]
struct NoiseProfileWire {
    drop_prob: f64,
    spurious_rate: f64,
    jitter_px: f64,
    misclass_prob: f64,
    confidence_min: f64,
    confidence_max: f64,
    seed: u64,
}

impl Default for NoiseProfileWire {
    fn default() -> Self {
        NoiseProfileWire {
            drop_prob: 0.0,
            spurious_rate: 0.0,
            jitter_px: 0.0,
            misclass_prob: 0.0,
            confidence_min: 1.0,
            confidence_max: 1.0,
            seed: 0,
        }
    }
}

impl TryFrom<NoiseProfileWire> for NoiseProfile {
    type Error = String;
    fn try_from(w: NoiseProfileWire) -> Result<Self, String> {
        NoiseProfile::new(
            w.drop_prob,
            w.spurious_rate,
            w.jitter_px,
            w.misclass_prob,
            (w.confidence_min, w.confidence_max),
            w.seed,
        )
        .map_err(|e| e.to_string())
    }
}

impl Default for NoiseProfile {
    /// No corruption at all: every box detected verbatim with confidence 1.
    fn default() -> Self {
        NoiseProfile {
            drop_prob: 0.0,
            spurious_rate: 0.0,
            jitter_px: 0.0,
            misclass_prob: 0.0,
            confidence_min: 1.0,
            confidence_max: 1.0,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn new(
        drop_prob: f64,
        spurious_rate: f64,
        jitter_px: f64,
        misclass_prob: f64,
        confidence_range: (f64, f64),
        seed: u64,
    ) -> Result<Self, DetectorError> {
        let prob = |name: &str, v: f64| -> Result<(), DetectorError> {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DetectorError::InvalidNoise(format!(
                    "{name} {v} outside [0, 1]"
                )));
            }
            Ok(())
        };
        prob("drop_prob", drop_prob)?;
        prob("misclass_prob", misclass_prob)?;
        let (lo, hi) = confidence_range;
        prob("confidence_min", lo)?;
        prob("confidence_max", hi)?;
        if lo > hi {
            return Err(DetectorError::InvalidNoise(format!(
                "confidence range [{lo}, {hi}] is inverted"
            )));
        }
        if !jitter_px.is_finite() || jitter_px < 0.0 {
            return Err(DetectorError::InvalidNoise(format!(
                "jitter_px {jitter_px} must be finite and non-negative"
            )));
        }
        if !spurious_rate.is_finite() || spurious_rate < 0.0 {
            return Err(DetectorError::InvalidNoise(format!(
                "spurious_rate {spurious_rate} must be finite and non-negative"
            )));
        }
        Ok(NoiseProfile {
            drop_prob,
            spurious_rate,
            jitter_px,
            misclass_prob,
            confidence_min: lo,
            confidence_max: hi,
            seed,
        })
    }

    pub fn drop_prob(&self) -> f64 {
        self.drop_prob
    }

    pub fn spurious_rate(&self) -> f64 {
        self.spurious_rate
    }

    pub fn jitter_px(&self) -> f64 {
        self.jitter_px
    }

    pub fn misclass_prob(&self) -> f64 {
        self.misclass_prob
    }

    pub fn confidence_range(&self) -> (f64, f64) {
        (self.confidence_min, self.confidence_max)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// RNG stream for one frame. Deriving it from `(seed, frame_id)` instead of
/// drawing frames from one shared stream keeps every frame's noise
/// independent of processing order, so parallel runs match sequential ones.
fn frame_rng(seed: u64, frame_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&frame_id.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derives a per-stage seed from a base seed. Stages sharing one base seed
/// would otherwise replay identical noise streams (dropping the same frames
/// at every stage, for instance).
pub fn stage_seed(base: u64, stage: Stage) -> u64 {
    let idx = match stage {
        Stage::Vehicle => 0u64,
        Stage::Plate => 1,
        Stage::Character => 2,
    };
    base.wrapping_add(idx.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Turns ground truth for one frame into noisy detections, deterministically.
///
/// Per ground-truth box, in order: a drop decision, four corner jitters
/// (clamped into the frame and re-ordered so the box stays valid), an
/// optional class flip to a uniformly random *other* class (when more than
/// one class exists), and a confidence drawn from the profile's range. After
/// the real boxes, `Poisson(spurious_rate)` false boxes with random geometry
/// and class are appended. Identical arguments always produce identical
/// output; the stream depends only on `(profile seed, frame_id)`.
pub fn oracle_detect(
    gt: &[GroundTruthBox],
    dims: FrameDims,
    num_classes: usize,
    noise: &NoiseProfile,
    frame_id: u64,
) -> Vec<Detection> {
    debug_assert!(num_classes >= 1);
    let mut rng = frame_rng(noise.seed, frame_id);
    let w = dims.width() as f64;
    let h = dims.height() as f64;
    let jitter = Uniform::new_inclusive(-noise.jitter_px, noise.jitter_px)
        .expect("validated jitter range");
    let conf = Uniform::new_inclusive(noise.confidence_min, noise.confidence_max)
        .expect("validated confidence range");
    let mut out = Vec::new();

    for g in gt {
        if rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        let xa = g.bbox.xmin() + jitter.sample(&mut rng);
        let ya = g.bbox.ymin() + jitter.sample(&mut rng);
        let xb = g.bbox.xmax() + jitter.sample(&mut rng);
        let yb = g.bbox.ymax() + jitter.sample(&mut rng);
        let bbox = BBox::raw(
            xa.min(xb).clamp(0.0, w),
            ya.min(yb).clamp(0.0, h),
            xa.max(xb).clamp(0.0, w),
            ya.max(yb).clamp(0.0, h),
        );
        let class = if num_classes > 1 && rng.random::<f64>() < noise.misclass_prob {
            let k = rng.random_range(0..num_classes - 1);
            if k >= g.class {
                k + 1
            } else {
                k
            }
        } else {
            g.class
        };
        out.push(Detection::raw(bbox, class, conf.sample(&mut rng)));
    }

    if noise.spurious_rate > 0.0 {
        let poisson = Poisson::new(noise.spurious_rate).expect("validated spurious rate");
        let count = poisson.sample(&mut rng) as usize;
        for _ in 0..count {
            let xa = rng.random::<f64>() * w;
            let xb = rng.random::<f64>() * w;
            let ya = rng.random::<f64>() * h;
            let yb = rng.random::<f64>() * h;
            let bbox = BBox::raw(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb));
            let class = rng.random_range(0..num_classes);
            out.push(Detection::raw(bbox, class, conf.sample(&mut rng)));
        }
    }
    out
}

/// A detection backend. Implementations must tolerate any frame in the
/// cascade (original or derived crop) and return boxes inside that frame's
/// bounds. Callers apply confidence thresholding and NMS afterwards.
pub trait Detector: Send + Sync {
    fn detect(&self, frame: &FrameContext) -> Result<Vec<Detection>, DetectorError>;

    /// Whether calls must not overlap. Schedulers fall back to sequential
    /// frame processing when any backend in a pipeline says so.
    fn serialized(&self) -> bool {
        false
    }
}

/// Mock backend answering from per-frame ground truth held in original-frame
/// coordinates. On each request the ground truth is projected through the
/// frame's crop chain (so partially cropped boxes arrive clipped, and boxes
/// outside the crop disappear) and then corrupted by [`oracle_detect`].
pub struct OracleDetector {
    gt: HashMap<u64, Vec<GroundTruthBox>>,
    num_classes: usize,
    noise: NoiseProfile,
}

impl OracleDetector {
    pub fn new(num_classes: usize, noise: NoiseProfile) -> Self {
        OracleDetector {
            gt: HashMap::new(),
            num_classes,
            noise,
        }
    }

    pub fn insert_frame(&mut self, frame_id: u64, boxes: Vec<GroundTruthBox>) {
        self.gt.insert(frame_id, boxes);
    }

    pub fn with_frames<I>(mut self, frames: I) -> Self
    where
        I: IntoIterator<Item = (u64, Vec<GroundTruthBox>)>,
    {
        self.gt.extend(frames);
        self
    }

    pub fn noise(&self) -> &NoiseProfile {
        &self.noise
    }
}

impl Detector for OracleDetector {
    fn detect(&self, frame: &FrameContext) -> Result<Vec<Detection>, DetectorError> {
        let projected: Vec<GroundTruthBox> = self
            .gt
            .get(&frame.frame_id())
            .into_iter()
            .flatten()
            .filter_map(|g| {
                frame
                    .project_from_original(&g.bbox)
                    .map(|bbox| GroundTruthBox {
                        class: g.class,
                        bbox,
                    })
            })
            .collect();
        Ok(oracle_detect(
            &projected,
            frame.dims(),
            self.num_classes,
            &self.noise,
            frame.frame_id(),
        ))
    }
}

/// Wrapper counting how often a backend is asked anything. Lets tests pin
/// down the cascade's frame-skipping behaviour.
pub struct CountingDetector<D> {
    inner: D,
    calls: AtomicU64,
}

impl<D: Detector> CountingDetector<D> {
    pub fn new(inner: D) -> Self {
        CountingDetector {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<D: Detector> Detector for CountingDetector<D> {
    fn detect(&self, frame: &FrameContext) -> Result<Vec<Detection>, DetectorError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.detect(frame)
    }

    fn serialized(&self) -> bool {
        self.inner.serialized()
    }
}

/// Backend that hands frames to a long-lived child process.
///
/// Protocol: one request line carrying the frame's image path on the child's
/// stdin, one JSON reply line `{"detections": [{"box": [x1, y1, x2, y2],
/// "class": k, "conf": c}, ...]}` on its stdout. The child is expected to
/// stay alive between requests; access is serialized internally.
pub struct ExternalDetector {
    name: String,
    io: Mutex<ExternalIo>,
}

struct ExternalIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ExternalIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Deserialize)]
struct DetectionsMsg {
    detections: Vec<Detection>,
}

impl ExternalDetector {
    pub fn spawn(name: impl Into<String>, command: &[String]) -> Result<Self, DetectorError> {
        let name = name.into();
        let (program, args) = command.split_first().ok_or_else(|| DetectorError::Protocol {
            name: name.clone(),
            reason: "empty command".into(),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|source| DetectorError::Io {
                name: name.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(ExternalDetector {
            name,
            io: Mutex::new(ExternalIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Detector for ExternalDetector {
    fn detect(&self, frame: &FrameContext) -> Result<Vec<Detection>, DetectorError> {
        let path = frame.image().ok_or_else(|| DetectorError::MissingImage {
            name: self.name.clone(),
        })?;
        let mut io = self.io.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        let io = &mut *io;
        writeln!(io.stdin, "{}", path.display()).map_err(|source| DetectorError::Io {
            name: self.name.clone(),
            source,
        })?;
        io.stdin.flush().map_err(|source| DetectorError::Io {
            name: self.name.clone(),
            source,
        })?;
        let mut line = String::new();
        let n = io
            .stdout
            .read_line(&mut line)
            .map_err(|source| DetectorError::Io {
                name: self.name.clone(),
                source,
            })?;
        if n == 0 {
            return Err(DetectorError::Exited {
                name: self.name.clone(),
            });
        }
        let msg: DetectionsMsg =
            serde_json::from_str(line.trim()).map_err(|e| DetectorError::Protocol {
                name: self.name.clone(),
                reason: format!("bad reply line: {e}"),
            })?;
        // The contract says in-bounds; clamp anyway so one sloppy backend
        // cannot feed impossible crops to the next stage.
        Ok(msg
            .detections
            .into_iter()
            .map(|d| d.clipped_to(frame.dims()))
            .collect())
    }

    fn serialized(&self) -> bool {
        true
    }
}

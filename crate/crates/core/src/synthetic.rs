//! Deterministic synthetic scenes with fully nested ground truth.
//!
//! Each generated frame holds one vehicle, its plate, and the plate's
//! characters, at three coordinate levels mirroring the cascade: vehicle
//! boxes in frame coordinates, plate boxes in vehicle-crop coordinates,
//! character boxes in plate-crop coordinates. Character layout always puts
//! letters left of digits, so the plate-assembly rule reconstructs the
//! string exactly and a noiseless oracle run must score 100%.
//!
//! Scenes serialize as JSON lines, one frame per line, which is also the
//! frame-list input format of the command-line tools.

use std::collections::BTreeMap;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{GroundTruthBox, Stage, CHARACTER_CLASSES, VEHICLE_CLASSES};
use crate::cascade::{Pipeline, PipelineError, PipelineResult, StageBackends};
use crate::detector::{stage_seed, NoiseProfile, OracleDetector};
use crate::evaluation::EndToEndTruth;
use crate::geometry::{BBox, FrameContext, FrameDims};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("line {line}: {reason}")]
    Frame { line: usize, reason: String },
}

/// A plate and its characters. The plate box lives in vehicle-crop
/// coordinates; character boxes live in plate-crop coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateGt {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub chars: Vec<GroundTruthBox>,
}

/// A vehicle in frame coordinates with its nested plates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleGt {
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub plates: Vec<PlateGt>,
}

/// One frame of nested ground truth plus the expected end-to-end answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGt {
    #[serde(rename = "frame")]
    pub frame_id: u64,
    pub dims: FrameDims,
    pub truth: EndToEndTruth,
    pub vehicles: Vec<VehicleGt>,
}

impl FrameGt {
    pub fn context(&self) -> FrameContext {
        FrameContext::original(self.frame_id, self.dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    /// Frames generated per vehicle type; total frames = 6x this.
    pub frames_per_type: usize,
    pub dims: FrameDims,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames_per_type: 10,
            dims: FrameDims::new(1200, 1600).expect("static dims"),
            seed: 7,
        }
    }
}

fn char_class(ch: char) -> usize {
    if ch.is_ascii_digit() {
        ch as usize - '0' as usize
    } else {
        10 + ch as usize - 'A' as usize
    }
}

/// Generates `6 * frames_per_type` frames, cycling through the vehicle
/// types, one vehicle per frame. Pure function of the config: the same
/// seed always produces the same scene, byte for byte.
pub fn generate_frames(config: &SceneConfig) -> Vec<FrameGt> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fw = config.dims.width() as i64;
    let fh = config.dims.height() as i64;
    let mut frames = Vec::with_capacity(config.frames_per_type * VEHICLE_CLASSES.len());

    for i in 0..config.frames_per_type * VEHICLE_CLASSES.len() {
        let class = i % VEHICLE_CLASSES.len();
        let vw = 380 + class as i64 * 30 + rng.random_range(0..=40);
        let vh = 460 + class as i64 * 30 + rng.random_range(0..=40);
        let vx = rng.random_range(50..=fw - vw - 50);
        let vy = rng.random_range(50..=fh - vh - 50);

        let pw = rng.random_range(160..=219);
        let ph = 40i64;
        let px = rng.random_range(10..=vw - pw - 10);
        let py = rng.random_range(vh / 2..=vh - ph - 10);

        let n_letters = rng.random_range(2..=3);
        let n_digits = rng.random_range(2..=4);
        let mut plate_string = String::new();
        let mut chars = Vec::new();
        let mut cursor = 8i64;
        for k in 0..n_letters + n_digits {
            let ch = if k < n_letters {
                (b'A' + rng.random_range(0..26)) as char
            } else {
                (b'0' + rng.random_range(0..10)) as char
            };
            let cw = rng.random_range(14..=16);
            chars.push(GroundTruthBox {
                class: char_class(ch),
                bbox: BBox::new(cursor as f64, 8.0, (cursor + cw) as f64, 32.0)
                    .expect("generated char box"),
            });
            plate_string.push(ch);
            cursor += cw + rng.random_range(3..=5);
        }

        frames.push(FrameGt {
            frame_id: i as u64,
            dims: config.dims,
            truth: EndToEndTruth {
                vehicle_class: VEHICLE_CLASSES[class].to_string(),
                plate_string,
            },
            vehicles: vec![VehicleGt {
                class,
                bbox: BBox::new(vx as f64, vy as f64, (vx + vw) as f64, (vy + vh) as f64)
                    .expect("generated vehicle box"),
                plates: vec![PlateGt {
                    bbox: BBox::new(px as f64, py as f64, (px + pw) as f64, (py + ph) as f64)
                        .expect("generated plate box"),
                    chars,
                }],
            }],
        });
    }
    frames
}

fn check_frame(f: &FrameGt) -> Result<(), String> {
    let frame_box = f.dims.as_box();
    for (vi, v) in f.vehicles.iter().enumerate() {
        if v.class >= VEHICLE_CLASSES.len() {
            return Err(format!("vehicle {vi}: class {} out of range", v.class));
        }
        if !frame_box.contains(&v.bbox) {
            return Err(format!("vehicle {vi} outside the {} frame", f.dims));
        }
        let vehicle_extent = BBox::new(0.0, 0.0, v.bbox.width(), v.bbox.height())
            .expect("valid box has a valid extent");
        for (pi, p) in v.plates.iter().enumerate() {
            if !vehicle_extent.contains(&p.bbox) {
                return Err(format!("vehicle {vi} plate {pi} outside the vehicle crop"));
            }
            let plate_extent = BBox::new(0.0, 0.0, p.bbox.width(), p.bbox.height())
                .expect("valid box has a valid extent");
            for (ci, c) in p.chars.iter().enumerate() {
                if c.class >= CHARACTER_CLASSES.len() {
                    return Err(format!(
                        "vehicle {vi} plate {pi} char {ci}: class {} out of range",
                        c.class
                    ));
                }
                if !plate_extent.contains(&c.bbox) {
                    return Err(format!(
                        "vehicle {vi} plate {pi} char {ci} outside the plate crop"
                    ));
                }
            }
        }
    }
    Ok(())
}

/// One frame per line, as JSON.
pub fn write_frames_jsonl(frames: &[FrameGt]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// Parses and validates a frame list: per-line JSON, nesting containment,
/// class ranges, and frame-id uniqueness. Errors carry 1-based line
/// numbers.
pub fn parse_frames_jsonl(text: &str) -> Result<Vec<FrameGt>, SyntheticError> {
    let mut frames = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let frame: FrameGt = serde_json::from_str(raw).map_err(|e| SyntheticError::Frame {
            line,
            reason: e.to_string(),
        })?;
        check_frame(&frame).map_err(|reason| SyntheticError::Frame { line, reason })?;
        if !seen.insert(frame.frame_id) {
            return Err(SyntheticError::Frame {
                line,
                reason: format!("duplicate frame id {}", frame.frame_id),
            });
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Flattens the nested ground truth into per-frame boxes for one stage, in
/// original-frame coordinates (plate and character boxes are translated by
/// their enclosing crop origins). This is the shape the oracle detector
/// wants: it re-projects into whatever crop the cascade asks about.
pub fn stage_gt(frames: &[FrameGt], stage: Stage) -> HashMap<u64, Vec<GroundTruthBox>> {
    let mut out: HashMap<u64, Vec<GroundTruthBox>> = HashMap::new();
    for f in frames {
        let boxes = out.entry(f.frame_id).or_default();
        for v in &f.vehicles {
            match stage {
                Stage::Vehicle => boxes.push(GroundTruthBox {
                    class: v.class,
                    bbox: v.bbox,
                }),
                Stage::Plate => {
                    for p in &v.plates {
                        boxes.push(GroundTruthBox {
                            class: 0,
                            bbox: p.bbox.translate(v.bbox.xmin(), v.bbox.ymin()),
                        });
                    }
                }
                Stage::Character => {
                    for p in &v.plates {
                        let ox = v.bbox.xmin() + p.bbox.xmin();
                        let oy = v.bbox.ymin() + p.bbox.ymin();
                        for c in &p.chars {
                            boxes.push(GroundTruthBox {
                                class: c.class,
                                bbox: c.bbox.translate(ox, oy),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Oracle backend for one stage, with exactly the given noise profile.
pub fn oracle_backend(frames: &[FrameGt], stage: Stage, noise: NoiseProfile) -> OracleDetector {
    OracleDetector::new(stage.expected_classes(), noise).with_frames(stage_gt(frames, stage))
}

/// Oracle backends for all three stages sharing one profile. Each stage
/// gets its own derived seed so the stages do not replay the same noise
/// stream on the same frame.
pub fn oracle_backends(frames: &[FrameGt], noise: NoiseProfile) -> StageBackends {
    let per_stage = |stage: Stage| {
        std::sync::Arc::new(oracle_backend(
            frames,
            stage,
            noise.with_seed(stage_seed(noise.seed(), stage)),
        ))
    };
    StageBackends {
        vehicle: per_stage(Stage::Vehicle),
        plate: per_stage(Stage::Plate),
        character: per_stage(Stage::Character),
    }
}

pub fn truths(frames: &[FrameGt]) -> Vec<EndToEndTruth> {
    frames.iter().map(|f| f.truth.clone()).collect()
}

/// Runs every frame through the pipeline in order.
pub fn run_frames(
    pipeline: &Pipeline,
    frames: &[FrameGt],
) -> Result<Vec<PipelineResult>, PipelineError> {
    frames.iter().map(|f| pipeline.run(&f.context())).collect()
}

/// A flat tariff covering every vehicle class, for tests and simulations
/// that do not care about amounts.
pub fn uniform_tariff(amount: f64) -> BTreeMap<String, f64> {
    VEHICLE_CLASSES
        .iter()
        .map(|c| (c.to_string(), amount))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::LabelMap;
    use crate::cascade::{PipelineConfig, PipelineStatus, StageLabels};
    use crate::evaluation::end_to_end_accuracy;

    #[test]
    fn generation_is_deterministic() {
        let config = SceneConfig::default();
        assert_eq!(generate_frames(&config), generate_frames(&config));
        let other = SceneConfig { seed: 8, ..config };
        assert_ne!(generate_frames(&config), generate_frames(&other));
    }

    #[test]
    fn scene_shape_and_nesting() {
        let frames = generate_frames(&SceneConfig::default());
        assert_eq!(frames.len(), 60);
        let mut per_type = [0usize; 6];
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.frame_id, i as u64);
            assert_eq!(f.vehicles.len(), 1);
            per_type[f.vehicles[0].class] += 1;
            check_frame(f).unwrap();

            let s = &f.truth.plate_string;
            assert!((4..=7).contains(&s.len()), "plate '{s}'");
            let split = s.find(|c: char| c.is_ascii_digit()).unwrap();
            assert!(s[..split].chars().all(|c| c.is_ascii_uppercase()));
            assert!(s[split..].chars().all(|c| c.is_ascii_digit()));

            // The layout puts characters strictly left to right, letters
            // first, which is what makes the assembly rule invertible.
            let chars = &f.vehicles[0].plates[0].chars;
            assert_eq!(chars.len(), s.len());
            for w in chars.windows(2) {
                assert!(w[0].bbox.xmax() < w[1].bbox.xmin());
            }
        }
        assert_eq!(per_type, [10; 6]);
    }

    #[test]
    fn character_classes_match_the_label_map() {
        let labels = LabelMap::characters();
        for (ch, want) in [('0', "0"), ('9', "9"), ('A', "A"), ('Z', "Z")] {
            assert_eq!(labels.name(char_class(ch)), Some(want));
        }
    }

    #[test]
    fn stage_gt_translates_into_original_coordinates() {
        let frame = FrameGt {
            frame_id: 3,
            dims: FrameDims::new(1000, 1000).unwrap(),
            truth: EndToEndTruth {
                vehicle_class: "car".into(),
                plate_string: "A1".into(),
            },
            vehicles: vec![VehicleGt {
                class: 1,
                bbox: BBox::new(100.0, 200.0, 500.0, 600.0).unwrap(),
                plates: vec![PlateGt {
                    bbox: BBox::new(50.0, 300.0, 250.0, 350.0).unwrap(),
                    chars: vec![
                        GroundTruthBox {
                            class: 10,
                            bbox: BBox::new(10.0, 10.0, 25.0, 40.0).unwrap(),
                        },
                        GroundTruthBox {
                            class: 1,
                            bbox: BBox::new(30.0, 10.0, 45.0, 40.0).unwrap(),
                        },
                    ],
                }],
            }],
        };
        let frames = [frame];

        let v = stage_gt(&frames, Stage::Vehicle);
        assert_eq!(v[&3][0].bbox, BBox::new(100.0, 200.0, 500.0, 600.0).unwrap());

        let p = stage_gt(&frames, Stage::Plate);
        assert_eq!(p[&3][0].class, 0);
        assert_eq!(p[&3][0].bbox, BBox::new(150.0, 500.0, 350.0, 550.0).unwrap());

        let c = stage_gt(&frames, Stage::Character);
        assert_eq!(c[&3].len(), 2);
        assert_eq!(c[&3][0].bbox, BBox::new(160.0, 510.0, 175.0, 540.0).unwrap());
        assert_eq!(c[&3][1].bbox, BBox::new(180.0, 510.0, 195.0, 540.0).unwrap());
    }

    #[test]
    fn jsonl_round_trips_and_validates() {
        let frames = generate_frames(&SceneConfig {
            frames_per_type: 2,
            ..SceneConfig::default()
        });
        let text = write_frames_jsonl(&frames);
        assert_eq!(parse_frames_jsonl(&text).unwrap(), frames);

        let garbled = text.replacen("{\"frame\"", "{\"frame", 1);
        match parse_frames_jsonl(&garbled) {
            Err(SyntheticError::Frame { line: 1, .. }) => {}
            other => panic!("expected a line-1 error, got {other:?}"),
        }

        // Duplicate a line: the second copy trips the id check.
        let first = text.lines().next().unwrap();
        let duplicated = format!("{first}\n{text}");
        match parse_frames_jsonl(&duplicated) {
            Err(SyntheticError::Frame { line: 2, reason }) => {
                assert!(reason.contains("duplicate"), "{reason}");
            }
            other => panic!("expected a duplicate-id error, got {other:?}"),
        }

        // A plate poking out of its vehicle crop is caught on parse.
        let bad = r#"{"frame":0,"dims":[100,100],"truth":{"vehicle_class":"car","plate_string":"A1"},"vehicles":[{"class":1,"box":[10,10,50,50],"plates":[{"box":[30,30,90,39],"chars":[]}]}]}"#;
        match parse_frames_jsonl(bad) {
            Err(SyntheticError::Frame { line: 1, reason }) => {
                assert!(reason.contains("plate"), "{reason}");
            }
            other => panic!("expected a containment error, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_oracles_recognize_every_frame() {
        let frames = generate_frames(&SceneConfig {
            frames_per_type: 2,
            ..SceneConfig::default()
        });
        let pipeline = Pipeline::new(
            PipelineConfig {
                tariff: uniform_tariff(10.0),
                ..PipelineConfig::default()
            },
            StageLabels::canonical(),
            oracle_backends(&frames, NoiseProfile::noiseless()),
        )
        .unwrap();
        let results = run_frames(&pipeline, &frames).unwrap();
        for (r, f) in results.iter().zip(&frames) {
            assert_eq!(r.status, PipelineStatus::Recognized, "frame {}", f.frame_id);
            assert_eq!(r.plate_string, f.truth.plate_string, "frame {}", f.frame_id);
        }
        let acc = end_to_end_accuracy(&results, &truths(&frames)).unwrap();
        assert_eq!(acc.len(), 6);
        for (ty, a) in acc {
            assert_eq!(a.ratio(), 1.0, "type {ty}");
        }
    }
}

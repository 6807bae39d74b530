//! The three-stage recognition cascade.
//!
//! Stage 1 finds vehicles in the full frame, keeps those overlapping the
//! configured reference region, and picks the most confident one. Its box
//! is cropped out, resized to the stage input size, and handed to stage 2,
//! which localizes the plate the same way. Stage 3 reads characters off the
//! plate crop and the detections are assembled into the plate string. A
//! stage that finds nothing ends the frame early with a status naming it;
//! later backends are never called for that frame.
//!
//! Each stage's raw detections go through the same cleanup: out-of-range
//! classes dropped, confidence threshold applied, boxes clipped to the
//! frame (degenerate ones dropped), then per-class NMS.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{LabelMap, Stage};
use crate::detector::{Detection, Detector, DetectorError};
use crate::geometry::{
    intersection_area, nms, BBox, CropRegion, FrameContext, FrameDims, GeometryError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("{stage} backend failed")]
    Backend {
        stage: Stage,
        #[source]
        source: DetectorError,
    },
    #[error("no tariff entry for vehicle class '{class}'")]
    MissingTariff { class: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How far a frame got. Anything short of `Recognized` names the first
/// stage that came up empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStatus {
    Recognized,
    NoVehicle,
    NoPlate,
    NoCharacters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Detections below this confidence are discarded at every stage.
    pub conf_threshold: f64,
    /// IoU above which a lower-confidence same-class detection is
    /// suppressed.
    pub nms_threshold: f64,
    /// Only vehicles overlapping this region (in the coordinates of the
    /// frame given to the pipeline) are considered. `None` disables the
    /// filter.
    #[serde(rename = "ref_box")]
    pub reference_box: Option<BBox>,
    /// Crops are resized to this size before stage-2/3 detection.
    pub stage_input: FrameDims,
    /// Vehicle class name to currency amount. Must cover every vehicle
    /// class.
    pub tariff: BTreeMap<String, f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            conf_threshold: 0.5,
            nms_threshold: 0.3,
            reference_box: None,
            stage_input: FrameDims::new(416, 416).expect("static dims"),
            tariff: BTreeMap::new(),
        }
    }
}

/// Label maps for the three stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLabels {
    pub vehicle: LabelMap,
    pub plate: LabelMap,
    pub character: LabelMap,
}

impl StageLabels {
    pub fn canonical() -> Self {
        StageLabels {
            vehicle: LabelMap::vehicles(),
            plate: LabelMap::plate(),
            character: LabelMap::characters(),
        }
    }
}

/// One detector per stage. `Arc` because a pipeline is typically shared
/// across worker threads while backends may also be shared between
/// pipelines.
#[derive(Clone)]
pub struct StageBackends {
    pub vehicle: Arc<dyn Detector>,
    pub plate: Arc<dyn Detector>,
    pub character: Arc<dyn Detector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDetection {
    pub class: String,
    pub conf: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterDetection {
    pub class: String,
    pub conf: f64,
    /// In plate-frame (stage-3 input) coordinates.
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// The same box lifted to the coordinates of the frame the pipeline ran
    /// on.
    pub box_original: BBox,
}

/// Outcome for one frame. On `Recognized` every field is populated and the
/// plate string is non-empty; earlier statuses leave the later fields
/// empty. Empty fields are omitted from the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub status: PipelineStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<LabeledDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plate: Option<LabeledDetection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub characters: Vec<CharacterDetection>,
    pub plate_string: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toll: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
}

impl PipelineResult {
    pub fn empty(status: PipelineStatus) -> Self {
        PipelineResult {
            status,
            vehicle: None,
            plate: None,
            characters: Vec::new(),
            plate_string: String::new(),
            toll: None,
            timings_ms: BTreeMap::new(),
        }
    }

    /// Strips the timing map, the only nondeterministic part of a result.
    pub fn without_timings(mut self) -> Self {
        self.timings_ms.clear();
        self
    }
}

/// Keeps exactly the detections whose overlap with the reference region has
/// positive area; merely touching the reference edge does not count.
/// Relative order is preserved.
pub fn filter_by_reference(dets: &[Detection], reference: &BBox) -> Vec<Detection> {
    dets.iter()
        .filter(|d| intersection_area(&d.bbox(), reference) > 0.0)
        .cloned()
        .collect()
}

/// The detection to forward to the next stage: highest confidence, ties
/// broken by larger box area, then by ascending box corners. `None` on an
/// empty slate means the frame is skipped.
pub fn select_primary(dets: &[Detection]) -> Option<&Detection> {
    dets.iter().max_by(|a, b| {
        a.confidence()
            .total_cmp(&b.confidence())
            .then_with(|| a.bbox().area().total_cmp(&b.bbox().area()))
            .then_with(|| b.bbox().cmp_corners(&a.bbox()))
    })
}

/// Builds the plate string: letters and digits are separated, each group
/// sorted by ascending xmin, and the letters emitted before the digits.
/// Every detection contributes exactly one character; nothing is
/// deduplicated here (NMS is the only suppression in the cascade).
pub fn assemble_plate(chars: &[Detection], labels: &LabelMap) -> Result<String, PipelineError> {
    if labels.stage() != Stage::Character {
        return Err(PipelineError::Config(format!(
            "plate assembly needs character labels, got the {} stage",
            labels.stage()
        )));
    }
    let mut letters: Vec<(&Detection, char)> = Vec::new();
    let mut digits: Vec<(&Detection, char)> = Vec::new();
    for d in chars {
        let name = labels.name(d.class()).ok_or_else(|| {
            PipelineError::Config(format!(
                "character class {} out of range for {} classes",
                d.class(),
                labels.len()
            ))
        })?;
        let ch = name.chars().next().expect("validated non-empty name");
        if ch.is_ascii_digit() {
            digits.push((d, ch));
        } else {
            letters.push((d, ch));
        }
    }
    // Sort on the full corner tuple plus class, not xmin alone, so equal
    // xmin values cannot make the output depend on input order.
    let key = |d: &Detection| {
        (
            d.bbox().xmin(),
            d.bbox().ymin(),
            d.bbox().xmax(),
            d.bbox().ymax(),
            d.class(),
        )
    };
    let by_xmin = |a: &(&Detection, char), b: &(&Detection, char)| {
        let (ka, kb) = (key(a.0), key(b.0));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
            .then(ka.4.cmp(&kb.4))
    };
    letters.sort_by(by_xmin);
    digits.sort_by(by_xmin);
    Ok(letters
        .iter()
        .chain(digits.iter())
        .map(|(_, ch)| ch)
        .collect())
}

/// Tariff table lookup for the recognized vehicle class.
pub fn compute_toll(class_name: &str, tariff: &BTreeMap<String, f64>) -> Result<f64, PipelineError> {
    tariff
        .get(class_name)
        .copied()
        .ok_or_else(|| PipelineError::MissingTariff {
            class: class_name.to_string(),
        })
}

fn clean(
    dets: Vec<Detection>,
    dims: FrameDims,
    num_classes: usize,
    conf_thresh: f64,
    nms_thresh: f64,
) -> Vec<Detection> {
    let kept: Vec<Detection> = dets
        .into_iter()
        .filter(|d| d.class() < num_classes)
        .filter(|d| d.confidence() >= conf_thresh)
        .map(|d| d.clipped_to(dims))
        .filter(|d| d.bbox().area() > 0.0)
        .collect();
    nms(&kept, nms_thresh)
}

/// The assembled cascade: configuration, per-stage label maps, per-stage
/// backends. Immutable after construction and safe to share across threads
/// (subject to each backend's own concurrency declaration).
pub struct Pipeline {
    config: PipelineConfig,
    labels: StageLabels,
    backends: StageBackends,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        labels: StageLabels,
        backends: StageBackends,
    ) -> Result<Self, PipelineError> {
        for (name, v) in [
            ("conf_threshold", config.conf_threshold),
            ("nms_threshold", config.nms_threshold),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!(
                    "{name} {v} outside [0, 1]"
                )));
            }
        }
        for (stage, map) in [
            (Stage::Vehicle, &labels.vehicle),
            (Stage::Plate, &labels.plate),
            (Stage::Character, &labels.character),
        ] {
            if map.stage() != stage {
                return Err(PipelineError::Config(format!(
                    "{stage} slot holds a {} label map",
                    map.stage()
                )));
            }
        }
        for name in labels.vehicle.names() {
            if !config.tariff.contains_key(name) {
                return Err(PipelineError::MissingTariff { class: name.clone() });
            }
        }
        Ok(Pipeline {
            config,
            labels,
            backends,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn labels(&self) -> &StageLabels {
        &self.labels
    }

    /// True when any backend forbids concurrent calls; callers must then
    /// process frames sequentially.
    pub fn serialized(&self) -> bool {
        self.backends.vehicle.serialized()
            || self.backends.plate.serialized()
            || self.backends.character.serialized()
    }

    pub fn run(&self, frame: &FrameContext) -> Result<PipelineResult, PipelineError> {
        let cfg = &self.config;
        let mut result = PipelineResult::empty(PipelineStatus::NoVehicle);

        let t = Instant::now();
        let dets = self
            .backends
            .vehicle
            .detect(frame)
            .map_err(|source| PipelineError::Backend {
                stage: Stage::Vehicle,
                source,
            })?;
        let mut dets = clean(
            dets,
            frame.dims(),
            self.labels.vehicle.len(),
            cfg.conf_threshold,
            cfg.nms_threshold,
        );
        if let Some(reference) = &cfg.reference_box {
            dets = filter_by_reference(&dets, reference);
        }
        result
            .timings_ms
            .insert("vehicle".into(), t.elapsed().as_secs_f64() * 1e3);

        let Some(vehicle) = select_primary(&dets).cloned() else {
            return Ok(result);
        };
        result.vehicle = Some(LabeledDetection {
            class: self
                .labels
                .vehicle
                .name(vehicle.class())
                .expect("cleaned class in range")
                .to_string(),
            conf: vehicle.confidence(),
            bbox: vehicle.bbox(),
        });
        result.status = PipelineStatus::NoPlate;

        let vehicle_crop = CropRegion::new(vehicle.bbox(), frame.dims())?;
        let plate_frame = frame.child(vehicle_crop, cfg.stage_input)?;
        let t = Instant::now();
        let dets = self
            .backends
            .plate
            .detect(&plate_frame)
            .map_err(|source| PipelineError::Backend {
                stage: Stage::Plate,
                source,
            })?;
        let dets = clean(
            dets,
            plate_frame.dims(),
            self.labels.plate.len(),
            cfg.conf_threshold,
            cfg.nms_threshold,
        );
        result
            .timings_ms
            .insert("plate".into(), t.elapsed().as_secs_f64() * 1e3);

        let Some(plate) = select_primary(&dets).cloned() else {
            return Ok(result);
        };
        result.plate = Some(LabeledDetection {
            class: self
                .labels
                .plate
                .name(plate.class())
                .expect("cleaned class in range")
                .to_string(),
            conf: plate.confidence(),
            bbox: plate_frame.lift_to_original(&plate.bbox()),
        });
        result.status = PipelineStatus::NoCharacters;

        let plate_crop = CropRegion::new(plate.bbox(), plate_frame.dims())?;
        let char_frame = plate_frame.child(plate_crop, cfg.stage_input)?;
        let t = Instant::now();
        let dets = self
            .backends
            .character
            .detect(&char_frame)
            .map_err(|source| PipelineError::Backend {
                stage: Stage::Character,
                source,
            })?;
        let dets = clean(
            dets,
            char_frame.dims(),
            self.labels.character.len(),
            cfg.conf_threshold,
            cfg.nms_threshold,
        );
        result
            .timings_ms
            .insert("character".into(), t.elapsed().as_secs_f64() * 1e3);

        if dets.is_empty() {
            return Ok(result);
        }
        result.characters = dets
            .iter()
            .map(|d| CharacterDetection {
                class: self
                    .labels
                    .character
                    .name(d.class())
                    .expect("cleaned class in range")
                    .to_string(),
                conf: d.confidence(),
                bbox: d.bbox(),
                box_original: char_frame.lift_to_original(&d.bbox()),
            })
            .collect();
        result.plate_string = assemble_plate(&dets, &self.labels.character)?;
        result.toll = Some(compute_toll(
            &result.vehicle.as_ref().expect("set above").class,
            &cfg.tariff,
        )?);
        result.status = PipelineStatus::Recognized;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::GroundTruthBox;
    use crate::detector::{NoiseProfile, OracleDetector};

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BBox, class: usize, conf: f64) -> Detection {
        Detection::new(b, class, conf).unwrap()
    }

    fn full_tariff() -> BTreeMap<String, f64> {
        [
            ("bus", 250.0),
            ("car", 75.0),
            ("carry-van", 120.0),
            ("truck-type1", 300.0),
            ("truck-type2", 400.0),
            ("van", 100.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    #[test]
    fn reference_filter_requires_positive_overlap_area() {
        let reference = bx(100.0, 100.0, 300.0, 300.0);
        let dets = vec![
            det(bx(250.0, 250.0, 400.0, 400.0), 0, 0.9),
            det(bx(500.0, 500.0, 600.0, 600.0), 1, 0.8),
            det(bx(100.0, 100.0, 300.0, 300.0), 2, 0.7),
            // Shares the x = 300 edge only: zero area, dropped.
            det(bx(300.0, 100.0, 400.0, 200.0), 3, 0.95),
        ];
        let kept = filter_by_reference(&dets, &reference);
        let classes: Vec<usize> = kept.iter().map(|d| d.class()).collect();
        assert_eq!(classes, vec![0, 2]);
    }

    #[test]
    fn primary_selection_prefers_confidence_then_area_then_corners() {
        let a = det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9);
        let b = det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.7);
        assert_eq!(select_primary(&[b.clone(), a.clone()]), Some(&a));
        assert_eq!(select_primary(std::slice::from_ref(&a)), Some(&a));
        assert_eq!(select_primary(&[]), None);

        let big = det(bx(0.0, 0.0, 100.0, 50.0), 0, 0.8);
        let small = det(bx(0.0, 0.0, 100.0, 40.0), 0, 0.8);
        assert_eq!(select_primary(&[small.clone(), big.clone()]), Some(&big));

        let left = det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.8);
        let right = det(bx(5.0, 0.0, 15.0, 10.0), 0, 0.8);
        assert_eq!(select_primary(&[right.clone(), left.clone()]), Some(&left));
    }

    #[test]
    fn plate_assembly_letters_then_digits_by_xmin() {
        let labels = LabelMap::characters();
        let a = labels.index_of("A").unwrap();
        let b = labels.index_of("B").unwrap();
        let one = labels.index_of("1").unwrap();
        let two = labels.index_of("2").unwrap();
        let chars = vec![
            det(bx(30.0, 0.0, 38.0, 12.0), a, 0.9),
            det(bx(10.0, 0.0, 18.0, 12.0), one, 0.9),
            det(bx(5.0, 0.0, 13.0, 12.0), b, 0.9),
            det(bx(50.0, 0.0, 58.0, 12.0), two, 0.9),
        ];
        assert_eq!(assemble_plate(&chars, &labels).unwrap(), "BA12");

        let mut permuted = chars.clone();
        permuted.reverse();
        assert_eq!(assemble_plate(&permuted, &labels).unwrap(), "BA12");

        assert_eq!(assemble_plate(&chars[..1], &labels).unwrap(), "A");
        assert_eq!(assemble_plate(&[], &labels).unwrap(), "");
    }

    #[test]
    fn plate_assembly_rejects_wrong_labels() {
        let chars = vec![det(bx(0.0, 0.0, 8.0, 12.0), 0, 0.9)];
        assert!(assemble_plate(&chars, &LabelMap::vehicles()).is_err());
        let bad = vec![det(bx(0.0, 0.0, 8.0, 12.0), 36, 0.9)];
        assert!(assemble_plate(&bad, &LabelMap::characters()).is_err());
    }

    #[test]
    fn toll_is_a_pure_lookup() {
        let tariff = full_tariff();
        assert_eq!(compute_toll("car", &tariff).unwrap(), 75.0);
        assert_eq!(compute_toll("car", &tariff).unwrap(), 75.0);
        match compute_toll("tractor", &tariff) {
            Err(PipelineError::MissingTariff { class }) => assert_eq!(class, "tractor"),
            other => panic!("expected a missing-tariff error, got {other:?}"),
        }
    }

    #[test]
    fn config_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.conf_threshold, 0.5);
        assert_eq!(cfg.nms_threshold, 0.3);
        assert_eq!(cfg.reference_box, None);
        assert_eq!(cfg.stage_input, FrameDims::new(416, 416).unwrap());
        assert!(cfg.tariff.is_empty());
    }

    fn oracle_backends(
        vehicle: Vec<GroundTruthBox>,
        plate: Vec<GroundTruthBox>,
        chars: Vec<GroundTruthBox>,
    ) -> StageBackends {
        let quiet = NoiseProfile::noiseless();
        StageBackends {
            vehicle: Arc::new(OracleDetector::new(6, quiet).with_frames([(0u64, vehicle)])),
            plate: Arc::new(OracleDetector::new(1, quiet).with_frames([(0u64, plate)])),
            character: Arc::new(OracleDetector::new(36, quiet).with_frames([(0u64, chars)])),
        }
    }

    #[test]
    fn pipeline_construction_is_validated() {
        let backends = oracle_backends(vec![], vec![], vec![]);
        let mut cfg = PipelineConfig {
            tariff: full_tariff(),
            ..PipelineConfig::default()
        };
        assert!(Pipeline::new(cfg.clone(), StageLabels::canonical(), backends.clone()).is_ok());

        cfg.conf_threshold = 1.5;
        assert!(Pipeline::new(cfg.clone(), StageLabels::canonical(), backends.clone()).is_err());
        cfg.conf_threshold = 0.5;

        cfg.tariff.remove("van");
        match Pipeline::new(cfg.clone(), StageLabels::canonical(), backends.clone()).err() {
            Some(PipelineError::MissingTariff { class }) => assert_eq!(class, "van"),
            other => panic!("expected a missing-tariff error, got {other:?}"),
        }
        cfg.tariff = full_tariff();

        let swapped = StageLabels {
            vehicle: LabelMap::plate(),
            plate: LabelMap::plate(),
            character: LabelMap::characters(),
        };
        assert!(Pipeline::new(cfg, swapped, backends).is_err());
    }

    /// One consistent frame run end to end through noiseless oracles: the
    /// plate string must come back verbatim and every reported box must
    /// nest inside its parent.
    #[test]
    fn noiseless_run_recognizes_the_fixture() {
        let labels = LabelMap::characters();
        let gt = |class: usize, b: BBox| GroundTruthBox { class, bbox: b };
        let vehicle_box = bx(100.0, 100.0, 500.0, 420.0);
        let vehicle = vec![gt(1, vehicle_box)];
        let plate_box = bx(200.0, 300.0, 360.0, 340.0);
        let plate = vec![gt(0, plate_box)];
        let chars = vec![
            gt(labels.index_of("B").unwrap(), bx(210.0, 305.0, 230.0, 335.0)),
            gt(labels.index_of("A").unwrap(), bx(235.0, 305.0, 255.0, 335.0)),
            gt(labels.index_of("1").unwrap(), bx(260.0, 305.0, 280.0, 335.0)),
            gt(labels.index_of("2").unwrap(), bx(285.0, 305.0, 305.0, 335.0)),
        ];
        let pipeline = Pipeline::new(
            PipelineConfig {
                tariff: full_tariff(),
                ..PipelineConfig::default()
            },
            StageLabels::canonical(),
            oracle_backends(vehicle, plate, chars.clone()),
        )
        .unwrap();

        let frame = FrameContext::original(0, FrameDims::new(1000, 1000).unwrap());
        let result = pipeline.run(&frame).unwrap();
        assert_eq!(result.status, PipelineStatus::Recognized);
        let v = result.vehicle.as_ref().unwrap();
        assert_eq!(v.class, "car");
        assert_eq!(v.bbox, vehicle_box);
        assert_eq!(result.plate_string, "BA12");
        assert_eq!(result.toll, Some(75.0));
        assert_eq!(result.characters.len(), 4);

        // The lifted plate box sits inside the vehicle box, and every
        // character's original-frame box inside the plate box.
        let p = result.plate.as_ref().unwrap();
        assert!(
            (intersection_area(&p.bbox, &vehicle_box) - p.bbox.area()).abs() < 1e-9,
            "plate {:?} not nested in vehicle {:?}",
            p.bbox,
            vehicle_box
        );
        for (c, g) in result.characters.iter().zip(&chars) {
            assert!(p.bbox.contains(&c.box_original));
            for (got, want) in [
                (c.box_original.xmin(), g.bbox.xmin()),
                (c.box_original.ymin(), g.bbox.ymin()),
                (c.box_original.xmax(), g.bbox.xmax()),
                (c.box_original.ymax(), g.bbox.ymax()),
            ] {
                assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            }
        }
        assert_eq!(result.timings_ms.len(), 3);
        assert!(result.timings_ms.contains_key("vehicle"));
        assert!(result.timings_ms.contains_key("plate"));
        assert!(result.timings_ms.contains_key("character"));
    }

    #[test]
    fn result_json_shape() {
        let skipped = PipelineResult::empty(PipelineStatus::NoVehicle);
        assert_eq!(
            serde_json::to_string(&skipped).unwrap(),
            r#"{"status":"no-vehicle","plate_string":""}"#
        );

        let full = PipelineResult {
            status: PipelineStatus::Recognized,
            vehicle: Some(LabeledDetection {
                class: "car".into(),
                conf: 1.0,
                bbox: bx(0.0, 0.0, 10.0, 10.0),
            }),
            plate: Some(LabeledDetection {
                class: "plate".into(),
                conf: 1.0,
                bbox: bx(2.0, 2.0, 8.0, 4.0),
            }),
            characters: vec![CharacterDetection {
                class: "A".into(),
                conf: 1.0,
                bbox: bx(0.0, 0.0, 5.0, 5.0),
                box_original: bx(2.0, 2.0, 3.0, 3.0),
            }],
            plate_string: "A".into(),
            toll: Some(75.0),
            timings_ms: [("vehicle".to_string(), 1.5)].into_iter().collect(),
        };
        let json = serde_json::to_string(&full).unwrap();
        for (earlier, later) in [
            ("\"status\"", "\"vehicle\""),
            ("\"vehicle\"", "\"plate\""),
            ("\"plate\"", "\"characters\""),
            ("\"characters\"", "\"plate_string\""),
            ("\"plate_string\"", "\"toll\""),
            ("\"toll\"", "\"timings_ms\""),
        ] {
            let a = json.find(earlier).unwrap();
            let b = json.find(later).unwrap();
            assert!(a < b, "{earlier} not before {later} in {json}");
        }
        assert!(json.contains(r#""vehicle":{"class":"car","conf":1.0,"box":[0.0,0.0,10.0,10.0]}"#));
        let back: PipelineResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, full);
    }
}

//! Ground-truth plumbing: label maps, darknet-format annotation files,
//! dataset manifests, and stage-dataset derivation.
//!
//! A dataset is a directory: `images/`, `labels/` (one text file per image,
//! lines of `class cx cy w h` with normalized coordinates), `labels.names`
//! (one class name per line, index = line number), and an optional
//! `index.json` carrying frame dimensions, split metadata, and crop
//! provenance. With an index present the images themselves are never opened;
//! without one the `images/` directory is scanned and each file is probed
//! for its dimensions.
//!
//! The three cascade stages each get their own dataset. A child dataset is
//! derived from its parent by cropping out every ground-truth instance:
//! one child record per parent box, with the crop region retained so child
//! coordinates can be lifted back into the parent frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, CropRegion, FrameDims};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: class {class} out of range for {classes} classes")]
    ClassRange {
        line: usize,
        class: usize,
        classes: usize,
    },
    #[error("line {line}: coordinate {value} outside [0, 1]")]
    CoordRange { line: usize, value: f64 },
    #[error("invalid label map: {0}")]
    Labels(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error("cannot derive stage dataset: {0}")]
    Derive(String),
    #[error("cannot access '{}'", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Json { path: PathBuf, reason: String },
    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
    #[error("in '{}'", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<AnnotationError>,
    },
}

/// Position in the cascade. Each stage detects one kind of object and its
/// dataset is cropped out of the previous stage's ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vehicle,
    Plate,
    Character,
}

impl Stage {
    pub fn child(self) -> Option<Stage> {
        match self {
            Stage::Vehicle => Some(Stage::Plate),
            Stage::Plate => Some(Stage::Character),
            Stage::Character => None,
        }
    }

    pub fn expected_classes(self) -> usize {
        match self {
            Stage::Vehicle => VEHICLE_CLASSES.len(),
            Stage::Plate => 1,
            Stage::Character => CHARACTER_CLASSES.len(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Vehicle => "vehicle",
            Stage::Plate => "plate",
            Stage::Character => "character",
        })
    }
}

/// The six vehicle types, in canonical order. A vehicle label file may list
/// them in any order (file order decides the class indices) but must contain
/// exactly this set.
pub const VEHICLE_CLASSES: [&str; 6] = [
    "bus",
    "car",
    "carry-van",
    "truck-type1",
    "truck-type2",
    "van",
];

/// The 36 plate characters: digits first, then letters. Character label
/// files must list them in exactly this order.
pub const CHARACTER_CLASSES: [&str; 36] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "A", "B", "C", "D", "E", "F", "G", "H", "I",
    "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z",
];

/// Ordered class names for one stage. Index = position in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    stage: Stage,
    names: Vec<String>,
}

impl LabelMap {
    pub fn vehicles() -> Self {
        LabelMap {
            stage: Stage::Vehicle,
            names: VEHICLE_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn plate() -> Self {
        LabelMap {
            stage: Stage::Plate,
            names: vec!["plate".to_string()],
        }
    }

    pub fn characters() -> Self {
        LabelMap {
            stage: Stage::Character,
            names: CHARACTER_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Vehicle => Self::vehicles(),
            Stage::Plate => Self::plate(),
            Stage::Character => Self::characters(),
        }
    }

    /// Parses a `labels.names` body: one name per line, blank lines ignored.
    /// With `stage: None` the stage is inferred from the names; either way
    /// the names are checked against the stage's canonical set.
    pub fn from_names_text(text: &str, stage: Option<Stage>) -> Result<Self, AnnotationError> {
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if names.is_empty() {
            return Err(AnnotationError::Labels("no class names".into()));
        }
        let unique: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != names.len() {
            return Err(AnnotationError::Labels("duplicate class names".into()));
        }
        let stage = match stage {
            Some(s) => s,
            None => Self::infer_stage(&names)?,
        };
        Self::validate(stage, &names)?;
        Ok(LabelMap { stage, names })
    }

    fn infer_stage(names: &[String]) -> Result<Stage, AnnotationError> {
        if names.len() == 1 {
            return Ok(Stage::Plate);
        }
        let set: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if set == VEHICLE_CLASSES.iter().copied().collect() {
            return Ok(Stage::Vehicle);
        }
        if names.iter().map(String::as_str).eq(CHARACTER_CLASSES) {
            return Ok(Stage::Character);
        }
        Err(AnnotationError::Labels(format!(
            "cannot infer a stage from {} names",
            names.len()
        )))
    }

    fn validate(stage: Stage, names: &[String]) -> Result<(), AnnotationError> {
        match stage {
            Stage::Vehicle => {
                let set: BTreeSet<&str> = names.iter().map(String::as_str).collect();
                let want: BTreeSet<&str> = VEHICLE_CLASSES.iter().copied().collect();
                if set != want {
                    return Err(AnnotationError::Labels(format!(
                        "vehicle classes must be exactly {{{}}} in any order",
                        VEHICLE_CLASSES.join(", ")
                    )));
                }
            }
            Stage::Plate => {
                if names.len() != 1 {
                    return Err(AnnotationError::Labels(format!(
                        "plate stage needs exactly 1 class, got {}",
                        names.len()
                    )));
                }
            }
            Stage::Character => {
                if !names.iter().map(String::as_str).eq(CHARACTER_CLASSES) {
                    return Err(AnnotationError::Labels(
                        "character classes must be the digits 0-9 then A-Z, in order".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Inverse of [`from_names_text`](Self::from_names_text).
    pub fn names_text(&self) -> String {
        let mut out = self.names.join("\n");
        out.push('\n');
        out
    }
}

/// One annotated object: a class index into the stage's label map and a box
/// in absolute pixel coordinates of its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Parses annotation lines of `class cx cy w h` (center form, normalized to
/// `[0, 1]`) into absolute corner boxes, clipped to the frame. Blank lines
/// are skipped; box order follows line order. Errors carry 1-based line
/// numbers.
pub fn parse_annotation(
    text: &str,
    dims: FrameDims,
    labels: &LabelMap,
) -> Result<Vec<GroundTruthBox>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(AnnotationError::Parse {
                line,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let class = parse_class(fields[0], line, labels.len())?;
        let bbox = parse_center_box(&fields[1..5], line, dims)?;
        out.push(GroundTruthBox { class, bbox });
    }
    Ok(out)
}

/// Like [`parse_annotation`] but for prediction dumps whose lines carry a
/// confidence after the class: `class conf cx cy w h`.
pub fn parse_predictions(
    text: &str,
    dims: FrameDims,
    labels: &LabelMap,
) -> Result<Vec<crate::detector::Detection>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(AnnotationError::Parse {
                line,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let class = parse_class(fields[0], line, labels.len())?;
        let conf: f64 = fields[1].parse().map_err(|_| AnnotationError::Parse {
            line,
            reason: format!("bad confidence '{}'", fields[1]),
        })?;
        let bbox = parse_center_box(&fields[2..6], line, dims)?;
        let det = crate::detector::Detection::new(bbox, class, conf).map_err(|e| {
            AnnotationError::Parse {
                line,
                reason: e.to_string(),
            }
        })?;
        out.push(det);
    }
    Ok(out)
}

fn parse_class(field: &str, line: usize, classes: usize) -> Result<usize, AnnotationError> {
    let class: usize = field.parse().map_err(|_| AnnotationError::Parse {
        line,
        reason: format!("bad class id '{field}'"),
    })?;
    if class >= classes {
        return Err(AnnotationError::ClassRange {
            line,
            class,
            classes,
        });
    }
    Ok(class)
}

fn parse_center_box(fields: &[&str], line: usize, dims: FrameDims) -> Result<BBox, AnnotationError> {
    let mut v = [0f64; 4];
    for (slot, field) in v.iter_mut().zip(fields) {
        let value: f64 = field.parse().map_err(|_| AnnotationError::Parse {
            line,
            reason: format!("bad coordinate '{field}'"),
        })?;
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(AnnotationError::CoordRange { line, value });
        }
        *slot = value;
    }
    let [cx, cy, w, h] = v;
    let fw = dims.width() as f64;
    let fh = dims.height() as f64;
    let bbox = BBox::raw(
        (cx - w / 2.0) * fw,
        (cy - h / 2.0) * fh,
        (cx + w / 2.0) * fw,
        (cy + h / 2.0) * fh,
    );
    Ok(bbox.clip_to(dims))
}

/// Inverse of [`parse_annotation`]: normalized center form, six decimals,
/// one line per box, no trailing newline (the empty list is the empty
/// string). Boxes must lie inside the frame.
pub fn write_annotation(
    boxes: &[GroundTruthBox],
    dims: FrameDims,
) -> Result<String, AnnotationError> {
    let fw = dims.width() as f64;
    let fh = dims.height() as f64;
    let frame = dims.as_box();
    let mut lines = Vec::with_capacity(boxes.len());
    for (i, g) in boxes.iter().enumerate() {
        if !frame.contains(&g.bbox) {
            return Err(AnnotationError::Record(format!(
                "box {i} extends outside the {dims} frame"
            )));
        }
        let cx = (g.bbox.xmin() + g.bbox.xmax()) / 2.0 / fw;
        let cy = (g.bbox.ymin() + g.bbox.ymax()) / 2.0 / fh;
        let w = g.bbox.width() / fw;
        let h = g.bbox.height() / fh;
        lines.push(format!(
            "{} {:.6} {:.6} {:.6} {:.6}",
            g.class, cx, cy, w, h
        ));
    }
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where a derived record's frame came from: which parent image, which
/// ground-truth instance, and the crop rectangle in parent coordinates.
/// Keeping this around is what lets child boxes be lifted back into the
/// parent frame later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSource {
    pub parent_image: PathBuf,
    pub instance: usize,
    #[serde(rename = "box")]
    pub region: BBox,
    pub parent_dims: FrameDims,
}

/// One image with its annotations. `boxes` is not serialized; on disk the
/// boxes live in `labels/{stem}.txt` next to the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image: PathBuf,
    pub dims: FrameDims,
    #[serde(skip)]
    pub boxes: Vec<GroundTruthBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<CropSource>,
}

impl DatasetRecord {
    pub fn new(image: impl Into<PathBuf>, dims: FrameDims, boxes: Vec<GroundTruthBox>) -> Self {
        DatasetRecord {
            image: image.into(),
            dims,
            boxes,
            source: None,
        }
    }

    /// The image's file stem, which names its label file and must be
    /// unique within a manifest.
    pub fn stem(&self) -> Result<String, AnnotationError> {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| {
                AnnotationError::Record(format!(
                    "image path '{}' has no file stem",
                    self.image.display()
                ))
            })
    }
}

/// Instance counts per class name, plus totals. The per-class counts always
/// cover every class in the label map, zeros included, and sum to
/// `instances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub classes: BTreeMap<String, usize>,
    pub images: usize,
    pub instances: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    records: Vec<DatasetRecord>,
}

/// A stage dataset: one label map and a list of annotated records, with
/// optional split provenance. Construction validates class ranges, box
/// containment, and image-stem uniqueness (label files are keyed by stem).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    labels: LabelMap,
    records: Vec<DatasetRecord>,
    seed: Option<u64>,
    split: Option<Split>,
}

impl DatasetManifest {
    pub fn new(labels: LabelMap, records: Vec<DatasetRecord>) -> Result<Self, AnnotationError> {
        let mut stems = BTreeSet::new();
        for r in &records {
            let stem = r.stem()?;
            if !stems.insert(stem.clone()) {
                return Err(AnnotationError::Record(format!(
                    "duplicate image stem '{stem}'"
                )));
            }
            let frame = r.dims.as_box();
            for (i, g) in r.boxes.iter().enumerate() {
                if g.class >= labels.len() {
                    return Err(AnnotationError::Record(format!(
                        "'{}' box {i}: class {} out of range for {} classes",
                        r.image.display(),
                        g.class,
                        labels.len()
                    )));
                }
                if !frame.contains(&g.bbox) {
                    return Err(AnnotationError::Record(format!(
                        "'{}' box {i} extends outside the {} frame",
                        r.image.display(),
                        r.dims
                    )));
                }
            }
        }
        Ok(DatasetManifest {
            labels,
            records,
            seed: None,
            split: None,
        })
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn split(&self) -> Option<Split> {
        self.split
    }

    pub fn stats(&self) -> StatsReport {
        let mut classes: BTreeMap<String, usize> = self
            .labels
            .names()
            .iter()
            .map(|n| (n.clone(), 0))
            .collect();
        let mut instances = 0;
        for r in &self.records {
            for g in &r.boxes {
                let name = self.labels.name(g.class).expect("validated class index");
                *classes.get_mut(name).expect("name present") += 1;
                instances += 1;
            }
        }
        StatsReport {
            classes,
            images: self.records.len(),
            instances,
        }
    }

    /// Seeded random 80/20 split. Record order within each half follows the
    /// original manifest, only membership is random; the same seed always
    /// yields the same split. The seed and split tag are recorded on both
    /// halves.
    pub fn split_train_test(&self, seed: u64) -> (DatasetManifest, DatasetManifest) {
        let n = self.records.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (n as f64 * 0.8).round() as usize;
        let train_set: BTreeSet<usize> = idx[..n_train].iter().copied().collect();
        let pick = |keep: &dyn Fn(usize) -> bool, split: Split| DatasetManifest {
            labels: self.labels.clone(),
            records: self
                .records
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, r)| r.clone())
                .collect(),
            seed: Some(seed),
            split: Some(split),
        };
        (
            pick(&|i| train_set.contains(&i), Split::Train),
            pick(&|i| !train_set.contains(&i), Split::Test),
        )
    }

    /// Loads a dataset directory. `labels.names` is required. If
    /// `index.json` exists, records (and their dimensions) come from it and
    /// no image file is touched; otherwise `images/` is scanned in sorted
    /// order and each image is probed for its dimensions. Boxes are read
    /// from `labels/{stem}.txt`; a missing label file means an unannotated
    /// image, not an error.
    pub fn load_dir(dir: &Path, stage: Option<Stage>) -> Result<Self, AnnotationError> {
        let names_path = dir.join("labels.names");
        let names_text = read_file(&names_path)?;
        let labels = LabelMap::from_names_text(&names_text, stage)?;

        let index_path = dir.join("index.json");
        let (mut records, seed, split) = if index_path.exists() {
            let text = read_file(&index_path)?;
            let index: IndexFile =
                serde_json::from_str(&text).map_err(|e| AnnotationError::Json {
                    path: index_path.clone(),
                    reason: e.to_string(),
                })?;
            (index.records, index.seed, index.split)
        } else {
            (scan_images(dir)?, None, None)
        };

        for r in &mut records {
            let label_path = dir.join("labels").join(format!("{}.txt", r.stem()?));
            if label_path.exists() {
                let text = read_file(&label_path)?;
                r.boxes = parse_annotation(&text, r.dims, &labels).map_err(|e| {
                    AnnotationError::InFile {
                        path: label_path.clone(),
                        source: Box::new(e),
                    }
                })?;
            }
        }

        let mut manifest = DatasetManifest::new(labels, records)?;
        manifest.seed = seed;
        manifest.split = split;
        Ok(manifest)
    }

    /// Writes `labels.names`, one `labels/{stem}.txt` per record, and
    /// `index.json`. Image files are never written; `images/` paths are
    /// recorded as given.
    pub fn save_dir(&self, dir: &Path) -> Result<(), AnnotationError> {
        let labels_dir = dir.join("labels");
        std::fs::create_dir_all(&labels_dir).map_err(|source| AnnotationError::Io {
            path: labels_dir.clone(),
            source,
        })?;
        write_file(&dir.join("labels.names"), &self.labels.names_text())?;
        for r in &self.records {
            let mut text = write_annotation(&r.boxes, r.dims)?;
            if !text.is_empty() {
                text.push('\n');
            }
            write_file(&labels_dir.join(format!("{}.txt", r.stem()?)), &text)?;
        }
        let index = IndexFile {
            seed: self.seed,
            split: self.split,
            records: self.records.clone(),
        };
        let mut json = serde_json::to_string_pretty(&index).expect("index serializes");
        json.push('\n');
        write_file(&dir.join("index.json"), &json)
    }
}

fn read_file(path: &Path) -> Result<String, AnnotationError> {
    std::fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), AnnotationError> {
    std::fs::write(path, contents).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn scan_images(dir: &Path) -> Result<Vec<DatasetRecord>, AnnotationError> {
    let images_dir = dir.join("images");
    if !images_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&images_dir)
        .map_err(|source| AnnotationError::Io {
            path: images_dir.clone(),
            source,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| {
                    let e = e.to_string_lossy().to_ascii_lowercase();
                    IMAGE_EXTENSIONS.contains(&e.as_str())
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let (w, h) = image::image_dimensions(&path).map_err(|e| AnnotationError::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let dims = FrameDims::new(w, h).map_err(|e| AnnotationError::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let name = path.file_name().expect("scanned file has a name");
        records.push(DatasetRecord::new(
            Path::new("images").join(name),
            dims,
            Vec::new(),
        ));
    }
    Ok(records)
}

/// Everything the child ground-truth source gets to see when a parent
/// instance is cropped out: the parent record, the instance index, the crop
/// region, and the child frame size. Child boxes must be returned in child
/// (crop) coordinates.
pub struct DeriveContext<'a> {
    pub record: &'a DatasetRecord,
    pub instance: usize,
    pub parent_box: &'a GroundTruthBox,
    pub crop: CropRegion,
    pub child_dims: FrameDims,
}

/// Derives the next stage's dataset: one child record per parent
/// ground-truth instance, the child frame being the instance's crop at
/// native resolution. `child_boxes` supplies each child's ground truth (an
/// empty list is fine for yet-unannotated data). Split metadata carries
/// over; crop provenance is recorded per record.
pub fn derive_stage_dataset<F>(
    manifest: &DatasetManifest,
    child_labels: LabelMap,
    mut child_boxes: F,
) -> Result<DatasetManifest, AnnotationError>
where
    F: FnMut(&DeriveContext<'_>) -> Result<Vec<GroundTruthBox>, AnnotationError>,
{
    let parent_stage = manifest.labels().stage();
    let child_stage = parent_stage.child().ok_or_else(|| {
        AnnotationError::Derive(format!("the {parent_stage} stage has no child stage"))
    })?;
    if child_labels.stage() != child_stage {
        return Err(AnnotationError::Derive(format!(
            "child of the {parent_stage} stage is {child_stage}, got a {} label map",
            child_labels.stage()
        )));
    }

    let mut records = Vec::new();
    for r in manifest.records() {
        let stem = r.stem()?;
        let ext = r
            .image
            .extension()
            .map(|e| format!(".{}", e.to_string_lossy()))
            .unwrap_or_default();
        for (j, g) in r.boxes.iter().enumerate() {
            let at = |what: &str| {
                format!("'{}' instance {j}: {what}", r.image.display())
            };
            let crop = CropRegion::new(g.bbox.clip_to(r.dims), r.dims)
                .map_err(|e| AnnotationError::Derive(at(&e.to_string())))?;
            let child_dims = crop.extent_dims();
            let ctx = DeriveContext {
                record: r,
                instance: j,
                parent_box: g,
                crop,
                child_dims,
            };
            let boxes = child_boxes(&ctx)?;
            let child_frame = child_dims.as_box();
            for (k, c) in boxes.iter().enumerate() {
                if c.class >= child_labels.len() {
                    return Err(AnnotationError::Derive(at(&format!(
                        "child box {k}: class {} out of range for {} classes",
                        c.class,
                        child_labels.len()
                    ))));
                }
                if !child_frame.contains(&c.bbox) {
                    return Err(AnnotationError::Derive(at(&format!(
                        "child box {k} exceeds the {child_dims} crop"
                    ))));
                }
            }
            records.push(DatasetRecord {
                image: Path::new("images").join(format!("{stem}_{j:02}{ext}")),
                dims: child_dims,
                boxes,
                source: Some(CropSource {
                    parent_image: r.image.clone(),
                    instance: j,
                    region: crop.region(),
                    parent_dims: r.dims,
                }),
            });
        }
    }

    let mut out = DatasetManifest::new(child_labels, records)?;
    out.seed = manifest.seed;
    out.split = manifest.split;
    Ok(out)
}

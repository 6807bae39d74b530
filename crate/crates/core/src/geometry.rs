//! Axis-aligned box geometry shared by every pipeline stage.
//!
//! All coordinate arithmetic is continuous (sub-pixel). An image of width
//! `w` and height `h` spans `[0, w] x [0, h]`; a box is the closed rectangle
//! `[xmin, xmax] x [ymin, ymax]` inside it. Rounding to whole pixels happens
//! only when a crop is materialised as its own frame
//! ([`CropRegion::extent_dims`]), never while mapping boxes between frames.

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::detector::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{xmin}, {ymin}, {xmax}, {ymax}]: {reason}")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        reason: &'static str,
    },
    #[error("invalid frame dimensions {width}x{height}: both sides must be at least 1")]
    InvalidDims { width: u32, height: u32 },
    #[error("crop [{xmin}, {ymin}, {xmax}, {ymax}] does not fit inside its {parent} parent frame")]
    CropOutsideParent {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        parent: FrameDims,
    },
    #[error("crop has zero area")]
    EmptyCrop,
    #[error("aspect ratio {0}:{1} is invalid: both terms must be positive")]
    InvalidAspect(u32, u32),
    #[error("crop expects a {expected} parent but the frame is {found}")]
    ChainMismatch { expected: FrameDims, found: FrameDims },
}

/// Closed axis-aligned rectangle in continuous pixel coordinates.
///
/// Invariants: all coordinates finite, `xmin <= xmax`, `ymin <= ymax`.
/// Zero-width or zero-height boxes are valid; they have zero area and zero
/// IoU with everything. Serialises as the 4-element array
/// `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(GeometryError::InvalidBox {
                xmin,
                ymin,
                xmax,
                ymax,
                reason: "coordinates must be finite",
            });
        }
        if xmin > xmax || ymin > ymax {
            return Err(GeometryError::InvalidBox {
                xmin,
                ymin,
                xmax,
                ymax,
                reason: "min corner must not exceed max corner",
            });
        }
        Ok(BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Internal constructor for coordinates already known to satisfy the invariants.
    pub(crate) fn raw(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        debug_assert!(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite());
        debug_assert!(xmin <= xmax && ymin <= ymax);
        BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Clamps every coordinate into `[0, w] x [0, h]`. A box entirely outside
    /// the frame collapses onto the nearest edge with zero area.
    pub fn clip_to(&self, dims: FrameDims) -> BBox {
        let w = dims.width() as f64;
        let h = dims.height() as f64;
        BBox::raw(
            self.xmin.clamp(0.0, w),
            self.ymin.clamp(0.0, h),
            self.xmax.clamp(0.0, w),
            self.ymax.clamp(0.0, h),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::raw(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax >= other.xmax
            && self.ymax >= other.ymax
    }

    /// Total lexicographic order on `(xmin, ymin, xmax, ymax)`. Used as the
    /// deterministic tie-break wherever boxes are sorted.
    pub fn cmp_corners(&self, other: &BBox) -> Ordering {
        self.xmin
            .total_cmp(&other.xmin)
            .then_with(|| self.ymin.total_cmp(&other.ymin))
            .then_with(|| self.xmax.total_cmp(&other.xmax))
            .then_with(|| self.ymax.total_cmp(&other.ymax))
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        t.serialize_element(&self.xmin)?;
        t.serialize_element(&self.ymin)?;
        t.serialize_element(&self.xmax)?;
        t.serialize_element(&self.ymax)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BoxVisitor;
        impl<'de> Visitor<'de> for BoxVisitor {
            type Value = BBox;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a [xmin, ymin, xmax, ymax] array")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<BBox, A::Error> {
                let mut next = |i: usize| -> Result<f64, A::Error> {
                    seq.next_element::<f64>()?
                        .ok_or_else(|| de::Error::invalid_length(i, &self))
                };
                let xmin = next(0)?;
                let ymin = next(1)?;
                let xmax = next(2)?;
                let ymax = next(3)?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(5, &self));
                }
                BBox::new(xmin, ymin, xmax, ymax).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_tuple(4, BoxVisitor)
    }
}

/// Integer frame dimensions; both sides are at least 1. Serialises as
/// `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameDims {
    width: u32,
    height: u32,
}

impl FrameDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(FrameDims { width, height })
    }

    pub(crate) fn raw(width: u32, height: u32) -> Self {
        debug_assert!(width > 0 && height > 0);
        FrameDims { width, height }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// The whole frame as a box: `[0, w] x [0, h]`.
    pub fn as_box(&self) -> BBox {
        BBox::raw(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

impl fmt::Display for FrameDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl Serialize for FrameDims {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(2)?;
        t.serialize_element(&self.width)?;
        t.serialize_element(&self.height)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for FrameDims {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct DimsVisitor;
        impl<'de> Visitor<'de> for DimsVisitor {
            type Value = FrameDims;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a [width, height] array")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<FrameDims, A::Error> {
                let width = seq
                    .next_element::<u32>()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let height = seq
                    .next_element::<u32>()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<u32>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                FrameDims::new(width, height).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_tuple(2, DimsVisitor)
    }
}

/// A region cut out of a parent frame. The region lies fully inside the
/// parent and has positive area, so it can serve as a frame of its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRegion {
    region: BBox,
    parent: FrameDims,
}

impl CropRegion {
    pub fn new(region: BBox, parent: FrameDims) -> Result<Self, GeometryError> {
        if !parent.as_box().contains(&region) {
            return Err(GeometryError::CropOutsideParent {
                xmin: region.xmin,
                ymin: region.ymin,
                xmax: region.xmax,
                ymax: region.ymax,
                parent,
            });
        }
        if region.area() <= 0.0 {
            return Err(GeometryError::EmptyCrop);
        }
        Ok(CropRegion { region, parent })
    }

    pub fn region(&self) -> BBox {
        self.region
    }

    pub fn parent(&self) -> FrameDims {
        self.parent
    }

    /// Continuous width and height of the cropped region.
    pub fn extent(&self) -> (f64, f64) {
        (self.region.width(), self.region.height())
    }

    /// Whole-pixel dimensions of the crop when it becomes a frame of its own,
    /// rounded to nearest and never below 1.
    pub fn extent_dims(&self) -> FrameDims {
        let w = self.region.width().round().max(1.0) as u32;
        let h = self.region.height().round().max(1.0) as u32;
        FrameDims::raw(w, h)
    }
}

/// Overlap area of two boxes; 0 when they are disjoint or touch only along
/// an edge or corner.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let h = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

/// Intersection over union, in `[0, 1]`. When the union has zero area (two
/// degenerate boxes) the result is defined as 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited in descending confidence (ties broken by
/// [`BBox::cmp_corners`], then class) and kept iff their IoU with every
/// already-kept detection of the same class is `<= iou_threshold`. Different
/// classes never suppress each other. The output preserves the visiting
/// order, so it is sorted by descending confidence.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .confidence()
            .total_cmp(&dets[i].confidence())
            .then_with(|| dets[i].bbox().cmp_corners(&dets[j].bbox()))
            .then_with(|| dets[i].class().cmp(&dets[j].class()))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class() == d.class() && iou(&k.bbox(), &d.bbox()) > iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// Rescales a box from one frame size to another. No clipping.
pub fn scale_box(b: &BBox, from: FrameDims, to: FrameDims) -> BBox {
    let sx = to.width() as f64 / from.width() as f64;
    let sy = to.height() as f64 / from.height() as f64;
    BBox::raw(b.xmin * sx, b.ymin * sy, b.xmax * sx, b.ymax * sy)
}

/// Maps a box out of a child frame back into the crop's parent frame.
///
/// `child_dims` is the size of the frame the box lives in (the crop extent
/// itself when the crop was not resized). The box is first unscaled from
/// `child_dims` to the crop extent, then translated by the crop origin, and
/// finally clipped to the parent frame.
pub fn map_child_to_parent(child_box: &BBox, crop: &CropRegion, child_dims: FrameDims) -> BBox {
    let (ew, eh) = crop.extent();
    let sx = ew / child_dims.width() as f64;
    let sy = eh / child_dims.height() as f64;
    let r = crop.region();
    BBox::raw(
        r.xmin() + child_box.xmin * sx,
        r.ymin() + child_box.ymin * sy,
        r.xmin() + child_box.xmax * sx,
        r.ymin() + child_box.ymax * sy,
    )
    .clip_to(crop.parent())
}

/// Inverse of [`map_child_to_parent`]: projects a parent-frame box into the
/// child frame produced by cropping to `crop` and resizing to `child_dims`.
/// The result is clipped to the child frame; `None` means nothing of the box
/// lands inside it.
pub fn map_parent_to_child(
    parent_box: &BBox,
    crop: &CropRegion,
    child_dims: FrameDims,
) -> Option<BBox> {
    let (ew, eh) = crop.extent();
    let sx = child_dims.width() as f64 / ew;
    let sy = child_dims.height() as f64 / eh;
    let r = crop.region();
    let projected = BBox::raw(
        (parent_box.xmin - r.xmin()) * sx,
        (parent_box.ymin - r.ymin()) * sy,
        (parent_box.xmax - r.xmin()) * sx,
        (parent_box.ymax - r.ymin()) * sy,
    )
    .clip_to(child_dims);
    (projected.area() > 0.0).then_some(projected)
}

/// Largest centered region of the requested aspect ratio that fits in the
/// frame, with whole-pixel coordinates. The off-axis side is kept at full
/// size; the other side is rounded to nearest, which keeps the achieved
/// ratio within `max(aspect_w, aspect_h)` of exact (in cross-multiplied
/// units) and the margins symmetric up to 1 px.
pub fn center_crop_to_aspect(
    dims: FrameDims,
    aspect_w: u32,
    aspect_h: u32,
) -> Result<CropRegion, GeometryError> {
    if aspect_w == 0 || aspect_h == 0 {
        return Err(GeometryError::InvalidAspect(aspect_w, aspect_h));
    }
    let w = dims.width() as f64;
    let h = dims.height() as f64;
    let (aw, ah) = (aspect_w as f64, aspect_h as f64);
    let region = if w * ah > h * aw {
        // Frame too wide: shrink width.
        let tw = (h * aw / ah).round().clamp(1.0, w);
        let x0 = ((w - tw) / 2.0).floor();
        BBox::raw(x0, 0.0, x0 + tw, h)
    } else {
        // Frame too tall (or already at aspect): shrink height.
        let th = (w * ah / aw).round().clamp(1.0, h);
        let y0 = ((h - th) / 2.0).floor();
        BBox::raw(0.0, y0, w, y0 + th)
    };
    CropRegion::new(region, dims)
}

/// One crop-and-resize step in a frame's history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropStep {
    pub region: CropRegion,
    pub resized_to: FrameDims,
}

/// Where a frame sits relative to the original camera image: its own
/// dimensions plus the chain of crop-and-resize steps that produced it.
/// Stage backends receive this so they can answer about any frame in the
/// cascade, and results can be lifted back to original coordinates.
#[derive(Debug, Clone)]
pub struct FrameContext {
    frame_id: u64,
    dims: FrameDims,
    chain: Vec<CropStep>,
    image: Option<PathBuf>,
    root_image: Option<PathBuf>,
}

impl FrameContext {
    /// Context for an uncropped original frame.
    pub fn original(frame_id: u64, dims: FrameDims) -> Self {
        FrameContext {
            frame_id,
            dims,
            chain: Vec::new(),
            image: None,
            root_image: None,
        }
    }

    /// Attaches the on-disk image path, for backends that read pixels.
    pub fn with_image(mut self, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if self.chain.is_empty() {
            self.root_image = Some(path.clone());
        }
        self.image = Some(path);
        self
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn dims(&self) -> FrameDims {
        self.dims
    }

    /// This frame's own on-disk image, when it exists as a file.
    pub fn image(&self) -> Option<&Path> {
        self.image.as_deref()
    }

    /// The original frame's on-disk image. Derived crop frames keep this
    /// even though they have no file of their own, so a caller can render
    /// the crop by replaying [`chain`](Self::chain) against it.
    pub fn root_image(&self) -> Option<&Path> {
        self.root_image.as_deref()
    }

    pub fn chain(&self) -> &[CropStep] {
        &self.chain
    }

    /// Dimensions of the original frame at the root of the chain.
    pub fn original_dims(&self) -> FrameDims {
        self.chain
            .first()
            .map(|s| s.region.parent())
            .unwrap_or(self.dims)
    }

    /// Derives the context for a crop of this frame resized to `resized_to`.
    /// The crop must have been taken against this frame's dimensions.
    pub fn child(&self, region: CropRegion, resized_to: FrameDims) -> Result<Self, GeometryError> {
        if region.parent() != self.dims {
            return Err(GeometryError::ChainMismatch {
                expected: region.parent(),
                found: self.dims,
            });
        }
        let mut chain = self.chain.clone();
        chain.push(CropStep { region, resized_to });
        Ok(FrameContext {
            frame_id: self.frame_id,
            dims: resized_to,
            chain,
            image: None,
            root_image: self.root_image.clone(),
        })
    }

    /// Maps a box in this frame's coordinates back to the original frame.
    pub fn lift_to_original(&self, b: &BBox) -> BBox {
        let mut cur = *b;
        for step in self.chain.iter().rev() {
            cur = map_child_to_parent(&cur, &step.region, step.resized_to);
        }
        cur
    }

    /// Projects an original-frame box into this frame, clipping at every
    /// step. `None` means the box does not reach this frame at all.
    pub fn project_from_original(&self, b: &BBox) -> Option<BBox> {
        let mut cur = b.clip_to(self.original_dims());
        if cur.area() <= 0.0 {
            return None;
        }
        for step in &self.chain {
            cur = map_parent_to_child(&cur, &step.region, step.resized_to)?;
        }
        Some(cur)
    }
}

//! Domain types shared by every stage of the pipeline, plus box geometry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("box must have finite coordinates and positive size, got ({x}, {y}, {w}, {h})")]
    DegenerateBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("unknown challenge factor `{0}`")]
    UnknownFactor(String),
    #[error("sequence `{id}`: {groundtruth} groundtruth boxes but {labels} label rows")]
    LengthMismatch {
        id: String,
        groundtruth: usize,
        labels: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// A visible target rectangle. `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(ModelError::DegenerateBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// A groundtruth or predicted box for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BoundingBox {
    /// Target invisible (out of view or fully occluded), or reported lost.
    #[default]
    Absent,
    Present(Rect),
}

impl BoundingBox {
    /// Builds a box from raw `x,y,w,h` values. Non-positive sizes are the
    /// usual file convention for an invisible target and map to `Absent`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(ModelError::DegenerateBox { x, y, w, h });
        }
        if w <= 0.0 || h <= 0.0 {
            return Ok(BoundingBox::Absent);
        }
        Ok(BoundingBox::Present(Rect { x, y, w, h }))
    }

    pub fn is_present(&self) -> bool {
        matches!(self, BoundingBox::Present(_))
    }

    pub fn rect(&self) -> Option<&Rect> {
        match self {
            BoundingBox::Present(r) => Some(r),
            BoundingBox::Absent => None,
        }
    }

    pub fn area(&self) -> Option<f64> {
        self.rect().map(Rect::area)
    }

    pub fn aspect_ratio(&self) -> Option<f64> {
        self.rect().map(Rect::aspect_ratio)
    }
}

impl From<Rect> for BoundingBox {
    fn from(r: Rect) -> Self {
        BoundingBox::Present(r)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BoundingBox::Absent => s.serialize_none(),
            BoundingBox::Present(r) => [r.x, r.y, r.w, r.h].serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Option::<[f64; 4]>::deserialize(d)? {
            None => Ok(BoundingBox::Absent),
            Some([x, y, w, h]) => BoundingBox::from_xywh(x, y, w, h).map_err(serde::de::Error::custom),
        }
    }
}

/// Length of the overlap of `[a0, a0 + al]` and `[b0, b0 + bl]`.
///
/// Nested intervals return the inner length directly so that identical or
/// contained boxes give exact intersection areas.
fn overlap_1d(a0: f64, al: f64, b0: f64, bl: f64) -> f64 {
    let (a1, b1) = (a0 + al, b0 + bl);
    if a0 >= b0 && a1 <= b1 {
        return al;
    }
    if b0 >= a0 && b1 <= a1 {
        return bl;
    }
    (a1.min(b1) - a0.max(b0)).max(0.0).min(al).min(bl)
}

/// Intersection over union of two boxes.
///
/// Returns `None` when both boxes are absent: the frame carries no
/// information and must be left out of frame statistics. A single absent box
/// scores 0.
pub fn compute_iou(a: &BoundingBox, b: &BoundingBox) -> Option<f64> {
    match (a, b) {
        (BoundingBox::Absent, BoundingBox::Absent) => None,
        (BoundingBox::Absent, _) | (_, BoundingBox::Absent) => Some(0.0),
        (BoundingBox::Present(a), BoundingBox::Present(b)) => Some(rect_iou(a, b)),
    }
}

pub fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let iw = overlap_1d(a.x, a.w, b.x, b.w);
    let ih = overlap_1d(a.y, a.h, b.y, b.h);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// How a challenge run ends, which decides whether a clean tail is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractionType {
    /// The run ends with the target occluded or out of view.
    T1,
    /// The target is still visible when the run ends.
    T2,
}

/// The nine challenge factors, in canonical table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorKind {
    Occlusion,
    Rotation,
    OutOfView,
    BackgroundClutter,
    IlluminationVariation,
    MotionBlur,
    ShapeVariation,
    /// Occlusion overlapping background clutter.
    OcclusionClutter,
    /// Occlusion overlapping rotation.
    OcclusionRotation,
}

impl FactorKind {
    pub const ALL: [FactorKind; 9] = [
        FactorKind::Occlusion,
        FactorKind::Rotation,
        FactorKind::OutOfView,
        FactorKind::BackgroundClutter,
        FactorKind::IlluminationVariation,
        FactorKind::MotionBlur,
        FactorKind::ShapeVariation,
        FactorKind::OcclusionClutter,
        FactorKind::OcclusionRotation,
    ];

    pub const SIMPLE: [FactorKind; 7] = [
        FactorKind::Occlusion,
        FactorKind::Rotation,
        FactorKind::OutOfView,
        FactorKind::BackgroundClutter,
        FactorKind::IlluminationVariation,
        FactorKind::MotionBlur,
        FactorKind::ShapeVariation,
    ];

    pub const COMPOUND: [FactorKind; 2] = [FactorKind::OcclusionClutter, FactorKind::OcclusionRotation];

    pub fn code(self) -> &'static str {
        match self {
            FactorKind::Occlusion => "OCC",
            FactorKind::Rotation => "ROT",
            FactorKind::OutOfView => "OV",
            FactorKind::BackgroundClutter => "BC",
            FactorKind::IlluminationVariation => "IV",
            FactorKind::MotionBlur => "MB",
            FactorKind::ShapeVariation => "SV",
            FactorKind::OcclusionClutter => "O-B",
            FactorKind::OcclusionRotation => "O-R",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FactorKind::Occlusion => "Occlusion",
            FactorKind::Rotation => "Rotation",
            FactorKind::OutOfView => "Out-of-View",
            FactorKind::BackgroundClutter => "Background Clutter",
            FactorKind::IlluminationVariation => "Illumination Variation",
            FactorKind::MotionBlur => "Motion Blur",
            FactorKind::ShapeVariation => "Shape Variation",
            FactorKind::OcclusionClutter => "Occlusion with Background Clutter",
            FactorKind::OcclusionRotation => "Occlusion with Rotation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn extraction_type(self) -> ExtractionType {
        match self {
            FactorKind::Occlusion
            | FactorKind::OutOfView
            | FactorKind::OcclusionClutter
            | FactorKind::OcclusionRotation => ExtractionType::T1,
            _ => ExtractionType::T2,
        }
    }

    pub fn is_compound(self) -> bool {
        self.constituents().is_some()
    }

    /// The two simple factors a compound factor stands for.
    pub fn constituents(self) -> Option<[FactorKind; 2]> {
        match self {
            FactorKind::OcclusionClutter => Some([FactorKind::Occlusion, FactorKind::BackgroundClutter]),
            FactorKind::OcclusionRotation => Some([FactorKind::Occlusion, FactorKind::Rotation]),
            _ => None,
        }
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FactorKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        FactorKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| ModelError::UnknownFactor(t.to_string()))
    }
}

impl Serialize for FactorKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for FactorKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A set of challenge factors, stored as a bit mask over table order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FactorSet(u16);

impl FactorSet {
    pub const fn empty() -> Self {
        FactorSet(0)
    }

    pub fn single(f: FactorKind) -> Self {
        FactorSet(1 << f.index())
    }

    pub fn contains(&self, f: FactorKind) -> bool {
        self.0 & (1 << f.index()) != 0
    }

    pub fn insert(&mut self, f: FactorKind) {
        self.0 |= 1 << f.index();
    }

    pub fn remove(&mut self, f: FactorKind) {
        self.0 &= !(1 << f.index());
    }

    pub fn set(&mut self, f: FactorKind, on: bool) {
        if on {
            self.insert(f)
        } else {
            self.remove(f)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// True iff the set is exactly `{f}`.
    pub fn is_only(&self, f: FactorKind) -> bool {
        *self == FactorSet::single(f)
    }

    pub fn has_compound(&self) -> bool {
        FactorKind::COMPOUND.iter().any(|&c| self.contains(c))
    }

    pub fn iter(&self) -> impl Iterator<Item = FactorKind> + '_ {
        FactorKind::ALL.into_iter().filter(move |&f| self.contains(f))
    }
}

impl FromIterator<FactorKind> for FactorSet {
    fn from_iter<I: IntoIterator<Item = FactorKind>>(iter: I) -> Self {
        let mut s = FactorSet::empty();
        for f in iter {
            s.insert(f);
        }
        s
    }
}

impl fmt::Debug for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(FactorKind::code)).finish()
    }
}

impl Serialize for FactorSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FactorSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<FactorKind>::deserialize(d)?.into_iter().collect())
    }
}

/// Factors active on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub frame_index: usize,
    pub active: FactorSet,
}

/// A source video: groundtruth boxes plus per-frame labels, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub frame_count: usize,
    pub groundtruth: Vec<BoundingBox>,
    pub labels: Vec<FrameLabels>,
}

impl SequenceRecord {
    /// Builds an aligned record, numbering label rows from zero.
    pub fn new(
        sequence_id: impl Into<String>,
        groundtruth: Vec<BoundingBox>,
        active: Vec<FactorSet>,
    ) -> Result<Self, ModelError> {
        let sequence_id = sequence_id.into();
        if groundtruth.len() != active.len() {
            return Err(ModelError::LengthMismatch {
                id: sequence_id,
                groundtruth: groundtruth.len(),
                labels: active.len(),
            });
        }
        let labels = active
            .into_iter()
            .enumerate()
            .map(|(frame_index, active)| FrameLabels { frame_index, active })
            .collect();
        Ok(Self {
            sequence_id,
            frame_count: groundtruth.len(),
            groundtruth,
            labels,
        })
    }

    pub fn active(&self, frame: usize) -> FactorSet {
        self.labels[frame].active
    }
}

/// Every tunable threshold of the pipeline. Defaults are the published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisConfig {
    /// A joint run of two factors must be strictly longer than this to count
    /// as an overlap (and to become a compound factor).
    pub tau_op: usize,
    /// Minimum length of the clean prefix of a clip.
    pub tau_s: usize,
    /// Exact length of the clean suffix of a T1 clip.
    pub tau_e: usize,
    /// Clean prefixes longer than this are cut to their last `max_prefix`
    /// frames (shape variation clips are exempt).
    pub max_prefix: usize,
    /// A clip fails when its last-frame IoU is strictly below this.
    pub tau_iou: f64,
    /// Per-frame hit threshold of the success score (IoU strictly above).
    pub success_threshold: f64,
    /// When set, failures attributed to "others" are left out of the failure
    /// rate numerator.
    pub exclude_others_from_failure_rate: bool,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            tau_op: 3,
            tau_s: 10,
            tau_e: 2,
            max_prefix: 30,
            tau_iou: 0.5,
            success_threshold: 0.5,
            exclude_others_from_failure_rate: false,
        }
    }
}

impl DiagnosisConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.tau_op == 0 || self.tau_s == 0 || self.tau_e == 0 || self.max_prefix == 0 {
            return bad("tau_op, tau_s, tau_e and max_prefix must be positive");
        }
        if self.tau_s > self.max_prefix {
            return bad("tau_s must not exceed max_prefix");
        }
        if !(0.0..=1.0).contains(&self.tau_iou) || !(0.0..=1.0).contains(&self.success_threshold) {
            return bad("tau_iou and success_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

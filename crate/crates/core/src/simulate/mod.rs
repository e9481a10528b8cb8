//! Synthetic corpora and tracker runs with known answers.
//!
//! Sequences are generated from a planted layout of factor runs; tracker runs
//! fail on a clip with a planted per-factor probability. Every output is a
//! pure function of its inputs and seed (see [`rng`] for the exact stream).

pub mod rng;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::TrackerRun;
use crate::extraction::{ExtractedClip, FrameRange};
use crate::model::{BoundingBox, FactorKind, FactorSet, Rect, SequenceRecord};

pub use rng::SimRng;

/// Linear scale applied to both box sides on shape-variation frames
/// (area grows 6.25x, well past the 4x bound).
const SV_SCALE: f64 = 2.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("sequence `{id}`: run {factor} at {start}+{length} does not fit in {frames} frames")]
    OutOfBounds {
        id: String,
        factor: String,
        start: usize,
        length: usize,
        frames: usize,
    },
    #[error("sequence `{id}`: frame {frame} would carry both {a} and {b}")]
    Conflict {
        id: String,
        frame: usize,
        a: FactorKind,
        b: FactorKind,
    },
    #[error("sequence `{id}`: frame {frame} is SV but has no visible target")]
    HiddenShape { id: String, frame: usize },
    #[error("sequence `{0}`: the first frame must be visible and free of SV")]
    Reference(String),
    #[error("invalid simulation profile: {0}")]
    Profile(String),
}

/// A planted factor run. `hidden` makes the target invisible for the whole
/// run; OV runs are always hidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRun {
    pub factor: FactorKind,
    pub start: usize,
    pub length: usize,
    #[serde(default)]
    pub hidden: bool,
}

impl PlantedRun {
    pub fn new(factor: FactorKind, start: usize, length: usize) -> Self {
        Self {
            factor,
            start,
            length,
            hidden: factor == FactorKind::OutOfView,
        }
    }

    pub fn hidden(mut self) -> Self {
        self.hidden = true;
        self
    }

    fn is_hidden(&self) -> bool {
        self.hidden || self.factor == FactorKind::OutOfView
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub sequence_id: String,
    pub frame_count: usize,
    pub runs: Vec<PlantedRun>,
    /// Unlabeled frames with no visible target (annotation noise).
    #[serde(default)]
    pub dropouts: Vec<FrameRange>,
}

fn compatible(a: FactorKind, b: FactorKind) -> bool {
    let part_of = |c: FactorKind, x: FactorKind| c.constituents().is_some_and(|p| p.contains(&x));
    a != b && !part_of(a, b) && !part_of(b, a)
}

impl SequenceLayout {
    pub fn new(sequence_id: impl Into<String>, frame_count: usize) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            frame_count,
            ..Default::default()
        }
    }

    pub fn with_run(mut self, run: PlantedRun) -> Self {
        self.runs.push(run);
        self
    }

    /// Per-frame factor sets and visibility implied by the layout.
    pub fn realize(&self) -> Result<(Vec<FactorSet>, Vec<bool>), LayoutError> {
        let n = self.frame_count;
        let id = || self.sequence_id.clone();
        let mut sets = vec![FactorSet::empty(); n];
        let mut hidden = vec![false; n];
        for r in &self.runs {
            if r.length == 0 || r.start + r.length > n {
                return Err(LayoutError::OutOfBounds {
                    id: id(),
                    factor: r.factor.code().into(),
                    start: r.start,
                    length: r.length,
                    frames: n,
                });
            }
            for t in r.start..r.start + r.length {
                if let Some(other) = sets[t].iter().find(|&o| !compatible(o, r.factor)) {
                    return Err(LayoutError::Conflict {
                        id: id(),
                        frame: t,
                        a: other,
                        b: r.factor,
                    });
                }
                sets[t].insert(r.factor);
                hidden[t] |= r.is_hidden();
            }
        }
        for d in &self.dropouts {
            if d.end >= n {
                return Err(LayoutError::OutOfBounds {
                    id: id(),
                    factor: "dropout".into(),
                    start: d.start,
                    length: d.len(),
                    frames: n,
                });
            }
            d.frames().for_each(|t| hidden[t] = true);
        }
        if let Some(t) = (0..n).find(|&t| hidden[t] && sets[t].contains(FactorKind::ShapeVariation)) {
            return Err(LayoutError::HiddenShape { id: id(), frame: t });
        }
        if n > 0 && (hidden[0] || sets[0].contains(FactorKind::ShapeVariation)) {
            return Err(LayoutError::Reference(id()));
        }
        Ok((sets, hidden))
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        self.realize().map(|_| ())
    }
}

/// Generates a sequence whose labels echo the layout exactly (compound
/// factors included) and whose groundtruth is a smooth random trajectory.
///
/// Box size jitters within 5% of the first frame, so SV follows the
/// geometry: re-running shape annotation on the output changes nothing.
pub fn synth_sequence(layout: &SequenceLayout, seed: u64) -> Result<SequenceRecord, LayoutError> {
    let (sets, hidden) = layout.realize()?;
    let mut rng = SimRng::keyed(seed, &layout.sequence_id);
    let (w0, h0) = (rng.uniform(24.0, 64.0), rng.uniform(24.0, 64.0));
    let (mut cx, mut cy) = (rng.uniform(100.0, 500.0), rng.uniform(100.0, 400.0));
    let (mut vx, mut vy) = (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    let (mut scale, mut aspect) = (1.0_f64, 1.0_f64);

    let mut gt = Vec::with_capacity(layout.frame_count);
    for t in 0..layout.frame_count {
        if t > 0 {
            vx = (vx + rng.uniform(-0.2, 0.2)).clamp(-2.0, 2.0);
            vy = (vy + rng.uniform(-0.2, 0.2)).clamp(-2.0, 2.0);
            cx += vx;
            cy += vy;
            scale = (scale * rng.uniform(0.99, 1.01)).clamp(0.95, 1.05);
            aspect = (aspect * rng.uniform(0.99, 1.01)).clamp(0.95, 1.05);
        }
        let mut w = w0 * scale * aspect.sqrt();
        let mut h = h0 * scale / aspect.sqrt();
        if sets[t].contains(FactorKind::ShapeVariation) {
            w *= SV_SCALE;
            h *= SV_SCALE;
        }
        gt.push(if hidden[t] {
            BoundingBox::Absent
        } else {
            BoundingBox::Present(Rect {
                x: cx - w / 2.0,
                y: cy - h / 2.0,
                w,
                h,
            })
        });
    }
    Ok(SequenceRecord::new(layout.sequence_id.clone(), gt, sets).expect("aligned by construction"))
}

/// Labels as a human annotator would deliver them: compound factors split
/// back into their constituents.
pub fn raw_labels(seq: &SequenceRecord) -> SequenceRecord {
    let mut out = seq.clone();
    for l in &mut out.labels {
        for c in FactorKind::COMPOUND {
            if l.active.contains(c) {
                l.active.remove(c);
                for p in c.constituents().expect("compound factor") {
                    l.active.insert(p);
                }
            }
        }
    }
    out
}

/// Random layout over all nine factors, with occasional overlapping runs,
/// hidden occlusions and dropouts. Always valid.
pub fn random_layout(rng: &mut SimRng, sequence_id: &str, max_frames: usize) -> SequenceLayout {
    let n = rng.between(20.min(max_frames), max_frames);
    let mut layout = SequenceLayout::new(sequence_id, n);
    let try_push = |layout: &mut SequenceLayout, run: PlantedRun| {
        layout.runs.push(run);
        if layout.validate().is_err() {
            layout.runs.pop();
        }
    };
    let mut t = rng.between(0, 30);
    while t < n {
        let factor = FactorKind::ALL[rng.below(FactorKind::ALL.len())];
        let length = rng.between(1, 20).min(n - t);
        let mut run = PlantedRun::new(factor, t, length);
        if factor.extraction_type() == crate::model::ExtractionType::T1 && rng.chance(0.5) {
            run = run.hidden();
        }
        try_push(&mut layout, run);
        if rng.chance(0.2) {
            let other = FactorKind::ALL[rng.below(FactorKind::ALL.len())];
            let s = t + rng.below(length);
            let l = rng.between(1, 10).min(n - s);
            try_push(&mut layout, PlantedRun::new(other, s, l));
        }
        if rng.chance(0.05) {
            let s = rng.between(t, n - 1);
            let l = rng.between(1, 3).min(n - s);
            layout.dropouts.push(FrameRange::new(s, s + l - 1));
            if layout.validate().is_err() {
                layout.dropouts.pop();
            }
        }
        t += length + rng.between(0, 35);
    }
    layout
}

/// Planted behavior of a synthetic tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    /// Probability of losing the target on a clip of each factor; missing
    /// factors never fail.
    pub failure_probability: BTreeMap<FactorKind, f64>,
    /// Minimum per-frame drift once the tracker starts losing the target.
    pub drift: f64,
    pub seed: u64,
}

impl SimProfile {
    pub fn uniform(p: f64, seed: u64) -> Self {
        Self {
            failure_probability: FactorKind::ALL.iter().map(|&f| (f, p)).collect(),
            drift: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if let Some((f, p)) = self.failure_probability.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(LayoutError::Profile(format!(
                "failure probability {p} for {f} is outside [0, 1]"
            )));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(LayoutError::Profile(format!(
                "drift {} must be a finite non-negative number",
                self.drift
            )));
        }
        Ok(())
    }
}

/// A run that copies the groundtruth through the clean lead-in. Afterwards it
/// either stays close to the target (IoU above 0.8 on every visible frame) or,
/// with the planted probability, drifts away linearly at a fixed box size so
/// that the last frame does not overlap the target at all.
pub fn synth_tracker_run(clip: &ExtractedClip, profile: &SimProfile, tracker_name: &str) -> TrackerRun {
    let mut rng = SimRng::keyed(profile.seed, &clip.clip_id);
    let p = profile.failure_probability.get(&clip.factor).copied().unwrap_or(0.0);
    let fails = rng.chance(p);
    let k0 = clip.last_clean_frame();
    let gt = &clip.groundtruth;
    let mut predictions = gt[..=k0].to_vec();

    let reference = *gt[..=k0]
        .iter()
        .rev()
        .find_map(|b| b.rect())
        .expect("clip starts visible");
    let post = gt.len() - 1 - k0;
    let last = *gt.last().and_then(|b| b.rect()).expect("clip ends visible");
    let step = profile
        .drift
        .max((last.w / 2.0 + reference.w / 2.0 + 1.0) / post as f64);

    let mut anchor = reference.center();
    for (k, g) in gt[k0 + 1..].iter().enumerate() {
        let jitter = rng.uniform(-0.05, 0.05);
        if let Some(r) = g.rect() {
            anchor = r.center();
        }
        let pred = if fails {
            let dx = step * (k + 1) as f64;
            BoundingBox::Present(Rect {
                x: anchor.0 + dx - reference.w / 2.0,
                y: anchor.1 - reference.h / 2.0,
                w: reference.w,
                h: reference.h,
            })
        } else {
            match g {
                BoundingBox::Present(r) => BoundingBox::Present(Rect {
                    x: r.x + jitter * r.w,
                    ..*r
                }),
                BoundingBox::Absent => BoundingBox::Absent,
            }
        };
        predictions.push(pred);
    }
    TrackerRun {
        tracker_name: tracker_name.to_string(),
        clip_id: clip.clip_id.clone(),
        predictions,
    }
}

//! Completes manual per-frame annotations: shape variation is labeled from
//! the groundtruth geometry, and long joint runs of occlusion with clutter or
//! rotation are folded into compound factors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, DiagnosisConfig, FactorKind, SequenceRecord};

/// Closed range a box's area ratio and aspect-ratio ratio (relative to the
/// first frame) must stay inside; leaving it marks shape variation.
pub const SV_RATIO_RANGE: (f64, f64) = (0.25, 4.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("sequence `{0}`: the first frame has no groundtruth box to use as shape reference")]
    AbsentReference(String),
    #[error("sequence `{id}`: frame {frame} already carries a compound factor; derivation runs once on simple labels")]
    AlreadyCompound { id: String, frame: usize },
}

/// Joint-run statistics for one unordered pair of simple factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapStatistic {
    pub pair: (FactorKind, FactorKind),
    pub run_lengths: Vec<usize>,
    pub qualifying_runs: usize,
}

fn outside_sv_range(ratio: f64) -> bool {
    ratio < SV_RATIO_RANGE.0 || ratio > SV_RATIO_RANGE.1
}

/// Recomputes the SV flag of every frame from the groundtruth, using the
/// first frame as reference. No other label is touched.
pub fn annotate_shape_variation(seq: &SequenceRecord) -> Result<SequenceRecord, AnnotationError> {
    let reference = match seq.groundtruth.first() {
        Some(BoundingBox::Present(r)) => *r,
        _ => return Err(AnnotationError::AbsentReference(seq.sequence_id.clone())),
    };
    let mut out = seq.clone();
    for (t, (gt, labels)) in out.groundtruth.iter().zip(out.labels.iter_mut()).enumerate() {
        let sv = match gt {
            BoundingBox::Present(r) if t > 0 => {
                outside_sv_range(r.area() / reference.area())
                    || outside_sv_range(r.aspect_ratio() / reference.aspect_ratio())
            }
            _ => false,
        };
        labels.active.set(FactorKind::ShapeVariation, sv);
    }
    Ok(out)
}

/// Maximal runs of frames on which both factors are active, as inclusive
/// `(start, end)` pairs.
pub fn joint_runs(seq: &SequenceRecord, a: FactorKind, b: FactorKind) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, l) in seq.labels.iter().enumerate() {
        let joint = l.active.contains(a) && l.active.contains(b);
        match (joint, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, seq.labels.len() - 1));
    }
    runs
}

/// Joint-run lengths for every pair of simple factors that co-occur at least
/// once. Compound labels are ignored.
pub fn compute_overlap_statistics(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Vec<OverlapStatistic> {
    let mut stats = Vec::new();
    for (i, &a) in FactorKind::SIMPLE.iter().enumerate() {
        for &b in &FactorKind::SIMPLE[i + 1..] {
            let run_lengths: Vec<usize> = joint_runs(seq, a, b).into_iter().map(|(s, e)| e - s + 1).collect();
            if run_lengths.is_empty() {
                continue;
            }
            let qualifying_runs = run_lengths.iter().filter(|&&n| n > cfg.tau_op).count();
            stats.push(OverlapStatistic {
                pair: (a, b),
                run_lengths,
                qualifying_runs,
            });
        }
    }
    stats
}

/// Replaces long joint runs of OCC+BC with O-B and of OCC+ROT with O-R.
///
/// Runs are found on the input labels, so a frame inside both kinds of run
/// ends up with both compounds and loses OCC, BC and ROT.
pub fn derive_compound_factors(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Result<SequenceRecord, AnnotationError> {
    if let Some(l) = seq.labels.iter().find(|l| l.active.has_compound()) {
        return Err(AnnotationError::AlreadyCompound {
            id: seq.sequence_id.clone(),
            frame: l.frame_index,
        });
    }
    let mut marks = vec![Vec::<FactorKind>::new(); seq.labels.len()];
    for compound in FactorKind::COMPOUND {
        let [a, b] = compound.constituents().expect("compound factor");
        for (s, e) in joint_runs(seq, a, b) {
            if e - s + 1 > cfg.tau_op {
                marks[s..=e].iter_mut().for_each(|m| m.push(compound));
            }
        }
    }
    let mut out = seq.clone();
    for (labels, compounds) in out.labels.iter_mut().zip(marks) {
        for c in compounds {
            for part in c.constituents().expect("compound factor") {
                labels.active.remove(part);
            }
            labels.active.insert(c);
        }
    }
    Ok(out)
}

/// Shape variation followed by compound derivation.
pub fn finalize_labels(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Result<SequenceRecord, AnnotationError> {
    derive_compound_factors(&annotate_shape_variation(seq)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelViolation {
    /// Label and groundtruth lists disagree with the declared frame count.
    Length {
        frame_count: usize,
        groundtruth: usize,
        labels: usize,
    },
    /// A label row is out of order.
    FrameIndex { position: usize, frame_index: usize },
    /// A compound factor sits next to one of its own constituents.
    Exclusivity {
        frame: usize,
        compound: FactorKind,
        constituents: Vec<FactorKind>,
    },
    /// An out-of-view frame has a visible groundtruth box.
    Visibility { frame: usize },
}

impl std::fmt::Display for LabelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelViolation::Length {
                frame_count,
                groundtruth,
                labels,
            } => write!(
                f,
                "frame count {frame_count} but {groundtruth} boxes and {labels} label rows"
            ),
            LabelViolation::FrameIndex { position, frame_index } => {
                write!(f, "label row {position} is numbered {frame_index}")
            }
            LabelViolation::Exclusivity {
                frame,
                compound,
                constituents,
            } => {
                let parts: Vec<_> = constituents.iter().map(|c| c.code()).collect();
                write!(f, "frame {frame}: {compound} together with {}", parts.join(", "))
            }
            LabelViolation::Visibility { frame } => write!(f, "frame {frame}: OV with a visible groundtruth box"),
        }
    }
}

pub fn validate_labels(seq: &SequenceRecord) -> Vec<LabelViolation> {
    let mut violations = Vec::new();
    if seq.groundtruth.len() != seq.frame_count || seq.labels.len() != seq.frame_count {
        violations.push(LabelViolation::Length {
            frame_count: seq.frame_count,
            groundtruth: seq.groundtruth.len(),
            labels: seq.labels.len(),
        });
    }
    for (position, l) in seq.labels.iter().enumerate() {
        if l.frame_index != position {
            violations.push(LabelViolation::FrameIndex {
                position,
                frame_index: l.frame_index,
            });
        }
        for compound in FactorKind::COMPOUND {
            if !l.active.contains(compound) {
                continue;
            }
            let constituents: Vec<_> = compound
                .constituents()
                .expect("compound factor")
                .into_iter()
                .filter(|&c| l.active.contains(c))
                .collect();
            if !constituents.is_empty() {
                violations.push(LabelViolation::Exclusivity {
                    frame: position,
                    compound,
                    constituents,
                });
            }
        }
        if l.active.contains(FactorKind::OutOfView) && seq.groundtruth.get(position).is_some_and(|b| b.is_present()) {
            violations.push(LabelViolation::Visibility { frame: position });
        }
    }
    violations
}

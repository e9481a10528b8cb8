//! Per-factor diagnosis of single-object visual trackers.
//!
//! The pipeline turns per-frame challenge annotations into single-factor
//! clips, scores tracker output on those clips and writes a diagnosis report:
//!
//! 1. [`annotation`] completes labels (shape variation, compound factors);
//! 2. [`extraction`] cuts clips with a clean lead-in and one pure challenge;
//! 3. [`evaluation`] attributes failures and aggregates per-factor metrics;
//! 4. [`report`] renders the result as canonical JSON, markdown and SVG.
//!
//! [`simulate`] produces synthetic corpora and tracker runs with known
//! answers.

pub mod annotation;
pub mod cli;
pub mod evaluation;
pub mod extraction;
pub mod io;
pub mod model;
pub mod report;
pub mod simulate;

pub use annotation::{
    annotate_shape_variation, compute_overlap_statistics, derive_compound_factors, finalize_labels, validate_labels,
    LabelViolation, OverlapStatistic,
};
pub use evaluation::{
    cross_tracker_table, evaluate_clip, factor_stats, failure_proportions, ClipOutcome, FactorStats, FailureCause,
    TrackerRun, Verdict,
};
pub use extraction::{census, extract_clips, find_challenge_runs, verify_clip, ExtractedClip, FrameRange};
pub use model::{compute_iou, BoundingBox, DiagnosisConfig, FactorKind, FactorSet, FrameLabels, Rect, SequenceRecord};

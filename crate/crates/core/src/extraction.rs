//! Single-factor clip extraction.
//!
//! A clip is a clean lead-in (`nc1`), a run of frames labeled with exactly one
//! factor (`c2`) and, for factors whose runs end with the target hidden, a
//! short clean lead-out (`nc3`) so that the last frame shows the target.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{validate_labels, LabelViolation};
use crate::model::{BoundingBox, DiagnosisConfig, ExtractionType, FactorKind, FrameLabels, SequenceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("sequence `{id}` has {} label violation(s), first: {}", .violations.len(), .violations[0])]
    InvalidLabels {
        id: String,
        violations: Vec<LabelViolation>,
    },
}

/// Inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// A single-factor clip cut from a source sequence. Ranges index the source;
/// `groundtruth` and `labels` are re-indexed from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedClip {
    pub clip_id: String,
    pub source_id: String,
    pub factor: FactorKind,
    pub frame_range: FrameRange,
    pub nc1_range: FrameRange,
    pub c2_range: FrameRange,
    pub nc3_range: Option<FrameRange>,
    pub groundtruth: Vec<BoundingBox>,
    pub labels: Vec<FrameLabels>,
}

impl ExtractedClip {
    pub fn len(&self) -> usize {
        self.frame_range.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Clip-local index of the last frame before the challenge starts.
    pub fn last_clean_frame(&self) -> usize {
        self.nc1_range.end - self.frame_range.start
    }

    pub fn to_local(&self, r: FrameRange) -> FrameRange {
        FrameRange::new(r.start - self.frame_range.start, r.end - self.frame_range.start)
    }

    /// The clip as a standalone sequence (id = clip id).
    pub fn to_sequence(&self) -> SequenceRecord {
        SequenceRecord {
            sequence_id: self.clip_id.clone(),
            frame_count: self.len(),
            groundtruth: self.groundtruth.clone(),
            labels: self.labels.clone(),
        }
    }
}

pub fn clip_id(source_id: &str, factor: FactorKind, c2_start: usize) -> String {
    format!("{source_id}_{}_{c2_start}", factor.code())
}

/// Maximal runs of frames whose active set is exactly `{factor}`.
pub fn find_challenge_runs(seq: &SequenceRecord, factor: FactorKind) -> Vec<FrameRange> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, l) in seq.labels.iter().enumerate() {
        match (l.active.is_only(factor), start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push(FrameRange::new(s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(FrameRange::new(s, seq.labels.len() - 1));
    }
    runs
}

/// Why a challenge run did not produce a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    ShortPrefix { available: usize },
    NoCleanSuffix,
    HiddenLastFrame,
    HiddenFirstFrame,
}

fn try_clip(
    seq: &SequenceRecord,
    factor: FactorKind,
    run: FrameRange,
    cfg: &DiagnosisConfig,
) -> Result<ExtractedClip, SkipReason> {
    let clean = |t: usize| seq.labels[t].active.is_empty();
    let prefix = (0..run.start).rev().take_while(|&t| clean(t)).count();
    if prefix < cfg.tau_s {
        return Err(SkipReason::ShortPrefix { available: prefix });
    }
    let kept = if factor == FactorKind::ShapeVariation {
        prefix
    } else {
        prefix.min(cfg.max_prefix)
    };
    let nc1 = FrameRange::new(run.start - kept, run.start - 1);

    let nc3 = match factor.extraction_type() {
        ExtractionType::T2 => None,
        ExtractionType::T1 => {
            let end = run.end + cfg.tau_e;
            if end >= seq.frame_count || !(run.end + 1..=end).all(clean) {
                return Err(SkipReason::NoCleanSuffix);
            }
            Some(FrameRange::new(run.end + 1, end))
        }
    };
    let frame_range = FrameRange::new(nc1.start, nc3.map_or(run.end, |r| r.end));
    if !seq.groundtruth[frame_range.end].is_present() {
        return Err(SkipReason::HiddenLastFrame);
    }
    if !seq.groundtruth[frame_range.start].is_present() {
        return Err(SkipReason::HiddenFirstFrame);
    }

    let labels = seq.labels[frame_range.frames()]
        .iter()
        .enumerate()
        .map(|(i, l)| FrameLabels {
            frame_index: i,
            active: l.active,
        })
        .collect();
    Ok(ExtractedClip {
        clip_id: clip_id(&seq.sequence_id, factor, run.start),
        source_id: seq.sequence_id.clone(),
        factor,
        frame_range,
        nc1_range: nc1,
        c2_range: run,
        nc3_range: nc3,
        groundtruth: seq.groundtruth[frame_range.frames()].to_vec(),
        labels,
    })
}

/// Cuts every qualifying single-factor clip out of a finalized sequence.
///
/// Clips come out ordered by factor (table order), then by challenge start.
pub fn extract_clips(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Result<Vec<ExtractedClip>, ExtractionError> {
    let violations = validate_labels(seq);
    if !violations.is_empty() {
        return Err(ExtractionError::InvalidLabels {
            id: seq.sequence_id.clone(),
            violations,
        });
    }
    let mut clips = Vec::new();
    for factor in FactorKind::ALL {
        for run in find_challenge_runs(seq, factor) {
            match try_clip(seq, factor, run, cfg) {
                Ok(clip) => clips.push(clip),
                Err(SkipReason::HiddenLastFrame | SkipReason::HiddenFirstFrame) => {
                    warn!(
                        "{}: skipping {factor} run {run}, clip boundary frame has no groundtruth box",
                        seq.sequence_id
                    );
                }
                Err(_) => {}
            }
        }
    }
    Ok(clips)
}

/// Extracts clips from many sequences in parallel. Output order is by
/// source id, factor and challenge start, independent of scheduling.
pub fn extract_corpus(seqs: &[SequenceRecord], cfg: &DiagnosisConfig) -> Result<Vec<ExtractedClip>, ExtractionError> {
    let per_seq: Result<Vec<_>, _> = seqs.par_iter().map(|s| extract_clips(s, cfg)).collect();
    let mut clips: Vec<ExtractedClip> = per_seq?.into_iter().flatten().collect();
    clips.sort_by(|a, b| (&a.source_id, a.factor, a.c2_range.start).cmp(&(&b.source_id, b.factor, b.c2_range.start)));
    Ok(clips)
}

/// Clip count for each of the nine factors (zeros included).
pub fn census(clips: &[ExtractedClip]) -> BTreeMap<FactorKind, usize> {
    let mut counts: BTreeMap<FactorKind, usize> = FactorKind::ALL.iter().map(|&f| (f, 0)).collect();
    for c in clips {
        *counts.entry(c.factor).or_default() += 1;
    }
    counts
}

/// A broken clip invariant, as found by [`verify_clip`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipViolation {
    Tiling(String),
    ImpureChallenge { frame: usize },
    DirtyClean { frame: usize },
    PrefixLength(usize),
    SuffixLength(Option<usize>),
    HiddenBoundary { frame: usize },
    LocalCopy(String),
}

/// Checks a clip against its invariants, reading only the clip's own data.
pub fn verify_clip(clip: &ExtractedClip, cfg: &DiagnosisConfig) -> Vec<ClipViolation> {
    let mut v = Vec::new();
    let (fr, nc1, c2) = (clip.frame_range, clip.nc1_range, clip.c2_range);

    if nc1.start != fr.start || nc1.end + 1 != c2.start {
        v.push(ClipViolation::Tiling(format!("nc1 {nc1} does not lead into c2 {c2}")));
    }
    match clip.nc3_range {
        Some(nc3) if nc3.start != c2.end + 1 || nc3.end != fr.end => {
            v.push(ClipViolation::Tiling(format!(
                "nc3 {nc3} does not close frame range {fr}"
            )));
        }
        None if c2.end != fr.end => v.push(ClipViolation::Tiling(format!(
            "c2 {c2} does not close frame range {fr}"
        ))),
        _ => {}
    }
    if clip.groundtruth.len() != fr.len() || clip.labels.len() != fr.len() {
        v.push(ClipViolation::LocalCopy(format!(
            "{} boxes and {} labels for {} frames",
            clip.groundtruth.len(),
            clip.labels.len(),
            fr.len()
        )));
        return v;
    }
    if let Some(l) = clip.labels.iter().enumerate().find(|(i, l)| l.frame_index != *i) {
        v.push(ClipViolation::LocalCopy(format!(
            "label row {} is numbered {}",
            l.0, l.1.frame_index
        )));
    }

    for (i, l) in clip.labels.iter().enumerate() {
        let src = fr.start + i;
        if c2.contains(src) {
            if !l.active.is_only(clip.factor) {
                v.push(ClipViolation::ImpureChallenge { frame: src });
            }
        } else if !l.active.is_empty() {
            v.push(ClipViolation::DirtyClean { frame: src });
        }
    }

    let n1 = nc1.len();
    let capped = clip.factor != FactorKind::ShapeVariation;
    if n1 < cfg.tau_s || (capped && n1 > cfg.max_prefix) {
        v.push(ClipViolation::PrefixLength(n1));
    }
    let n3 = clip.nc3_range.map(|r| r.len());
    let want = match clip.factor.extraction_type() {
        ExtractionType::T1 => Some(cfg.tau_e),
        ExtractionType::T2 => None,
    };
    if n3 != want {
        v.push(ClipViolation::SuffixLength(n3));
    }

    for (local, src) in [(0, fr.start), (clip.groundtruth.len() - 1, fr.end)] {
        if !clip.groundtruth[local].is_present() {
            v.push(ClipViolation::HiddenBoundary { frame: src });
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorSet, Rect};
    use FactorKind::*;

    fn present() -> BoundingBox {
        BoundingBox::Present(Rect::new(0., 0., 10., 10.).unwrap())
    }

    /// Builds a sequence from `(factor or None, length, visible)` blocks.
    fn blocks(spec: &[(Option<FactorKind>, usize, bool)]) -> SequenceRecord {
        let mut gt = Vec::new();
        let mut sets = Vec::new();
        for &(f, n, visible) in spec {
            for _ in 0..n {
                gt.push(if visible { present() } else { BoundingBox::Absent });
                sets.push(f.map(FactorSet::single).unwrap_or_default());
            }
        }
        SequenceRecord::new("s", gt, sets).unwrap()
    }

    #[test]
    fn challenge_runs() {
        let mut seq = blocks(&[(None, 2, true), (Some(IlluminationVariation), 2, true), (None, 1, true)]);
        assert_eq!(
            find_challenge_runs(&seq, IlluminationVariation),
            vec![FrameRange::new(2, 3)]
        );
        assert!(find_challenge_runs(&seq, MotionBlur).is_empty());

        seq = blocks(&[(Some(IlluminationVariation), 3, true)]);
        seq.labels[1].active.insert(MotionBlur);
        assert_eq!(
            find_challenge_runs(&seq, IlluminationVariation),
            vec![FrameRange::new(0, 0), FrameRange::new(2, 2)]
        );
    }

    #[test]
    fn t2_prefix_is_truncated_to_last_30() {
        let seq = blocks(&[(None, 40, true), (Some(IlluminationVariation), 20, true)]);
        let clips = extract_clips(&seq, &DiagnosisConfig::default()).unwrap();
        assert_eq!(clips.len(), 1);
        let c = &clips[0];
        assert_eq!(c.nc1_range, FrameRange::new(10, 39));
        assert_eq!(c.c2_range, FrameRange::new(40, 59));
        assert_eq!(c.nc3_range, None);
        assert_eq!(c.len(), 50);
        assert_eq!(c.clip_id, "s_IV_40");
        assert!(verify_clip(c, &DiagnosisConfig::default()).is_empty());
    }

    #[test]
    fn short_prefix_yields_nothing() {
        let seq = blocks(&[(None, 5, true), (Some(Occlusion), 5, true), (None, 5, true)]);
        assert!(extract_clips(&seq, &DiagnosisConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn t1_clip_with_hidden_challenge() {
        let seq = blocks(&[(None, 12, true), (Some(Occlusion), 8, false), (None, 2, true)]);
        let clips = extract_clips(&seq, &DiagnosisConfig::default()).unwrap();
        assert_eq!(clips.len(), 1);
        let c = &clips[0];
        assert_eq!(c.len(), 22);
        assert_eq!(c.nc3_range, Some(FrameRange::new(20, 21)));
        assert!(verify_clip(c, &DiagnosisConfig::default()).is_empty());
    }

    #[test]
    fn t1_suffix_takes_exactly_tau_e_frames() {
        let seq = blocks(&[(None, 12, true), (Some(OutOfView), 4, false), (None, 9, true)]);
        let c = &extract_clips(&seq, &DiagnosisConfig::default()).unwrap()[0];
        assert_eq!(c.nc3_range, Some(FrameRange::new(16, 17)));
        assert_eq!(c.frame_range, FrameRange::new(0, 17));
    }

    #[test]
    fn t1_needs_visible_suffix_end() {
        let cfg = DiagnosisConfig::default();
        let seq = blocks(&[(None, 12, true), (Some(Occlusion), 4, false), (None, 1, true)]);
        assert!(extract_clips(&seq, &cfg).unwrap().is_empty());
        let seq = blocks(&[
            (None, 12, true),
            (Some(Occlusion), 4, false),
            (None, 2, false),
            (None, 3, true),
        ]);
        assert!(extract_clips(&seq, &cfg).unwrap().is_empty());
    }

    #[test]
    fn shape_variation_keeps_whole_prefix() {
        let seq = blocks(&[(None, 50, true), (Some(ShapeVariation), 15, true)]);
        let c = &extract_clips(&seq, &DiagnosisConfig::default()).unwrap()[0];
        assert_eq!(c.nc1_range.len(), 50);
        assert_eq!(c.len(), 65);
        assert!(verify_clip(c, &DiagnosisConfig::default()).is_empty());
    }

    #[test]
    fn t2_with_hidden_last_frame_is_skipped() {
        let seq = blocks(&[
            (None, 12, true),
            (Some(MotionBlur), 3, true),
            (Some(MotionBlur), 1, false),
        ]);
        assert!(extract_clips(&seq, &DiagnosisConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn later_runs_reuse_earlier_frames_in_prefix() {
        let seq = blocks(&[
            (None, 12, true),
            (Some(Rotation), 3, true),
            (None, 12, true),
            (Some(MotionBlur), 2, true),
        ]);
        let clips = extract_clips(&seq, &DiagnosisConfig::default()).unwrap();
        let ids: Vec<_> = clips.iter().map(|c| c.clip_id.as_str()).collect();
        assert_eq!(ids, ["s_ROT_12", "s_MB_27"]);
        assert_eq!(clips[1].nc1_range, FrameRange::new(15, 26));
    }

    #[test]
    fn rejects_invalid_labels() {
        let mut seq = blocks(&[(None, 12, true), (Some(OutOfView), 3, true)]);
        seq.labels[0].active.insert(Occlusion);
        let err = extract_clips(&seq, &DiagnosisConfig::default()).unwrap_err();
        assert!(matches!(err, ExtractionError::InvalidLabels { .. }));
    }

    #[test]
    fn census_counts_every_factor() {
        assert!(census(&[]).values().all(|&n| n == 0));
        assert_eq!(census(&[]).len(), 9);
        let mk = |factor, id: &str| {
            let seq = blocks(&[(None, 12, true), (Some(factor), 3, true)]);
            let mut c = extract_clips(&seq, &DiagnosisConfig::default()).unwrap().remove(0);
            c.clip_id = id.into();
            c
        };
        let clips: Vec<_> = vec![
            mk(Rotation, "a"),
            mk(Rotation, "b"),
            mk(Rotation, "c"),
            mk(ShapeVariation, "d"),
        ];
        let c = census(&clips);
        assert_eq!(c[&Rotation], 3);
        assert_eq!(c[&ShapeVariation], 1);
        assert_eq!(c.values().sum::<usize>(), 4);
    }

    #[test]
    fn verifier_catches_tampering() {
        let cfg = DiagnosisConfig::default();
        let seq = blocks(&[(None, 12, true), (Some(Occlusion), 4, true), (None, 2, true)]);
        let good = extract_clips(&seq, &cfg).unwrap().remove(0);

        let mut c = good.clone();
        c.labels[3].active.insert(MotionBlur);
        assert_eq!(verify_clip(&c, &cfg), vec![ClipViolation::DirtyClean { frame: 3 }]);

        let mut c = good.clone();
        c.nc3_range = None;
        assert!(verify_clip(&c, &cfg).contains(&ClipViolation::SuffixLength(None)));

        let mut c = good.clone();
        c.groundtruth[0] = BoundingBox::Absent;
        assert_eq!(verify_clip(&c, &cfg), vec![ClipViolation::HiddenBoundary { frame: 0 }]);

        let mut c = good;
        c.labels[13].active.insert(Rotation);
        assert_eq!(
            verify_clip(&c, &cfg),
            vec![ClipViolation::ImpureChallenge { frame: 13 }]
        );
    }
}

//! Brute-force oracles shared by the integration tests. They are written
//! straight from the rules and share no code with the library internals.
#![allow(dead_code)]

use trackdiag::extraction::{ExtractedClip, FrameRange};
use trackdiag::model::{DiagnosisConfig, FactorKind, FactorSet, FrameLabels, SequenceRecord};

fn has_no_factor(seq: &SequenceRecord, t: usize) -> bool {
    FactorKind::ALL.iter().all(|&f| !seq.labels[t].active.contains(f))
}

fn has_only(seq: &SequenceRecord, t: usize, factor: FactorKind) -> bool {
    FactorKind::ALL
        .iter()
        .all(|&g| seq.labels[t].active.contains(g) == (g == factor))
}

fn ends_hidden(factor: FactorKind) -> bool {
    matches!(
        factor,
        FactorKind::Occlusion | FactorKind::OutOfView | FactorKind::OcclusionClutter | FactorKind::OcclusionRotation
    )
}

/// Enumerates every (factor, maximal run) candidate and tests each rule
/// directly: clean lead-in of at least `tau_s` frames (only the last
/// `max_prefix` kept, except for SV), a clean `tau_e` lead-out for factors
/// ending hidden, and a visible target on the first and last clip frames.
pub fn oracle_extract(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Vec<ExtractedClip> {
    let n = seq.frame_count;
    let mut clips = Vec::new();
    for factor in FactorKind::ALL {
        for c in 0..n {
            if !has_only(seq, c, factor) || (c > 0 && has_only(seq, c - 1, factor)) {
                continue;
            }
            let mut d = c;
            while d + 1 < n && has_only(seq, d + 1, factor) {
                d += 1;
            }

            let prefix = (1..=c)
                .rev()
                .find(|&len| (c - len..c).all(|t| has_no_factor(seq, t)))
                .unwrap_or(0);
            if prefix < cfg.tau_s {
                continue;
            }
            let kept = if factor != FactorKind::ShapeVariation && prefix > cfg.max_prefix {
                cfg.max_prefix
            } else {
                prefix
            };

            let hidden_end = ends_hidden(factor);
            let last = if hidden_end { d + cfg.tau_e } else { d };
            if last >= n {
                continue;
            }
            if hidden_end && !(d + 1..=last).all(|t| has_no_factor(seq, t)) {
                continue;
            }
            let first = c - kept;
            if !seq.groundtruth[first].is_present() || !seq.groundtruth[last].is_present() {
                continue;
            }

            clips.push(ExtractedClip {
                clip_id: format!("{}_{}_{}", seq.sequence_id, factor.code(), c),
                source_id: seq.sequence_id.clone(),
                factor,
                frame_range: FrameRange {
                    start: first,
                    end: last,
                },
                nc1_range: FrameRange {
                    start: first,
                    end: c - 1,
                },
                c2_range: FrameRange { start: c, end: d },
                nc3_range: hidden_end.then_some(FrameRange {
                    start: d + 1,
                    end: last,
                }),
                groundtruth: seq.groundtruth[first..=last].to_vec(),
                labels: (first..=last)
                    .map(|t| FrameLabels {
                        frame_index: t - first,
                        active: seq.labels[t].active,
                    })
                    .collect(),
            });
        }
    }
    clips
}

/// Length of the maximal run of frames around `t` on which both `a` and `b`
/// are active (0 when `t` itself is not such a frame).
fn joint_run_length(labels: &[FactorSet], t: usize, a: FactorKind, b: FactorKind) -> usize {
    let both = |i: usize| labels[i].contains(a) && labels[i].contains(b);
    if !both(t) {
        return 0;
    }
    let mut lo = t;
    while lo > 0 && both(lo - 1) {
        lo -= 1;
    }
    let mut hi = t;
    while hi + 1 < labels.len() && both(hi + 1) {
        hi += 1;
    }
    hi - lo + 1
}

/// Per-frame compound derivation: each frame looks at its own joint runs in
/// the raw labels and decides independently.
pub fn oracle_compounds(raw: &[FactorSet], tau_op: usize) -> Vec<FactorSet> {
    let pairs = [
        (
            FactorKind::OcclusionClutter,
            FactorKind::Occlusion,
            FactorKind::BackgroundClutter,
        ),
        (
            FactorKind::OcclusionRotation,
            FactorKind::Occlusion,
            FactorKind::Rotation,
        ),
    ];
    (0..raw.len())
        .map(|t| {
            let mut out = raw[t];
            for (compound, a, b) in pairs {
                if joint_run_length(raw, t, a, b) > tau_op {
                    out.insert(compound);
                }
            }
            for (compound, a, b) in pairs {
                if out.contains(compound) {
                    out.remove(a);
                    out.remove(b);
                }
            }
            out
        })
        .collect()
}

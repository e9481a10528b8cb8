//! Scores tracker output on extracted clips and aggregates the per-factor
//! diagnosis metrics: failure attribution, failure rate, success score and
//! consistency.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::extraction::ExtractedClip;
use crate::model::{compute_iou, BoundingBox, DiagnosisConfig, FactorKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("clip `{clip_id}`: {predictions} predicted boxes for {frames} frames")]
    LengthMismatch {
        clip_id: String,
        frames: usize,
        predictions: usize,
    },
    #[error("tracker run is for clip `{run}` but was scored against `{clip}`")]
    ClipMismatch { clip: String, run: String },
    #[error("clip `{0}`: last frame has no groundtruth box")]
    HiddenLastFrame(String),
    #[error("no clips for factor {0}")]
    NoClips(FactorKind),
    #[error("tracker `{tracker}` has no result for clip(s): {}", .clips.join(", "))]
    MissingRuns { tracker: String, clips: Vec<String> },
}

/// One tracker's predictions on one clip. Index 0 is the initialization frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerRun {
    pub tracker_name: String,
    pub clip_id: String,
    pub predictions: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    /// Lost during the challenge.
    FailedOnFactor,
    /// Already lost when the challenge started.
    FailedBeforeChallenge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipOutcome {
    pub clip_id: String,
    pub factor: FactorKind,
    pub verdict: Verdict,
    pub last_frame_iou: f64,
    pub pre_challenge_iou: f64,
    pub success_score: f64,
}

impl ClipOutcome {
    pub fn is_failure(&self) -> bool {
        self.verdict != Verdict::Success
    }
}

/// Scores one run. The verdict looks only at the last frame and, for
/// attribution, the last clean frame before the challenge.
pub fn evaluate_clip(
    clip: &ExtractedClip,
    run: &TrackerRun,
    cfg: &DiagnosisConfig,
) -> Result<ClipOutcome, EvaluationError> {
    if run.clip_id != clip.clip_id {
        return Err(EvaluationError::ClipMismatch {
            clip: clip.clip_id.clone(),
            run: run.clip_id.clone(),
        });
    }
    if run.predictions.len() != clip.len() {
        return Err(EvaluationError::LengthMismatch {
            clip_id: clip.clip_id.clone(),
            frames: clip.len(),
            predictions: run.predictions.len(),
        });
    }
    let ious: Vec<Option<f64>> = clip
        .groundtruth
        .iter()
        .zip(&run.predictions)
        .map(|(g, p)| compute_iou(g, p))
        .collect();

    let last_frame_iou = ious
        .last()
        .copied()
        .flatten()
        .ok_or_else(|| EvaluationError::HiddenLastFrame(clip.clip_id.clone()))?;
    // Frame 0 is visible, so some clean frame always has a defined IoU.
    let pre_challenge_iou = ious[..=clip.last_clean_frame()]
        .iter()
        .rev()
        .find_map(|x| *x)
        .unwrap_or(0.0);

    let verdict = if last_frame_iou >= cfg.tau_iou {
        Verdict::Success
    } else if pre_challenge_iou < cfg.tau_iou {
        Verdict::FailedBeforeChallenge
    } else {
        Verdict::FailedOnFactor
    };

    let scored: Vec<f64> = ious[1..].iter().filter_map(|x| *x).collect();
    let hits = scored.iter().filter(|&&x| x > cfg.success_threshold).count();
    let success_score = if scored.is_empty() {
        0.0
    } else {
        hits as f64 / scored.len() as f64
    };

    Ok(ClipOutcome {
        clip_id: clip.clip_id.clone(),
        factor: clip.factor,
        verdict,
        last_frame_iou,
        pre_challenge_iou,
        success_score,
    })
}

/// Scores every clip for one tracker in parallel. Outcomes are ordered by
/// clip id. Every clip needs a run.
pub fn evaluate_tracker(
    tracker: &str,
    clips: &[ExtractedClip],
    runs: &[TrackerRun],
    cfg: &DiagnosisConfig,
) -> Result<Vec<ClipOutcome>, EvaluationError> {
    let by_id: HashMap<&str, &TrackerRun> = runs.iter().map(|r| (r.clip_id.as_str(), r)).collect();
    let mut missing: Vec<String> = clips
        .iter()
        .filter(|c| !by_id.contains_key(c.clip_id.as_str()))
        .map(|c| c.clip_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(EvaluationError::MissingRuns {
            tracker: tracker.to_string(),
            clips: missing,
        });
    }
    let mut outcomes: Vec<ClipOutcome> = clips
        .par_iter()
        .map(|c| evaluate_clip(c, by_id[c.clip_id.as_str()], cfg))
        .collect::<Result<_, _>>()?;
    outcomes.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(outcomes)
}

/// What a failure is blamed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailureCause {
    Factor(FactorKind),
    /// The tracker was lost before the clip's challenge began.
    Others,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureCause::Factor(k) => f.write_str(k.code()),
            FailureCause::Others => f.write_str("Others"),
        }
    }
}

impl FromStr for FailureCause {
    type Err = crate::model::ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("others") {
            Ok(FailureCause::Others)
        } else {
            s.parse().map(FailureCause::Factor)
        }
    }
}

impl Serialize for FailureCause {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FailureCause {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Share of one tracker's failures per cause. Empty when nothing failed.
pub fn failure_proportions(outcomes: &[ClipOutcome]) -> BTreeMap<FailureCause, f64> {
    let mut counts: BTreeMap<FailureCause, usize> = BTreeMap::new();
    for o in outcomes {
        let cause = match o.verdict {
            Verdict::Success => continue,
            Verdict::FailedOnFactor => FailureCause::Factor(o.factor),
            Verdict::FailedBeforeChallenge => FailureCause::Others,
        };
        *counts.entry(cause).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(k, n)| (k, n as f64 / total as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub factor: FactorKind,
    pub n_clips: usize,
    pub n_failures: usize,
    pub failure_rate: f64,
    pub mean_success: f64,
    /// Population variance of the per-clip success scores.
    pub success_variance: f64,
    pub success_std: f64,
    pub per_clip_scores: Vec<f64>,
    /// Fewer than two clips: the variance says nothing.
    pub low_support: bool,
}

pub fn factor_stats(
    outcomes: &[ClipOutcome],
    factor: FactorKind,
    cfg: &DiagnosisConfig,
) -> Result<FactorStats, EvaluationError> {
    let mine: Vec<&ClipOutcome> = outcomes.iter().filter(|o| o.factor == factor).collect();
    if mine.is_empty() {
        return Err(EvaluationError::NoClips(factor));
    }
    let n = mine.len();
    let n_failures = mine
        .iter()
        .filter(|o| match o.verdict {
            Verdict::Success => false,
            Verdict::FailedOnFactor => true,
            Verdict::FailedBeforeChallenge => !cfg.exclude_others_from_failure_rate,
        })
        .count();
    let per_clip_scores: Vec<f64> = mine.iter().map(|o| o.success_score).collect();
    let mean = per_clip_scores.iter().sum::<f64>() / n as f64;
    let variance = per_clip_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(FactorStats {
        factor,
        n_clips: n,
        n_failures,
        failure_rate: n_failures as f64 / n as f64,
        mean_success: mean,
        success_variance: variance,
        success_std: variance.sqrt(),
        per_clip_scores,
        low_support: n < 2,
    })
}

/// Stats for every factor that has at least one outcome, in table order.
pub fn all_factor_stats(outcomes: &[ClipOutcome], cfg: &DiagnosisConfig) -> Vec<FactorStats> {
    FactorKind::ALL
        .into_iter()
        .filter_map(|f| factor_stats(outcomes, f, cfg).ok())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub tracker: String,
    pub mean_success: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRanking {
    pub factor: FactorKind,
    pub rows: Vec<RankingRow>,
}

/// Per-factor ranking: best mean success first, then lower failure rate,
/// then tracker name.
pub fn cross_tracker_table(stats: &BTreeMap<String, Vec<FactorStats>>) -> Vec<FactorRanking> {
    FactorKind::ALL
        .into_iter()
        .filter_map(|factor| {
            let mut rows: Vec<RankingRow> = stats
                .iter()
                .filter_map(|(name, list)| {
                    list.iter().find(|s| s.factor == factor).map(|s| RankingRow {
                        tracker: name.clone(),
                        mean_success: s.mean_success,
                        failure_rate: s.failure_rate,
                    })
                })
                .collect();
            if rows.is_empty() {
                return None;
            }
            rows.sort_by(|a, b| {
                b.mean_success
                    .total_cmp(&a.mean_success)
                    .then(a.failure_rate.total_cmp(&b.failure_rate))
                    .then_with(|| a.tracker.cmp(&b.tracker))
            });
            Some(FactorRanking { factor, rows })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_clips;
    use crate::model::{FactorSet, Rect, SequenceRecord};
    use FactorKind::*;

    fn bx(x: f64) -> BoundingBox {
        BoundingBox::Present(Rect::new(x, 0., 10., 10.).unwrap())
    }

    /// 12 clean frames then 8 IV frames: nc1 = 0..=11, c2 = 12..=19.
    fn iv_clip() -> ExtractedClip {
        let mut sets = vec![FactorSet::empty(); 12];
        sets.extend(vec![FactorSet::single(IlluminationVariation); 8]);
        let seq = SequenceRecord::new("s", vec![bx(0.); 20], sets).unwrap();
        extract_clips(&seq, &DiagnosisConfig::default()).unwrap().remove(0)
    }

    fn run(clip: &ExtractedClip, predictions: Vec<BoundingBox>) -> TrackerRun {
        TrackerRun {
            tracker_name: "t".into(),
            clip_id: clip.clip_id.clone(),
            predictions,
        }
    }

    fn outcome(factor: FactorKind, verdict: Verdict, score: f64) -> ClipOutcome {
        ClipOutcome {
            clip_id: String::new(),
            factor,
            verdict,
            last_frame_iou: 0.0,
            pre_challenge_iou: 0.0,
            success_score: score,
        }
    }

    #[test]
    fn perfect_run_succeeds() {
        let clip = iv_clip();
        let o = evaluate_clip(
            &clip,
            &run(&clip, clip.groundtruth.clone()),
            &DiagnosisConfig::default(),
        )
        .unwrap();
        assert_eq!(o.verdict, Verdict::Success);
        assert_eq!(o.success_score, 1.0);
        assert_eq!(o.last_frame_iou, 1.0);
    }

    #[test]
    fn lost_during_challenge() {
        let clip = iv_clip();
        let mut p = clip.groundtruth.clone();
        p[12..].iter_mut().for_each(|b| *b = bx(100.));
        let o = evaluate_clip(&clip, &run(&clip, p), &DiagnosisConfig::default()).unwrap();
        assert_eq!(o.verdict, Verdict::FailedOnFactor);
        // frames 1..=11 hit out of 19 scored frames
        assert_eq!(o.success_score, 11.0 / 19.0);
    }

    #[test]
    fn lost_before_challenge() {
        let clip = iv_clip();
        let mut p = clip.groundtruth.clone();
        p[1..].iter_mut().for_each(|b| *b = bx(100.));
        let o = evaluate_clip(&clip, &run(&clip, p), &DiagnosisConfig::default()).unwrap();
        assert_eq!(o.verdict, Verdict::FailedBeforeChallenge);
        assert_eq!(o.success_score, 0.0);
    }

    #[test]
    fn iou_of_exactly_half_is_success() {
        let clip = iv_clip();
        let mut p = clip.groundtruth.clone();
        // 10x10 vs 10x5 inside it: IoU = 50/100
        *p.last_mut().unwrap() = BoundingBox::Present(Rect::new(0., 0., 10., 5.).unwrap());
        let o = evaluate_clip(&clip, &run(&clip, p), &DiagnosisConfig::default()).unwrap();
        assert_eq!(o.last_frame_iou, 0.5);
        assert_eq!(o.verdict, Verdict::Success);
        // 0.5 is not above the success threshold
        assert_eq!(o.success_score, 18.0 / 19.0);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let clip = iv_clip();
        let err = evaluate_clip(&clip, &run(&clip, vec![bx(0.); 5]), &DiagnosisConfig::default()).unwrap_err();
        assert_eq!(
            err,
            EvaluationError::LengthMismatch {
                clip_id: clip.clip_id.clone(),
                frames: 20,
                predictions: 5
            }
        );
        let mut r = run(&clip, clip.groundtruth.clone());
        r.clip_id = "other".into();
        assert!(matches!(
            evaluate_clip(&clip, &r, &DiagnosisConfig::default()),
            Err(EvaluationError::ClipMismatch { .. })
        ));
    }

    #[test]
    fn missing_runs_are_listed() {
        let clip = iv_clip();
        let err = evaluate_tracker("t", &[clip], &[], &DiagnosisConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "tracker `t` has no result for clip(s): s_IV_12");
    }

    #[test]
    fn proportions() {
        let all_sv = [outcome(ShapeVariation, Verdict::FailedOnFactor, 0.)];
        assert_eq!(
            failure_proportions(&all_sv),
            BTreeMap::from([(FailureCause::Factor(ShapeVariation), 1.0)])
        );

        let mixed = [
            outcome(Occlusion, Verdict::FailedOnFactor, 0.),
            outcome(Occlusion, Verdict::FailedOnFactor, 0.),
            outcome(ShapeVariation, Verdict::FailedOnFactor, 0.),
            outcome(MotionBlur, Verdict::FailedBeforeChallenge, 0.),
            outcome(MotionBlur, Verdict::Success, 1.),
        ];
        let p = failure_proportions(&mixed);
        assert_eq!(p[&FailureCause::Factor(Occlusion)], 0.5);
        assert_eq!(p[&FailureCause::Factor(ShapeVariation)], 0.25);
        assert_eq!(p[&FailureCause::Others], 0.25);
        assert_eq!(p.len(), 3);

        assert!(failure_proportions(&[outcome(Occlusion, Verdict::Success, 1.)]).is_empty());
    }

    #[test]
    fn stats_examples() {
        let cfg = DiagnosisConfig::default();
        let ok: Vec<_> = (0..4).map(|_| outcome(Rotation, Verdict::Success, 1.)).collect();
        let s = factor_stats(&ok, Rotation, &cfg).unwrap();
        assert_eq!((s.failure_rate, s.mean_success, s.success_variance), (0.0, 1.0, 0.0));

        let two = [
            outcome(Rotation, Verdict::FailedOnFactor, 0.),
            outcome(Rotation, Verdict::Success, 1.),
        ];
        let s = factor_stats(&two, Rotation, &cfg).unwrap();
        assert_eq!((s.failure_rate, s.mean_success, s.success_variance), (0.5, 0.5, 0.25));
        assert_eq!(s.success_std, 0.5);

        let one = [outcome(Rotation, Verdict::Success, 0.7)];
        let s = factor_stats(&one, Rotation, &cfg).unwrap();
        assert_eq!(s.success_variance, 0.0);
        assert!(s.low_support);

        assert_eq!(
            factor_stats(&one, Occlusion, &cfg).unwrap_err(),
            EvaluationError::NoClips(Occlusion)
        );
    }

    #[test]
    fn others_switch_changes_numerator_only() {
        let o = [
            outcome(Rotation, Verdict::FailedBeforeChallenge, 0.),
            outcome(Rotation, Verdict::FailedOnFactor, 0.),
            outcome(Rotation, Verdict::Success, 1.),
            outcome(Rotation, Verdict::Success, 1.),
        ];
        let literal = factor_stats(&o, Rotation, &DiagnosisConfig::default()).unwrap();
        assert_eq!(literal.failure_rate, 0.5);
        let cfg = DiagnosisConfig {
            exclude_others_from_failure_rate: true,
            ..Default::default()
        };
        let strict = factor_stats(&o, Rotation, &cfg).unwrap();
        assert_eq!(strict.failure_rate, 0.25);
        assert_eq!(strict.mean_success, literal.mean_success);
    }

    #[test]
    fn ranking_order() {
        let st = |f, mean, rate| FactorStats {
            factor: f,
            n_clips: 1,
            n_failures: 0,
            failure_rate: rate,
            mean_success: mean,
            success_variance: 0.,
            success_std: 0.,
            per_clip_scores: vec![mean],
            low_support: true,
        };
        let one = BTreeMap::from([("A".to_string(), vec![st(Occlusion, 0.8, 0.)])]);
        let t = cross_tracker_table(&one);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].rows.len(), 1);

        let two = BTreeMap::from([
            ("A".to_string(), vec![st(Occlusion, 0.6, 0.), st(Rotation, 0.5, 0.1)]),
            ("B".to_string(), vec![st(Occlusion, 0.8, 0.), st(Rotation, 0.5, 0.2)]),
            ("C".to_string(), vec![st(Rotation, 0.5, 0.1)]),
        ]);
        let t = cross_tracker_table(&two);
        let names = |i: usize| t[i].rows.iter().map(|r| r.tracker.as_str()).collect::<Vec<_>>();
        assert_eq!(t[0].factor, Occlusion);
        assert_eq!(names(0), ["B", "A"]);
        assert_eq!(t[1].factor, Rotation);
        assert_eq!(names(1), ["A", "C", "B"]);
    }
}

//! Diagnosis report: assembly, canonical JSON form and human-readable output.

mod human;
mod svg;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::{
    all_factor_stats, cross_tracker_table, failure_proportions, ClipOutcome, FactorRanking, FactorStats, FailureCause,
};
use crate::extraction::{census, ExtractedClip};
use crate::model::{DiagnosisConfig, FactorKind};

pub use human::{render_human, Chart, HumanReport, CHART_FILES};

pub const TOOL_VERSION: &str = concat!("trackdiag ", env!("CARGO_PKG_VERSION"));

/// Decimal places kept for every fraction stored in a report.
pub const REPORT_DECIMALS: i32 = 4;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("tracker `{tracker}` has an outcome for unknown clip `{clip_id}`")]
    DanglingClip { tracker: String, clip_id: String },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report digest mismatch: file says {found}, content hashes to {expected}")]
    DigestMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSummary {
    pub clip_id: String,
    pub source_id: String,
    pub factor: FactorKind,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub census: BTreeMap<FactorKind, usize>,
    pub total_clips: usize,
    pub total_frames: usize,
    pub clips: Vec<ClipSummary>,
}

impl CorpusSummary {
    pub fn from_clips(clips: &[ExtractedClip]) -> Self {
        let mut summaries: Vec<ClipSummary> = clips
            .iter()
            .map(|c| ClipSummary {
                clip_id: c.clip_id.clone(),
                source_id: c.source_id.clone(),
                factor: c.factor,
                frames: c.len(),
            })
            .collect();
        summaries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        Self {
            census: census(clips),
            total_clips: clips.len(),
            total_frames: clips.iter().map(ExtractedClip::len).sum(),
            clips: summaries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerAnalysis {
    pub tracker: String,
    pub failure_proportions: BTreeMap<FailureCause, f64>,
    pub factor_stats: Vec<FactorStats>,
    pub outcomes: Vec<ClipOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub tool_version: String,
    pub config: DiagnosisConfig,
    pub corpus: CorpusSummary,
    pub trackers: Vec<TrackerAnalysis>,
    pub rankings: Vec<FactorRanking>,
    /// SHA-256 (hex) of the canonical JSON of the report without this field.
    pub digest: String,
}

pub fn quantize(x: f64) -> f64 {
    let scale = 10f64.powi(REPORT_DECIMALS);
    (x * scale).round() / scale
}

fn quantize_stats(s: &mut FactorStats) {
    for x in [
        &mut s.failure_rate,
        &mut s.mean_success,
        &mut s.success_variance,
        &mut s.success_std,
    ] {
        *x = quantize(*x);
    }
    s.per_clip_scores.iter_mut().for_each(|x| *x = quantize(*x));
}

fn quantize_outcome(o: &mut ClipOutcome) {
    o.last_frame_iou = quantize(o.last_frame_iou);
    o.pre_challenge_iou = quantize(o.pre_challenge_iou);
    o.success_score = quantize(o.success_score);
}

/// Assembles the report from full-precision outcomes. Metrics are computed
/// first and stored rounded to [`REPORT_DECIMALS`] places.
pub fn build_report(
    corpus: CorpusSummary,
    outcomes: &BTreeMap<String, Vec<ClipOutcome>>,
    cfg: &DiagnosisConfig,
) -> Result<DiagnosisReport, ReportError> {
    let known: HashSet<&str> = corpus.clips.iter().map(|c| c.clip_id.as_str()).collect();
    for (tracker, list) in outcomes {
        if let Some(o) = list.iter().find(|o| !known.contains(o.clip_id.as_str())) {
            return Err(ReportError::DanglingClip {
                tracker: tracker.clone(),
                clip_id: o.clip_id.clone(),
            });
        }
    }

    let stats: BTreeMap<String, Vec<FactorStats>> = outcomes
        .iter()
        .map(|(name, list)| (name.clone(), all_factor_stats(list, cfg)))
        .collect();
    let mut rankings = cross_tracker_table(&stats);
    for r in &mut rankings {
        for row in &mut r.rows {
            row.mean_success = quantize(row.mean_success);
            row.failure_rate = quantize(row.failure_rate);
        }
    }

    let trackers = outcomes
        .iter()
        .map(|(name, list)| {
            let mut factor_stats = stats[name].clone();
            factor_stats.iter_mut().for_each(quantize_stats);
            let mut outcomes = list.clone();
            outcomes.iter_mut().for_each(quantize_outcome);
            TrackerAnalysis {
                tracker: name.clone(),
                failure_proportions: failure_proportions(list)
                    .into_iter()
                    .map(|(k, v)| (k, quantize(v)))
                    .collect(),
                factor_stats,
                outcomes,
            }
        })
        .collect();

    let mut report = DiagnosisReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        corpus,
        trackers,
        rankings,
        digest: String::new(),
    };
    report = canonical(&report);
    report.digest = content_digest(&report);
    Ok(report)
}

/// Copy of the report in canonical order: trackers by name, clips and
/// outcomes by id, stats and rankings by factor.
pub fn canonical(report: &DiagnosisReport) -> DiagnosisReport {
    let mut r = report.clone();
    r.corpus.clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    r.trackers.sort_by(|a, b| a.tracker.cmp(&b.tracker));
    for t in &mut r.trackers {
        t.outcomes.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        t.factor_stats.sort_by_key(|s| s.factor);
    }
    r.rankings.sort_by_key(|k| k.factor);
    r
}

fn canonical_value(report: &DiagnosisReport) -> serde_json::Value {
    let mut v = serde_json::to_value(canonical(report)).expect("report serializes");
    v.sort_all_objects();
    v
}

/// Hash of the canonical body; the `digest` field itself is excluded.
pub fn content_digest(report: &DiagnosisReport) -> String {
    let mut v = canonical_value(report);
    v.as_object_mut().expect("object").remove("digest");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub fn verify_digest(report: &DiagnosisReport) -> Result<(), ReportError> {
    let expected = content_digest(report);
    if expected != report.digest {
        return Err(ReportError::DigestMismatch {
            expected,
            found: report.digest.clone(),
        });
    }
    Ok(())
}

/// Canonical, key-sorted, pretty-printed JSON ending in a newline.
pub fn render_structured(report: &DiagnosisReport) -> String {
    let mut s = serde_json::to_string_pretty(&canonical_value(report)).expect("report serializes");
    s.push('\n');
    s
}

/// Parses a structured report and checks its digest.
pub fn parse_structured(text: &str) -> Result<DiagnosisReport, ReportError> {
    let report: DiagnosisReport = serde_json::from_str(text)?;
    verify_digest(&report)?;
    Ok(report)
}

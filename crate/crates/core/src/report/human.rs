use std::fmt::Write;

use super::svg::{grouped_bars, Series};
use super::DiagnosisReport;
use crate::evaluation::{FactorStats, FailureCause};
use crate::model::FactorKind;

/// File names of the four charts, in emission order.
pub const CHART_FILES: [&str; 4] = [
    "failure_proportions.svg",
    "failure_rates.svg",
    "mean_success.svg",
    "consistency.svg",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub file_name: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanReport {
    /// Contents of `report.md`.
    pub markdown: String,
    /// Empty when the report holds no tracker analysis.
    pub charts: Vec<Chart>,
}

fn stat_of(stats: &[FactorStats], f: FactorKind) -> Option<&FactorStats> {
    stats.iter().find(|s| s.factor == f)
}

fn per_factor(report: &DiagnosisReport, factors: &[FactorKind], pick: impl Fn(&FactorStats) -> f64) -> Vec<Series> {
    report
        .trackers
        .iter()
        .map(|t| Series {
            name: t.tracker.clone(),
            values: factors
                .iter()
                .map(|&f| stat_of(&t.factor_stats, f).map(&pick))
                .collect(),
            whiskers: None,
        })
        .collect()
}

fn charts(report: &DiagnosisReport) -> Vec<Chart> {
    let factors: Vec<FactorKind> = FactorKind::ALL
        .into_iter()
        .filter(|f| report.rankings.iter().any(|r| r.factor == *f))
        .collect();
    let factor_names: Vec<String> = factors.iter().map(|f| f.code().to_string()).collect();

    let causes: Vec<FailureCause> = FactorKind::ALL
        .into_iter()
        .map(FailureCause::Factor)
        .chain([FailureCause::Others])
        .filter(|c| report.trackers.iter().any(|t| t.failure_proportions.contains_key(c)))
        .collect();
    let cause_names: Vec<String> = causes.iter().map(|c| c.to_string()).collect();
    let proportions: Vec<Series> = report
        .trackers
        .iter()
        .map(|t| Series {
            name: t.tracker.clone(),
            values: causes.iter().map(|c| t.failure_proportions.get(c).copied()).collect(),
            whiskers: None,
        })
        .collect();

    let mut consistency = per_factor(report, &factors, |s| s.mean_success);
    for (series, t) in consistency.iter_mut().zip(&report.trackers) {
        series.whiskers = Some(
            factors
                .iter()
                .map(|&f| stat_of(&t.factor_stats, f).map(|s| s.success_std))
                .collect(),
        );
    }

    let bodies = [
        grouped_bars(
            "Share of failures by cause",
            "fraction of failures",
            &cause_names,
            &proportions,
        ),
        grouped_bars(
            "Failure rate per challenge factor",
            "failure rate",
            &factor_names,
            &per_factor(report, &factors, |s| s.failure_rate),
        ),
        grouped_bars(
            "Mean success score per challenge factor",
            "success score",
            &factor_names,
            &per_factor(report, &factors, |s| s.mean_success),
        ),
        grouped_bars(
            "Consistency: mean success ± standard deviation",
            "success score",
            &factor_names,
            &consistency,
        ),
    ];
    CHART_FILES
        .iter()
        .zip(bodies)
        .map(|(name, svg)| Chart {
            file_name: name.to_string(),
            svg,
        })
        .collect()
}

/// Markdown summary plus, when any tracker was analyzed, the four charts.
pub fn render_human(report: &DiagnosisReport) -> HumanReport {
    let mut md = String::new();
    let _ = writeln!(md, "# Tracker diagnosis report\n");
    let _ = writeln!(
        md,
        "Generated by {}. Report digest `{}`.\n",
        report.tool_version, report.digest
    );

    let c = &report.config;
    let _ = writeln!(md, "## Settings\n");
    let _ = writeln!(
        md,
        "tau_op = {}, tau_s = {}, tau_e = {}, max_prefix = {}, tau_iou = {}, success_threshold = {}, exclude_others_from_failure_rate = {}\n",
        c.tau_op, c.tau_s, c.tau_e, c.max_prefix, c.tau_iou, c.success_threshold, c.exclude_others_from_failure_rate
    );

    let _ = writeln!(md, "## Corpus\n");
    let _ = writeln!(
        md,
        "{} clips, {} frames.\n",
        report.corpus.total_clips, report.corpus.total_frames
    );
    let _ = writeln!(md, "| Factor | Description | Clips |\n|---|---|---:|");
    for (f, n) in &report.corpus.census {
        let _ = writeln!(md, "| {} | {} | {} |", f, f.description(), n);
    }
    md.push('\n');

    if report.trackers.is_empty() {
        let _ = writeln!(md, "No tracker results were analyzed.");
        return HumanReport {
            markdown: md,
            charts: Vec::new(),
        };
    }

    let _ = writeln!(md, "## Failure causes\n");
    for t in &report.trackers {
        if t.failure_proportions.is_empty() {
            let _ = writeln!(md, "- **{}**: no failures", t.tracker);
            continue;
        }
        let parts: Vec<String> = t
            .failure_proportions
            .iter()
            .map(|(k, v)| format!("{k} {v:.3}"))
            .collect();
        let _ = writeln!(md, "- **{}**: {}", t.tracker, parts.join(", "));
    }
    let _ = writeln!(md, "\n![failure proportions](charts/{})\n", CHART_FILES[0]);

    let _ = writeln!(md, "## Per-factor results\n");
    let _ = writeln!(
        md,
        "| Tracker | Factor | Clips | Failures | Failure rate | Mean success | Variance | Std. dev. |\n|---|---|---:|---:|---:|---:|---:|---:|"
    );
    for t in &report.trackers {
        for s in &t.factor_stats {
            let _ = writeln!(
                md,
                "| {} | {} | {}{} | {} | {:.3} | {:.3} | {:.3} | {:.3} |",
                t.tracker,
                s.factor,
                s.n_clips,
                if s.low_support { " (low support)" } else { "" },
                s.n_failures,
                s.failure_rate,
                s.mean_success,
                s.success_variance,
                s.success_std
            );
        }
    }
    let _ = writeln!(
        md,
        "\n![failure rates](charts/{})\n![consistency](charts/{})\n",
        CHART_FILES[1], CHART_FILES[3]
    );

    let _ = writeln!(md, "## Ranking per factor\n");
    for r in &report.rankings {
        let order: Vec<String> = r
            .rows
            .iter()
            .map(|row| format!("{} ({:.3})", row.tracker, row.mean_success))
            .collect();
        let _ = writeln!(md, "- **{}**: {}", r.factor, order.join(" > "));
    }
    let _ = writeln!(md, "\n![mean success](charts/{})", CHART_FILES[2]);

    HumanReport {
        markdown: md,
        charts: charts(report),
    }
}

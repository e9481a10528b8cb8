//! `trackdiag` command line: annotate, extract, evaluate, report, simulate.
//!
//! Every command computes all of its outputs in memory before writing any of
//! them, and each file is written atomically. Exit codes: 0 on success, 1 for
//! usage errors, 2 for data or validation errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{annotate_shape_variation, derive_compound_factors, validate_labels};
use crate::evaluation::{evaluate_tracker, TrackerRun};
use crate::extraction::extract_corpus;
use crate::io::{self, CorpusManifest, EvaluationHeader, FormatError, ManifestEntry, TrackerOutcomes};
use crate::model::{DiagnosisConfig, FactorKind, SequenceRecord};
use crate::report::{build_report, render_human, render_structured, CorpusSummary};
use crate::simulate::{
    random_layout, raw_labels, synth_sequence, synth_tracker_run, SequenceLayout, SimProfile, SimRng,
};

pub const OUT_ENV: &str = "TRACKDIAG_OUT";
const DEFAULT_OUT: &str = "trackdiag-out";

#[derive(Debug, Parser)]
#[command(
    name = "trackdiag",
    version,
    about = "Per-factor diagnosis of single-object trackers"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// TOML file overriding the default thresholds.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label shape variation and derive compound factors.
    Annotate { manifest: PathBuf },
    /// Cut single-factor clips from annotated sequences.
    Extract { manifest: PathBuf },
    /// Score tracker result files against extracted clips.
    Evaluate {
        clips: PathBuf,
        results: PathBuf,
        /// Comma-separated tracker names (default: every results subdirectory).
        #[arg(long, value_delimiter = ',')]
        trackers: Vec<String>,
    },
    /// Build the diagnosis report from one or more evaluation directories.
    Report {
        #[arg(required = true)]
        outcomes: Vec<PathBuf>,
    },
    /// Generate a synthetic corpus and synthetic tracker results.
    Simulate {
        /// Layout CSV; without it, random layouts are generated.
        layout: Option<PathBuf>,
        /// Tracker profile TOML (default: one tracker failing 30% of clips).
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of random sequences when no layout is given.
        #[arg(long, default_value_t = 20)]
        sequences: usize,
        #[arg(long, default_value_t = 200)]
        max_frames: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(data)?;
    pool.install(|| match &cli.command {
        Command::Annotate { manifest } => cmd_annotate(&cli.global, manifest),
        Command::Extract { manifest } => cmd_extract(&cli.global, manifest),
        Command::Evaluate {
            clips,
            results,
            trackers,
        } => cmd_evaluate(&cli.global, clips, results, trackers),
        Command::Report { outcomes } => cmd_report(&cli.global, outcomes),
        Command::Simulate {
            layout,
            profile,
            seed,
            sequences,
            max_frames,
        } => cmd_simulate(
            &cli.global,
            layout.as_deref(),
            profile.as_deref(),
            *seed,
            *sequences,
            *max_frames,
        ),
    })
}

fn load_config(global: &GlobalOpts, fallback: Option<&Path>) -> Result<DiagnosisConfig, CliError> {
    match global.config.as_deref().or(fallback) {
        Some(p) => Ok(io::read_config(p)?),
        None => Ok(DiagnosisConfig::default()),
    }
}

fn out_dir(global: &GlobalOpts, fallback: Option<&Path>) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Relative path → file contents, written under `root` in one go.
type Outputs = BTreeMap<PathBuf, String>;

fn write_outputs(root: &Path, outputs: &Outputs) -> Result<(), CliError> {
    for (rel, contents) in outputs {
        io::write_atomic(&root.join(rel), contents)?;
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<CorpusManifest, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("manifest {} not found", path.display())));
    }
    Ok(CorpusManifest::load(path)?)
}

/// Sequence files plus a manifest pointing at them, relative to the output.
fn corpus_outputs(seqs: &[SequenceRecord], with_compound: bool, outputs: &mut Outputs) -> CorpusManifest {
    let mut manifest = CorpusManifest::default();
    for s in seqs {
        let dir = PathBuf::from("sequences").join(&s.sequence_id);
        outputs.insert(dir.join("groundtruth.txt"), io::format_boxes(&s.groundtruth));
        outputs.insert(
            dir.join("annotation.csv"),
            io::format_annotation(&s.labels, with_compound),
        );
        manifest.sequences.push(ManifestEntry {
            id: s.sequence_id.clone(),
            groundtruth: dir.join("groundtruth.txt"),
            annotation: dir.join("annotation.csv"),
        });
    }
    manifest
}

fn finalize(seq: &SequenceRecord, cfg: &DiagnosisConfig) -> Result<SequenceRecord, CliError> {
    let done = derive_compound_factors(&annotate_shape_variation(seq).map_err(data)?, cfg).map_err(data)?;
    let violations = validate_labels(&done);
    if let Some(v) = violations.first() {
        return Err(CliError::Data(format!("sequence `{}`: {v}", done.sequence_id)));
    }
    Ok(done)
}

pub fn cmd_annotate(global: &GlobalOpts, manifest_path: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let cfg = load_config(global, manifest.config.as_deref())?;
    let out = out_dir(global, manifest.output.as_deref());
    let seqs = manifest.read_sequences()?;
    let done: Vec<SequenceRecord> = seqs.par_iter().map(|s| finalize(s, &cfg)).collect::<Result<_, _>>()?;

    let mut outputs = Outputs::new();
    let m = corpus_outputs(&done, true, &mut outputs);
    outputs.insert(PathBuf::from("manifest.toml"), m.to_toml());
    write_outputs(&out, &outputs)?;
    println!("annotated {} sequence(s) into {}", done.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct CensusFile {
    census: BTreeMap<FactorKind, usize>,
    total_clips: usize,
    total_frames: usize,
}

pub fn cmd_extract(global: &GlobalOpts, manifest_path: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let cfg = load_config(global, manifest.config.as_deref())?;
    let out = out_dir(global, manifest.output.as_deref());
    let seqs = manifest.read_sequences()?;
    for s in &seqs {
        let raw = s.labels.iter().all(|f| !f.active.has_compound());
        if raw && finalize(s, &cfg).map(|d| d.labels != s.labels).unwrap_or(false) {
            log::warn!(
                "sequence `{}` looks unannotated; run `trackdiag annotate` first",
                s.sequence_id
            );
        }
    }
    let clips = extract_corpus(&seqs, &cfg).map_err(data)?;

    let mut outputs = Outputs::new();
    for c in &clips {
        for (name, contents) in io::clip_files(c) {
            outputs.insert(PathBuf::from("clips").join(&c.clip_id).join(name), contents);
        }
    }
    let summary = CorpusSummary::from_clips(&clips);
    let census = CensusFile {
        census: summary.census,
        total_clips: summary.total_clips,
        total_frames: summary.total_frames,
    };
    outputs.insert(PathBuf::from("census.json"), io::to_canonical_json(&census));
    write_outputs(&out, &outputs)?;
    println!("extracted {} clip(s) into {}", clips.len(), out.display());
    Ok(())
}

fn list_subdirs(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

pub fn cmd_evaluate(
    global: &GlobalOpts,
    clips_dir: &Path,
    results_dir: &Path,
    trackers: &[String],
) -> Result<(), CliError> {
    for d in [clips_dir, results_dir] {
        if !d.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", d.display())));
        }
    }
    let cfg = load_config(global, None)?;
    let out = out_dir(global, None);
    let clips = io::read_clips(clips_dir)?;
    let trackers = if trackers.is_empty() {
        list_subdirs(results_dir)?
    } else {
        trackers.to_vec()
    };
    if trackers.is_empty() {
        return Err(CliError::Data(format!(
            "no tracker results under {}",
            results_dir.display()
        )));
    }

    let mut outputs = Outputs::new();
    for name in &trackers {
        let dir = results_dir.join(name);
        let missing: Vec<&str> = clips
            .iter()
            .filter(|c| !dir.join(format!("{}.txt", c.clip_id)).is_file())
            .map(|c| c.clip_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Data(format!(
                "tracker `{name}` has no result file for clip(s): {}",
                missing.join(", ")
            )));
        }
        let runs: Vec<TrackerRun> = clips
            .par_iter()
            .map(|c| {
                Ok(TrackerRun {
                    tracker_name: name.clone(),
                    clip_id: c.clip_id.clone(),
                    predictions: io::read_boxes(&dir.join(format!("{}.txt", c.clip_id)))?,
                })
            })
            .collect::<Result<_, FormatError>>()?;
        let outcomes = evaluate_tracker(name, &clips, &runs, &cfg).map_err(data)?;
        let file = TrackerOutcomes {
            tracker: name.clone(),
            outcomes,
        };
        outputs.insert(
            PathBuf::from(format!("{name}{}", io::OUTCOMES_SUFFIX)),
            io::to_canonical_json(&file),
        );
    }
    let header = EvaluationHeader {
        config: cfg,
        corpus: CorpusSummary::from_clips(&clips),
    };
    outputs.insert(PathBuf::from(io::EVALUATION_HEADER), io::to_canonical_json(&header));
    write_outputs(&out, &outputs)?;
    println!(
        "evaluated {} tracker(s) on {} clip(s) into {}",
        trackers.len(),
        clips.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_report(global: &GlobalOpts, outcome_dirs: &[PathBuf]) -> Result<(), CliError> {
    let out = out_dir(global, None);
    let mut header: Option<EvaluationHeader> = None;
    let mut outcomes = BTreeMap::new();
    for dir in outcome_dirs {
        let h_path = dir.join(io::EVALUATION_HEADER);
        if !h_path.is_file() {
            return Err(CliError::Usage(format!(
                "{} is not an evaluation directory",
                dir.display()
            )));
        }
        let h: EvaluationHeader = io::read_json(&h_path)?;
        match &header {
            Some(prev) if prev != &h => {
                return Err(CliError::Data(format!(
                    "{} was evaluated with a different corpus or config",
                    dir.display()
                )))
            }
            Some(_) => {}
            None => header = Some(h),
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(data)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(io::OUTCOMES_SUFFIX))
            .collect();
        files.sort();
        for f in files {
            let t: TrackerOutcomes = io::read_json(&f)?;
            if outcomes.insert(t.tracker.clone(), t.outcomes).is_some() {
                return Err(CliError::Data(format!(
                    "tracker `{}` appears more than once",
                    t.tracker
                )));
            }
        }
    }
    let header = header.expect("at least one outcomes directory");
    let cfg = match &global.config {
        Some(p) => io::read_config(p)?,
        None => header.config.clone(),
    };
    let report = build_report(header.corpus, &outcomes, &cfg).map_err(data)?;
    let human = render_human(&report);

    let mut outputs = Outputs::new();
    outputs.insert(PathBuf::from("report.tkreport.json"), render_structured(&report));
    outputs.insert(PathBuf::from("report.md"), human.markdown);
    for c in human.charts {
        outputs.insert(PathBuf::from("charts").join(c.file_name), c.svg);
    }
    write_outputs(&out, &outputs)?;
    println!("report for {} tracker(s) written to {}", outcomes.len(), out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackerProfile {
    name: String,
    #[serde(default = "default_drift")]
    drift: f64,
    #[serde(default)]
    failure_probability: BTreeMap<FactorKind, f64>,
}

fn default_drift() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(rename = "tracker")]
    trackers: Vec<TrackerProfile>,
}

#[derive(Serialize)]
struct PlantedTruth {
    seed: u64,
    trackers: BTreeMap<String, BTreeMap<FactorKind, f64>>,
}

pub fn cmd_simulate(
    global: &GlobalOpts,
    layout: Option<&Path>,
    profile: Option<&Path>,
    seed: u64,
    n_random: usize,
    max_frames: usize,
) -> Result<(), CliError> {
    let cfg = load_config(global, None)?;
    let out = out_dir(global, None);
    let layouts: Vec<SequenceLayout> = match layout {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Usage(format!("layout {} not found", p.display())));
            }
            io::parse_layouts(&io::read_text(p)?, p)?
        }
        None => {
            if max_frames < 20 {
                return Err(CliError::Usage("--max-frames must be at least 20".into()));
            }
            let mut rng = SimRng::new(seed);
            (0..n_random)
                .map(|i| random_layout(&mut rng, &format!("sim{i:04}"), max_frames))
                .collect()
        }
    };
    let trackers: Vec<(String, SimProfile)> = match profile {
        Some(p) => {
            let file: ProfileFile = io::read_toml(p)?;
            file.trackers
                .into_iter()
                .map(|t| {
                    let sp = SimProfile {
                        failure_probability: t.failure_probability,
                        drift: t.drift,
                        seed: SimRng::keyed(seed, &t.name).next_u64(),
                    };
                    (t.name, sp)
                })
                .collect()
        }
        None => vec![(
            "sim".to_string(),
            SimProfile::uniform(0.3, SimRng::keyed(seed, "sim").next_u64()),
        )],
    };
    for (name, p) in &trackers {
        p.validate()
            .map_err(|e| CliError::Data(format!("tracker `{name}`: {e}")))?;
    }

    let seqs: Vec<SequenceRecord> = layouts
        .iter()
        .map(|l| synth_sequence(l, seed))
        .collect::<Result<_, _>>()
        .map_err(data)?;
    let raw: Vec<SequenceRecord> = seqs.iter().map(raw_labels).collect();
    let finalized: Vec<SequenceRecord> = raw.par_iter().map(|s| finalize(s, &cfg)).collect::<Result<_, _>>()?;
    let clips = extract_corpus(&finalized, &cfg).map_err(data)?;

    let mut outputs = Outputs::new();
    let manifest = corpus_outputs(&raw, false, &mut outputs);
    outputs.insert(PathBuf::from("manifest.toml"), manifest.to_toml());
    outputs.insert(PathBuf::from("layout.csv"), io::format_layouts(&layouts));
    for (name, p) in &trackers {
        let runs: Vec<(String, String)> = clips
            .par_iter()
            .map(|c| {
                (
                    c.clip_id.clone(),
                    io::format_boxes(&synth_tracker_run(c, p, name).predictions),
                )
            })
            .collect();
        for (id, text) in runs {
            outputs.insert(PathBuf::from("results").join(name).join(format!("{id}.txt")), text);
        }
    }
    let truth = PlantedTruth {
        seed,
        trackers: trackers
            .iter()
            .map(|(n, p)| (n.clone(), p.failure_probability.clone()))
            .collect(),
    };
    outputs.insert(PathBuf::from("truth.json"), io::to_canonical_json(&truth));
    write_outputs(&out, &outputs)?;
    println!(
        "simulated {} sequence(s), {} clip(s), {} tracker(s) into {}",
        seqs.len(),
        clips.len(),
        trackers.len(),
        out.display()
    );
    Ok(())
}

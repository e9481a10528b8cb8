//! On-disk formats.
//!
//! * groundtruth / result files: one frame per line, `x,y,w,h` (comma, tab
//!   or space separated); `absent` or a non-positive size marks an invisible
//!   target;
//! * annotation files: CSV with header `frame,occ,rot,ov,bc,iv,mb,sv,o-b,o-r`
//!   and 0/1 flags, factor columns optional on input;
//! * layout files: CSV `sequence,frames,factor,start,length[,hidden]`;
//! * manifests, configs and simulation profiles: TOML;
//! * clip metadata and evaluation outputs: key-sorted JSON.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::ClipOutcome;
use crate::extraction::{ExtractedClip, FrameRange};
use crate::model::{BoundingBox, DiagnosisConfig, FactorKind, FactorSet, FrameLabels, SequenceRecord};
use crate::report::CorpusSummary;
use crate::simulate::{PlantedRun, SequenceLayout};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl FormatError {
    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path)
        .map(|s| s.replace("\r\n", "\n").replace('\r', "\n"))
        .map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn parse_boxes(text: &str, path: &Path) -> Result<Vec<BoundingBox>, FormatError> {
    let text = text.replace("\r\n", "\n");
    let lines: Vec<&str> = text.trim_end_matches('\n').split('\n').collect();
    if lines == [""] {
        return Ok(Vec::new());
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let line = line.trim();
            if line.eq_ignore_ascii_case("absent") {
                return Ok(BoundingBox::Absent);
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() != 4 {
                return Err(FormatError::parse(
                    path,
                    i + 1,
                    format!("expected x,y,w,h, got `{line}`"),
                ));
            }
            let mut v = [0.0; 4];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f64>()
                    .map_err(|_| FormatError::parse(path, i + 1, format!("`{f}` is not a number")))?;
            }
            BoundingBox::from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| FormatError::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        match b {
            BoundingBox::Absent => out.push_str("absent\n"),
            BoundingBox::Present(r) => out.push_str(&format!("{},{},{},{}\n", r.x, r.y, r.w, r.h)),
        }
    }
    out
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>, FormatError> {
    parse_boxes(&read_text(path)?, path)
}

fn column_name(f: FactorKind) -> String {
    f.code().to_ascii_lowercase()
}

pub fn parse_annotation(text: &str, path: &Path) -> Result<Vec<FactorSet>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| FormatError::parse(path, 1, e.to_string()))?
        .clone();
    let mut columns = Vec::new();
    let mut frame_col = None;
    for (i, h) in headers.iter().enumerate() {
        if h.eq_ignore_ascii_case("frame") {
            frame_col = Some(i);
        } else {
            let f: FactorKind = h
                .parse()
                .map_err(|_| FormatError::parse(path, 1, format!("unknown column `{h}`")))?;
            columns.push((i, f));
        }
    }
    let frame_col = frame_col.ok_or_else(|| FormatError::parse(path, 1, "missing `frame` column"))?;

    let mut sets = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| FormatError::parse(path, line, e.to_string()))?;
        let frame: usize = rec[frame_col]
            .parse()
            .map_err(|_| FormatError::parse(path, line, format!("bad frame index `{}`", &rec[frame_col])))?;
        if frame != row {
            return Err(FormatError::parse(
                path,
                line,
                format!("expected frame {row}, found {frame}"),
            ));
        }
        let mut set = FactorSet::empty();
        for &(i, f) in &columns {
            match &rec[i] {
                "0" => {}
                "1" => set.insert(f),
                other => {
                    return Err(FormatError::parse(
                        path,
                        line,
                        format!("flag `{other}` for {f} is not 0 or 1"),
                    ))
                }
            }
        }
        sets.push(set);
    }
    Ok(sets)
}

/// Annotation CSV for the given labels; compound columns are written only
/// when `with_compound` is set.
pub fn format_annotation(labels: &[FrameLabels], with_compound: bool) -> String {
    let factors: Vec<FactorKind> = if with_compound {
        FactorKind::ALL.to_vec()
    } else {
        FactorKind::SIMPLE.to_vec()
    };
    let mut out = String::from("frame");
    for f in &factors {
        out.push(',');
        out.push_str(&column_name(*f));
    }
    out.push('\n');
    for l in labels {
        out.push_str(&l.frame_index.to_string());
        for f in &factors {
            out.push_str(if l.active.contains(*f) { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

pub fn read_annotation(path: &Path) -> Result<Vec<FactorSet>, FormatError> {
    parse_annotation(&read_text(path)?, path)
}

pub fn read_sequence(id: &str, groundtruth: &Path, annotation: &Path) -> Result<SequenceRecord, FormatError> {
    let boxes = read_boxes(groundtruth)?;
    let sets = read_annotation(annotation)?;
    SequenceRecord::new(id, boxes, sets).map_err(|e| FormatError::invalid(annotation, e.to_string()))
}

pub fn parse_layouts(text: &str, path: &Path) -> Result<Vec<SequenceLayout>, FormatError> {
    #[derive(Deserialize)]
    struct Row {
        sequence: String,
        frames: usize,
        factor: String,
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        length: Option<usize>,
        #[serde(default)]
        hidden: Option<u8>,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut layouts: Vec<SequenceLayout> = Vec::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| FormatError::parse(path, line, e.to_string()))?;
        let pos = match layouts.iter().position(|l| l.sequence_id == row.sequence) {
            Some(p) => p,
            None => {
                layouts.push(SequenceLayout::new(row.sequence.clone(), row.frames));
                layouts.len() - 1
            }
        };
        let layout = &mut layouts[pos];
        if layout.frame_count != row.frames {
            return Err(FormatError::parse(
                path,
                line,
                format!("conflicting frame count for `{}`", row.sequence),
            ));
        }
        if row.factor.eq_ignore_ascii_case("none") {
            continue;
        }
        let (Some(start), Some(length)) = (row.start, row.length) else {
            return Err(FormatError::parse(path, line, "start and length are required"));
        };
        if row.factor.eq_ignore_ascii_case("dropout") {
            if length == 0 {
                return Err(FormatError::parse(path, line, "dropout length must be positive"));
            }
            layout.dropouts.push(FrameRange::new(start, start + length - 1));
            continue;
        }
        let factor: FactorKind = row
            .factor
            .parse()
            .map_err(|e: crate::model::ModelError| FormatError::parse(path, line, e.to_string()))?;
        let mut run = PlantedRun::new(factor, start, length);
        if row.hidden == Some(1) {
            run = run.hidden();
        }
        layout.runs.push(run);
    }
    Ok(layouts)
}

pub fn format_layouts(layouts: &[SequenceLayout]) -> String {
    let mut out = String::from("sequence,frames,factor,start,length,hidden\n");
    for l in layouts {
        if l.runs.is_empty() && l.dropouts.is_empty() {
            out.push_str(&format!("{},{},none,,,\n", l.sequence_id, l.frame_count));
        }
        for r in &l.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.sequence_id, l.frame_count, r.factor, r.start, r.length, r.hidden as u8
            ));
        }
        for d in &l.dropouts {
            out.push_str(&format!(
                "{},{},dropout,{},{},1\n",
                l.sequence_id,
                l.frame_count,
                d.start,
                d.len()
            ));
        }
    }
    out
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    toml::from_str(&read_text(path)?).map_err(|e| FormatError::invalid(path, e.to_string()))
}

pub fn read_config(path: &Path) -> Result<DiagnosisConfig, FormatError> {
    let cfg: DiagnosisConfig = read_toml(path)?;
    cfg.validate().map_err(|e| FormatError::invalid(path, e.to_string()))?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub groundtruth: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Loads a manifest and resolves every path against its directory.
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let mut m: CorpusManifest = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut seen = HashSet::new();
        for e in &mut m.sequences {
            if !seen.insert(e.id.clone()) {
                return Err(FormatError::invalid(path, format!("duplicate sequence id `{}`", e.id)));
            }
            e.groundtruth = resolve(&e.groundtruth);
            e.annotation = resolve(&e.annotation);
            for p in [&e.groundtruth, &e.annotation] {
                if !p.is_file() {
                    return Err(FormatError::invalid(
                        path,
                        format!("sequence `{}`: {} not found", e.id, p.display()),
                    ));
                }
            }
        }
        m.config = m.config.as_ref().map(resolve);
        m.output = m.output.as_ref().map(resolve);
        Ok(m)
    }

    pub fn read_sequences(&self) -> Result<Vec<SequenceRecord>, FormatError> {
        self.sequences
            .iter()
            .map(|e| read_sequence(&e.id, &e.groundtruth, &e.annotation))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Key-sorted pretty JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    v.sort_all_objects();
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| FormatError::invalid(path, e.to_string()))
}

/// Clip boundaries as stored in `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub source_id: String,
    pub factor: FactorKind,
    pub frame_range: FrameRange,
    pub nc1_range: FrameRange,
    pub c2_range: FrameRange,
    pub nc3_range: Option<FrameRange>,
}

impl From<&ExtractedClip> for ClipMeta {
    fn from(c: &ExtractedClip) -> Self {
        Self {
            clip_id: c.clip_id.clone(),
            source_id: c.source_id.clone(),
            factor: c.factor,
            frame_range: c.frame_range,
            nc1_range: c.nc1_range,
            c2_range: c.c2_range,
            nc3_range: c.nc3_range,
        }
    }
}

pub const CLIP_GROUNDTRUTH: &str = "groundtruth.txt";
pub const CLIP_ANNOTATION: &str = "annotation.csv";
pub const CLIP_META: &str = "meta.json";

/// Files making up one clip directory, keyed by file name.
pub fn clip_files(clip: &ExtractedClip) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        (CLIP_GROUNDTRUTH, format_boxes(&clip.groundtruth)),
        (CLIP_ANNOTATION, format_annotation(&clip.labels, true)),
        (CLIP_META, to_canonical_json(&ClipMeta::from(clip))),
    ])
}

pub fn read_clip_dir(dir: &Path) -> Result<ExtractedClip, FormatError> {
    let meta: ClipMeta = read_json(&dir.join(CLIP_META))?;
    let groundtruth = read_boxes(&dir.join(CLIP_GROUNDTRUTH))?;
    let labels: Vec<FrameLabels> = read_annotation(&dir.join(CLIP_ANNOTATION))?
        .into_iter()
        .enumerate()
        .map(|(frame_index, active)| FrameLabels { frame_index, active })
        .collect();
    if groundtruth.len() != meta.frame_range.len() || labels.len() != meta.frame_range.len() {
        return Err(FormatError::invalid(
            dir,
            format!(
                "clip spans {} frames but has {} boxes and {} label rows",
                meta.frame_range.len(),
                groundtruth.len(),
                labels.len()
            ),
        ));
    }
    Ok(ExtractedClip {
        clip_id: meta.clip_id,
        source_id: meta.source_id,
        factor: meta.factor,
        frame_range: meta.frame_range,
        nc1_range: meta.nc1_range,
        c2_range: meta.c2_range,
        nc3_range: meta.nc3_range,
        groundtruth,
        labels,
    })
}

/// Loads every clip directory (a subdirectory holding `meta.json`), sorted
/// by clip id.
pub fn read_clips(dir: &Path) -> Result<Vec<ExtractedClip>, FormatError> {
    let entries = fs::read_dir(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CLIP_META).is_file())
        .collect();
    dirs.sort();
    let mut clips: Vec<ExtractedClip> = dirs.iter().map(|d| read_clip_dir(d)).collect::<Result<_, _>>()?;
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(clips)
}

/// Shared header of an evaluation output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationHeader {
    pub config: DiagnosisConfig,
    pub corpus: CorpusSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerOutcomes {
    pub tracker: String,
    pub outcomes: Vec<ClipOutcome>,
}

pub const EVALUATION_HEADER: &str = "evaluation.json";
pub const OUTCOMES_SUFFIX: &str = ".outcomes.json";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rect;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn boxes_parse_common_conventions() {
        let b = parse_boxes("1,2,3,4\r\nabsent\n0,0,0,0\n5\t6\t7\t8\n1.5 2.5 3 4\n", p()).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[0], BoundingBox::Present(Rect::new(1., 2., 3., 4.).unwrap()));
        assert_eq!(b[1], BoundingBox::Absent);
        assert_eq!(b[2], BoundingBox::Absent);
        assert!(b[3].is_present() && b[4].is_present());
        assert!(parse_boxes("", p()).unwrap().is_empty());
    }

    #[test]
    fn boxes_report_bad_lines() {
        let err = parse_boxes("1,2,3,4\n1,2,3\n", p()).unwrap_err();
        assert!(err.to_string().starts_with("mem:2:"));
        assert!(parse_boxes("1,2,x,4\n", p()).is_err());
        assert!(parse_boxes("1,2,3,4\n\n1,2,3,4\n", p()).is_err());
    }

    #[test]
    fn boxes_write_back_identically() {
        let text = "1,2,3,4\nabsent\n0.1,-2.5,30.25,4\n";
        assert_eq!(format_boxes(&parse_boxes(text, p()).unwrap()), text);
    }

    #[test]
    fn annotation_accepts_missing_compound_columns() {
        let sets = parse_annotation("frame,occ,rot,ov,bc,iv,mb,sv\n0,1,0,0,1,0,0,0\n1,0,0,0,0,0,0,0\n", p()).unwrap();
        assert_eq!(
            sets[0],
            [FactorKind::Occlusion, FactorKind::BackgroundClutter]
                .into_iter()
                .collect()
        );
        assert!(sets[1].is_empty());
    }

    #[test]
    fn annotation_errors() {
        assert!(parse_annotation("frame,occ,xyz\n0,0,0\n", p()).is_err());
        assert!(parse_annotation("occ\n0\n", p()).is_err());
        assert!(parse_annotation("frame,occ\n1,0\n", p()).is_err());
        assert!(parse_annotation("frame,occ\n0,2\n", p()).is_err());
    }

    #[test]
    fn annotation_round_trip() {
        let sets = vec![
            FactorSet::single(FactorKind::OcclusionRotation),
            FactorSet::empty(),
            [FactorKind::MotionBlur, FactorKind::ShapeVariation]
                .into_iter()
                .collect(),
        ];
        let seq = SequenceRecord::new("s", vec![BoundingBox::Absent; 3], sets.clone()).unwrap();
        let text = format_annotation(&seq.labels, true);
        assert!(text.starts_with("frame,occ,rot,ov,bc,iv,mb,sv,o-b,o-r\n"));
        assert_eq!(parse_annotation(&text, p()).unwrap(), sets);
    }

    #[test]
    fn layouts_parse() {
        let text = "sequence,frames,factor,start,length,hidden\na,60,IV,40,20,0\na,60,OCC,10,5,1\nb,30,none,,,\na,60,dropout,2,2,\n";
        let l = parse_layouts(text, p()).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[0].runs.len(), 2);
        assert!(l[0].runs[1].hidden);
        assert_eq!(l[0].dropouts, vec![FrameRange::new(2, 3)]);
        assert!(l[1].runs.is_empty());
        assert_eq!(parse_layouts(&format_layouts(&l), p()).unwrap(), l);
        assert!(parse_layouts("sequence,frames,factor,start,length\na,10,IV,1,1\na,11,IV,3,1\n", p()).is_err());
    }
}

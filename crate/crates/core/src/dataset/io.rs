//! File formats.
//!
//! * manifest: CSV with header `clip_id,path,hop_seconds,num_frames,num_classes`,
//!   paths relative to the manifest's directory
//! * posteriors: one CSV per clip, a row per frame, a column per class
//! * class table: `classes.txt` next to the manifest, one label per line
//!   (labels default to `class0..` when the file is absent)
//! * annotations: TSV `clip_id<TAB>onset<TAB>offset<TAB>label`
//! * parameters: JSON with `thresholds`, `window_sizes`, `class_labels`, `grid`

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generic_labels, Dataset, PosteriorClip};
use crate::error::{Error, Result};
use crate::metric::{Event, EventList};
use crate::postproc::{ParamGrid, PostProcParams, Posteriorgram};

pub const MANIFEST_HEADER: [&str; 5] = [
    "clip_id",
    "path",
    "hop_seconds",
    "num_frames",
    "num_classes",
];
pub const CLASS_TABLE: &str = "classes.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: String,
    pub hop_seconds: f64,
    pub num_frames: usize,
    pub num_classes: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(file: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::load(file, line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::load(
            file,
            line,
            format!("{what} {field:?} is not finite"),
        ));
    }
    Ok(v)
}

fn read_class_table(dir: &Path, num_classes: Option<usize>) -> Result<Vec<String>> {
    let path = dir.join(CLASS_TABLE);
    if !path.exists() {
        return Ok(generic_labels(num_classes.unwrap_or(0)));
    }
    let text = read_text(&path)?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::load(
                &path,
                i + 1,
                format!("duplicate class label {l:?}"),
            ));
        }
    }
    Ok(labels)
}

fn read_manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::load(path, 1, format!("{other:?}")),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::load(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::load(
            path,
            1,
            format!("header must be {}", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::load(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let hop = parse_f64(path, line, &rec[2], "hop_seconds")?;
        let count = |i: usize, what: &str| -> Result<usize> {
            rec[i].parse().map_err(|_| {
                Error::load(path, line, format!("{what} {:?} is not a count", &rec[i]))
            })
        };
        let entry = ManifestEntry {
            clip_id: rec[0].to_string(),
            path: rec[1].to_string(),
            hop_seconds: hop,
            num_frames: count(3, "num_frames")?,
            num_classes: count(4, "num_classes")?,
        };
        if entry.clip_id.is_empty() {
            return Err(Error::load(path, line, "empty clip_id"));
        }
        if !(hop > 0.0) {
            return Err(Error::load(
                path,
                line,
                format!("hop_seconds {hop} must be positive"),
            ));
        }
        if entry.num_classes == 0 {
            return Err(Error::load(path, line, "num_classes must be positive"));
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn read_posteriors(path: &Path, entry: &ManifestEntry) -> Result<Posteriorgram> {
    let text = read_text(path)?;
    let mut data = Vec::with_capacity(entry.num_frames * entry.num_classes);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != entry.num_classes {
            return Err(Error::load(
                path,
                lineno,
                format!(
                    "expected {} columns, got {}",
                    entry.num_classes,
                    fields.len()
                ),
            ));
        }
        for f in fields {
            let v = parse_f64(path, lineno, f, "probability")?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::load(
                    path,
                    lineno,
                    format!("probability {v} is outside [0, 1]"),
                ));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != entry.num_frames {
        return Err(Error::load(
            path,
            rows,
            format!("expected {} frames, got {rows}", entry.num_frames),
        ));
    }
    Posteriorgram::new(rows, entry.num_classes, data)
}

/// Loads every clip named by a manifest. The resulting dataset carries no
/// references.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let entries = read_manifest_entries(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let first_c = entries.first().map(|e| e.num_classes);
    let labels = read_class_table(dir, first_c)?;
    if labels.is_empty() {
        return Err(Error::load(
            path,
            1,
            "cannot infer classes from an empty manifest without classes.txt",
        ));
    }

    let mut clips = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let line = i + 2;
        if entry.num_classes != labels.len() {
            return Err(Error::load(
                path,
                line,
                format!(
                    "num_classes {} but the class table has {}",
                    entry.num_classes,
                    labels.len()
                ),
            ));
        }
        let post = read_posteriors(&dir.join(&entry.path), entry)?;
        let clip = PosteriorClip::new(entry.clip_id.clone(), entry.hop_seconds, post)
            .map_err(|e| Error::load(path, line, e.to_string()))?;
        clips.push(clip);
    }
    Dataset::new(labels, clips, vec![]).map_err(|e| Error::load(path, 0, e.to_string()))
}

/// Reads an annotation TSV, mapping labels through `class_labels`. A first
/// line whose second field is `onset` is treated as a header.
pub fn load_annotations(path: &Path, class_labels: &[String]) -> Result<EventList> {
    let text = read_text(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::load(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        if i == 0 && fields[1].trim() == "onset" {
            continue;
        }
        let onset = parse_f64(path, lineno, fields[1], "onset")?;
        let offset = parse_f64(path, lineno, fields[2], "offset")?;
        if onset < 0.0 || offset <= onset {
            return Err(Error::load(
                path,
                lineno,
                format!("need 0 <= onset < offset, got {onset} and {offset}"),
            ));
        }
        let label = fields[3].trim();
        let Some(class_index) = class_labels.iter().position(|l| l == label) else {
            return Err(Error::load(
                path,
                lineno,
                format!("unknown class label {label:?}"),
            ));
        };
        events.push(Event {
            clip_id: fields[0].trim().to_string(),
            onset,
            offset,
            class_index,
        });
    }
    Ok(events)
}

/// Like [`load_annotations`] but reads labels from the dataset.
pub fn read_events_tsv(path: &Path, dataset: &Dataset) -> Result<EventList> {
    load_annotations(path, dataset.class_labels())
}

/// Manifest plus (optionally) annotations, cross-validated.
pub fn load_dataset(manifest: &Path, annotations: Option<&Path>) -> Result<Dataset> {
    let ds = load_manifest(manifest)?;
    let Some(ann) = annotations else {
        return Ok(ds);
    };
    let refs = load_annotations(ann, ds.class_labels())?;
    for (i, e) in refs.iter().enumerate() {
        if !ds.clips().iter().any(|c| c.clip_id == e.clip_id) {
            return Err(Error::load(
                ann,
                i + 1,
                format!("clip {} is not in the manifest", e.clip_id),
            ));
        }
    }
    let labels = ds.class_labels().to_vec();
    let clips = ds.clips().to_vec();
    Dataset::new(labels, clips, refs)
}

pub fn write_events_tsv(path: &Path, events: &[Event], class_labels: &[String]) -> Result<()> {
    let mut out = String::new();
    for e in events {
        let label = class_labels.get(e.class_index).ok_or_else(|| {
            Error::contract(format!("event class {} has no label", e.class_index))
        })?;
        writeln!(out, "{}\t{}\t{}\t{}", e.clip_id, e.onset, e.offset, label).expect("string write");
    }
    write_text(path, &out)
}

fn posterior_file_name(i: usize) -> String {
    format!("posteriors/clip_{i:05}.csv")
}

/// Writes manifest, class table, posterior CSVs and `annotations.tsv` into
/// `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let mut manifest = MANIFEST_HEADER.join(",");
    manifest.push('\n');
    for (i, clip) in dataset.clips().iter().enumerate() {
        let rel = posterior_file_name(i);
        writeln!(
            manifest,
            "{},{},{},{},{}",
            clip.clip_id,
            rel,
            clip.hop,
            clip.num_frames(),
            clip.num_classes()
        )
        .expect("string write");
        let mut body = String::new();
        for t in 0..clip.num_frames() {
            let row: Vec<String> = clip
                .posteriors
                .row(t)
                .iter()
                .map(|v| v.to_string())
                .collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        write_text(&dir.join(rel), &body)?;
    }
    let manifest_path = dir.join("manifest.csv");
    write_text(&manifest_path, &manifest)?;
    write_text(
        &dir.join(CLASS_TABLE),
        &(dataset.class_labels().join("\n") + "\n"),
    )?;
    write_events_tsv(
        &dir.join("annotations.tsv"),
        &dataset.references(),
        dataset.class_labels(),
    )?;
    Ok(manifest_path)
}

/// Parameter file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub thresholds: Vec<f64>,
    pub window_sizes: Vec<usize>,
    pub class_labels: Vec<String>,
    #[serde(default)]
    pub grid: Option<ParamGrid>,
}

impl ParamsFile {
    pub fn new(params: &PostProcParams, class_labels: &[String], grid: Option<ParamGrid>) -> Self {
        ParamsFile {
            thresholds: params.thresholds.clone(),
            window_sizes: params.window_sizes.clone(),
            class_labels: class_labels.to_vec(),
            grid,
        }
    }

    pub fn params(&self) -> Result<PostProcParams> {
        PostProcParams::new(self.thresholds.clone(), self.window_sizes.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.params()?;
        if self.class_labels.len() != p.num_classes() {
            return Err(Error::invalid(
                "parameters",
                format!(
                    "{} class labels for {} classes",
                    self.class_labels.len(),
                    p.num_classes()
                ),
            ));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }
}

pub fn save_params(path: &Path, params: &ParamsFile) -> Result<()> {
    params.validate()?;
    let text = serde_json::to_string_pretty(params).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_text(path, &(text + "\n"))
}

pub fn load_params(path: &Path) -> Result<ParamsFile> {
    let text = read_text(path)?;
    let p: ParamsFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    p.validate()?;
    Ok(p)
}

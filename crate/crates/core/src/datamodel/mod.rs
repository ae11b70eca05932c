//! Domain types and the on-disk interchange formats.
//!
//! A benchmark directory holds a `manifest.json` plus one `.npy` matrix per
//! subject; model activations come as an `activations.json` sidecar pointing
//! at an `.npy` matrix. See the README for the exact schemas.

pub mod npy;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

pub use npy::{read_matrix, write_matrix};

/// Manifest schema version written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Presentation {
    Reading,
    Listening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Fmri,
    Ecog,
    Behavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub stimulus_id: String,
    pub text: String,
    pub group: String,
    pub position: u64,
}

/// Ordered stimuli of one benchmark; order is presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusSet {
    stimuli: Vec<StimulusRecord>,
    pub presentation: Presentation,
    pub description: String,
}

impl StimulusSet {
    pub fn new(
        stimuli: Vec<StimulusRecord>,
        presentation: Presentation,
        description: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(stimuli.len());
        for s in &stimuli {
            if s.stimulus_id.is_empty() {
                return Err(validation!("empty stimulus_id"));
            }
            if s.group.is_empty() {
                return Err(validation!("stimulus '{}' has an empty group label", s.stimulus_id));
            }
            if !seen.insert(s.stimulus_id.as_str()) {
                return Err(validation!("duplicate stimulus_id '{}'", s.stimulus_id));
            }
        }
        Ok(StimulusSet {
            stimuli,
            presentation,
            description: description.into(),
        })
    }

    pub fn stimuli(&self) -> &[StimulusRecord] {
        &self.stimuli
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.stimuli.iter().map(|s| s.stimulus_id.clone()).collect()
    }

    pub fn groups(&self) -> BTreeMap<String, String> {
        self.stimuli
            .iter()
            .map(|s| (s.stimulus_id.clone(), s.group.clone()))
            .collect()
    }
}

/// Stimuli × features activations of one model layer at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    matrix: DMatrix<f64>,
    stimulus_ids: Vec<String>,
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub layer_tag: String,
    pub seed: Option<u64>,
}

impl ActivationSet {
    pub fn new(
        matrix: DMatrix<f64>,
        stimulus_ids: Vec<String>,
        model_id: impl Into<String>,
        checkpoint_tokens: u64,
        layer_tag: impl Into<String>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if matrix.nrows() != stimulus_ids.len() {
            return Err(Error::Shape(format!(
                "activation matrix has {} rows but {} stimulus ids",
                matrix.nrows(),
                stimulus_ids.len()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::Shape("activation matrix has no columns".into()));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % matrix.nrows(), pos / matrix.nrows());
            return Err(validation!("non-finite activation at row {r}, column {c}"));
        }
        Ok(ActivationSet {
            matrix,
            stimulus_ids,
            model_id: model_id.into(),
            checkpoint_tokens,
            layer_tag: layer_tag.into(),
            seed,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    /// Fails unless rows are exactly the stimuli of `stimuli`, in order.
    pub fn check_order(&self, stimuli: &StimulusSet) -> Result<()> {
        let expected = stimuli.stimuli().iter().map(|s| s.stimulus_id.as_str());
        if !self.stimulus_ids.iter().map(String::as_str).eq(expected) {
            return Err(validation!(
                "activation rows of {}/{} do not follow the stimulus set order",
                self.model_id,
                self.layer_tag
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub matrix: DMatrix<f64>,
    /// Optional per-unit labels, parallel to the matrix columns.
    pub units_meta: Option<Vec<String>>,
    /// Number of all-NaN units dropped at ingestion.
    pub dropped_units: usize,
}

/// Per-subject stimuli × units responses sharing one stimulus order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDataset {
    subjects: Vec<SubjectData>,
    stimulus_ids: Vec<String>,
    groups: BTreeMap<String, String>,
    pub modality: Modality,
}

impl NeuralDataset {
    pub fn new(
        subjects: Vec<SubjectData>,
        stimulus_ids: Vec<String>,
        groups: BTreeMap<String, String>,
        modality: Modality,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(validation!("dataset has no subjects"));
        }
        if modality == Modality::Behavior && subjects.len() != 1 {
            return Err(validation!(
                "behavior datasets carry exactly one pseudo-subject, found {}",
                subjects.len()
            ));
        }
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(validation!("duplicate subject_id '{}'", s.subject_id));
            }
            if s.matrix.nrows() != stimulus_ids.len() {
                return Err(Error::Shape(format!(
                    "subject '{}' has {} rows, expected {}",
                    s.subject_id,
                    s.matrix.nrows(),
                    stimulus_ids.len()
                )));
            }
            if s.matrix.ncols() == 0 {
                return Err(validation!("subject '{}' has no usable units", s.subject_id));
            }
            if s.matrix.iter().any(|v| !v.is_finite()) {
                return Err(validation!("subject '{}' has non-finite responses", s.subject_id));
            }
            if let Some(meta) = &s.units_meta {
                if meta.len() != s.matrix.ncols() {
                    return Err(validation!(
                        "subject '{}' unit labels do not match unit count",
                        s.subject_id
                    ));
                }
            }
        }
        for id in &stimulus_ids {
            if !groups.contains_key(id) {
                return Err(validation!("stimulus '{id}' has no group label"));
            }
        }
        Ok(NeuralDataset {
            subjects,
            stimulus_ids,
            groups,
            modality,
        })
    }

    pub fn subjects(&self) -> &[SubjectData] {
        &self.subjects
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectData> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    pub fn groups(&self) -> &BTreeMap<String, String> {
        &self.groups
    }

    pub fn dropped_units(&self) -> usize {
        self.subjects.iter().map(|s| s.dropped_units).sum()
    }

    /// Replaces the group labels, e.g. with story segments.
    pub fn with_groups(mut self, groups: BTreeMap<String, String>) -> Result<Self> {
        for id in &self.stimulus_ids {
            if !groups.contains_key(id) {
                return Err(validation!("stimulus '{id}' has no group label"));
            }
        }
        self.groups = groups;
        Ok(self)
    }
}

/// Raw and ceiling-normalized score of one model checkpoint on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub benchmark_id: String,
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub raw_r: f64,
    pub ceiling: f64,
    pub normalized: f64,
    pub n_folds: usize,
    pub per_fold_r: Vec<f64>,
}

impl AlignmentScore {
    pub fn new(
        benchmark_id: impl Into<String>,
        model_id: impl Into<String>,
        checkpoint_tokens: u64,
        per_fold_r: Vec<f64>,
        ceiling: f64,
    ) -> Result<Self> {
        if per_fold_r.is_empty() {
            return Err(Error::ScoreUndefined("no fold scores".into()));
        }
        let raw_r = crate::stats::mean(&per_fold_r);
        let normalized = crate::analysis::normalize_score(raw_r, ceiling)?;
        Ok(AlignmentScore {
            benchmark_id: benchmark_id.into(),
            model_id: model_id.into(),
            checkpoint_tokens,
            raw_r,
            ceiling,
            normalized,
            n_folds: per_fold_r.len(),
            per_fold_r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub checkpoint_tokens: u64,
    pub series_id: String,
    pub value: f64,
}

/// Catalog of the series the trajectory statistics know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    BrainAlignment,
    FormalScore,
    FunctionalScore,
    LmLoss,
    BehavioralR,
}

impl SeriesKind {
    pub const ALL: [SeriesKind; 5] = [
        SeriesKind::BrainAlignment,
        SeriesKind::FormalScore,
        SeriesKind::FunctionalScore,
        SeriesKind::LmLoss,
        SeriesKind::BehavioralR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::BrainAlignment => "brain_alignment",
            SeriesKind::FormalScore => "formal_score",
            SeriesKind::FunctionalScore => "functional_score",
            SeriesKind::LmLoss => "lm_loss",
            SeriesKind::BehavioralR => "behavioral_r",
        }
    }

    /// Series ids are either a catalog name or `<catalog name>:<detail>`,
    /// e.g. `formal_score:blimp`.
    pub fn of_series(series_id: &str) -> Option<SeriesKind> {
        let head = series_id.split(':').next().unwrap_or(series_id);
        SeriesKind::ALL.into_iter().find(|k| k.as_str() == head)
    }
}

/// Per-checkpoint values of several series for one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryTable {
    rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn new(rows: Vec<TrajectoryRow>) -> Result<Self> {
        let mut last: BTreeMap<&str, u64> = BTreeMap::new();
        for row in &rows {
            if SeriesKind::of_series(&row.series_id).is_none() {
                return Err(validation!("unknown trajectory series '{}'", row.series_id));
            }
            if !row.value.is_finite() {
                return Err(validation!(
                    "non-finite value in series '{}' at {} tokens",
                    row.series_id,
                    row.checkpoint_tokens
                ));
            }
            if let Some(prev) = last.insert(&row.series_id, row.checkpoint_tokens) {
                if row.checkpoint_tokens <= prev {
                    return Err(validation!(
                        "series '{}' checkpoints not strictly increasing ({} after {})",
                        row.series_id,
                        row.checkpoint_tokens,
                        prev
                    ));
                }
            }
        }
        Ok(TrajectoryTable { rows })
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn series_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for row in &self.rows {
            if !ids.contains(&row.series_id) {
                ids.push(row.series_id.clone());
            }
        }
        ids
    }

    /// The (checkpoint, value) points of one series in storage order.
    pub fn series(&self, series_id: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.series_id == series_id)
            .map(|r| (r.checkpoint_tokens, r.value))
            .collect()
    }

    /// Appends another table's rows, re-validating the result.
    pub fn merged(&self, other: &TrajectoryTable) -> Result<Self> {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        rows.sort_by(|a, b| {
            a.series_id
                .cmp(&b.series_id)
                .then(a.checkpoint_tokens.cmp(&b.checkpoint_tokens))
        });
        TrajectoryTable::new(rows)
    }

    /// Reads `checkpoint_tokens,series_id,value` rows.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        TrajectoryTable::new(rows)
    }

    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("utf8 csv")
    }
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub matrix_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<String>>,
}

/// `manifest.json` of a benchmark directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub schema_version: u32,
    pub benchmark_id: String,
    pub modality: Modality,
    pub presentation: Presentation,
    #[serde(default)]
    pub description: String,
    pub stimuli: Vec<StimulusRecord>,
    pub subjects: Vec<SubjectEntry>,
}

/// `activations.json` sidecar describing one activation matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationSidecar {
    pub schema_version: u32,
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub layer_tag: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub stimulus_order: Vec<String>,
    pub matrix_file: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check_schema(version: u32, path: &Path) -> Result<()> {
    if version == 0 || version > SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported schema_version {version}",
            path.display()
        )));
    }
    Ok(())
}

/// A loaded benchmark directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub benchmark_id: String,
    pub stimuli: StimulusSet,
    pub neural: NeuralDataset,
}

/// Drops all-NaN columns; any other non-finite entry is rejected.
fn clean_units(subject_id: &str, matrix: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut keep = Vec::with_capacity(matrix.ncols());
    for (c, col) in matrix.column_iter().enumerate() {
        let nan = col.iter().filter(|v| v.is_nan()).count();
        if col.iter().any(|v| v.is_infinite()) {
            return Err(validation!("subject '{subject_id}' unit {c} contains Inf"));
        }
        if nan == 0 {
            keep.push(c);
        } else if nan < col.len() {
            return Err(validation!(
                "subject '{subject_id}' unit {c} has {nan} NaN of {} values; partial NaN units are rejected",
                col.len()
            ));
        }
    }
    let cleaned = matrix.select_columns(keep.iter());
    Ok((cleaned, keep))
}

/// Loads and validates a benchmark directory.
pub fn load_benchmark(dir: impl AsRef<Path>) -> Result<Benchmark> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::Format(format!(
            "{}: missing manifest.json",
            dir.display()
        )));
    }
    let manifest: BenchmarkManifest = read_json(&manifest_path)?;
    check_schema(manifest.schema_version, &manifest_path)?;

    let stimuli = StimulusSet::new(
        manifest.stimuli,
        manifest.presentation,
        manifest.description,
    )?;
    let ids = stimuli.ids();

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in manifest.subjects {
        let raw = read_matrix(dir.join(&entry.matrix_file))?;
        if raw.nrows() != ids.len() {
            return Err(Error::Shape(format!(
                "subject '{}' matrix has {} rows but the manifest lists {} stimuli",
                entry.subject_id,
                raw.nrows(),
                ids.len()
            )));
        }
        if let Some(units) = &entry.units {
            if units.len() != raw.ncols() {
                return Err(validation!(
                    "subject '{}' lists {} unit labels for {} units",
                    entry.subject_id,
                    units.len(),
                    raw.ncols()
                ));
            }
        }
        let total = raw.ncols();
        let (matrix, kept) = clean_units(&entry.subject_id, raw)?;
        let dropped_units = total - kept.len();
        if dropped_units > 0 {
            log::info!(
                "{}: dropped {dropped_units} all-NaN unit(s) from subject '{}'",
                manifest.benchmark_id,
                entry.subject_id
            );
        }
        let units_meta = entry
            .units
            .map(|labels| kept.iter().map(|&c| labels[c].clone()).collect());
        subjects.push(SubjectData {
            subject_id: entry.subject_id,
            matrix,
            units_meta,
            dropped_units,
        });
    }

    let neural = NeuralDataset::new(subjects, ids, stimuli.groups(), manifest.modality)?;
    Ok(Benchmark {
        benchmark_id: manifest.benchmark_id,
        stimuli,
        neural,
    })
}

/// Writes a benchmark directory (manifest plus one matrix per subject).
pub fn write_benchmark(
    dir: impl AsRef<Path>,
    benchmark_id: &str,
    modality: Modality,
    stimuli: &StimulusSet,
    subjects: &[(String, DMatrix<f64>)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(subjects.len());
    for (subject_id, matrix) in subjects {
        let file = format!("{subject_id}.npy");
        write_matrix(dir.join(&file), matrix)?;
        entries.push(SubjectEntry {
            subject_id: subject_id.clone(),
            matrix_file: file,
            units: None,
        });
    }
    let manifest = BenchmarkManifest {
        schema_version: SCHEMA_VERSION,
        benchmark_id: benchmark_id.to_string(),
        modality,
        presentation: stimuli.presentation,
        description: stimuli.description.clone(),
        stimuli: stimuli.stimuli().to_vec(),
        subjects: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads an activation matrix through its sidecar.
pub fn load_activations(sidecar: impl AsRef<Path>) -> Result<ActivationSet> {
    let sidecar = sidecar.as_ref();
    let meta: ActivationSidecar = read_json(sidecar)?;
    check_schema(meta.schema_version, sidecar)?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    let matrix = read_matrix(base.join(&meta.matrix_file))?;
    ActivationSet::new(
        matrix,
        meta.stimulus_order,
        meta.model_id,
        meta.checkpoint_tokens,
        meta.layer_tag,
        meta.seed,
    )
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.npy` for an activation set.
pub fn write_activations(dir: impl AsRef<Path>, stem: &str, acts: &ActivationSet) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let matrix_file = format!("{stem}.npy");
    write_matrix(dir.join(&matrix_file), acts.matrix())?;
    let sidecar = ActivationSidecar {
        schema_version: SCHEMA_VERSION,
        model_id: acts.model_id.clone(),
        checkpoint_tokens: acts.checkpoint_tokens,
        layer_tag: acts.layer_tag.clone(),
        seed: acts.seed,
        stimulus_order: acts.stimulus_ids().to_vec(),
        matrix_file,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &sidecar)?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    text.push('\n');
    npy::write_atomic(path, text.as_bytes())
}

//! Pipeline stages. Each stage reads the configuration and, where needed,
//! digest-verified outputs of earlier stages, and writes its artifacts
//! into the output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use brainalign::analysis::{
    aggregate_benchmarks, control_comparison, trajectory_r2, wilcoxon_signed_rank, windowed_correlation,
    ControlReport, TestResult, TrajectoryFit, TrajectoryOptions,
};
use brainalign::behavioral::{behavioral_alignment, read_reading_times, read_token_losses, BehavioralReport};
use brainalign::ceiling::{extrapolate_ceiling, CeilingConfig, CeilingEstimate, CeilingMethod};
use brainalign::datamodel::{load_activations, load_benchmark, BenchmarkManifest};
use brainalign::localizer::{apply_selection, select_units, LayerContrast, LocalizerResult, Ranking, SelectedUnit};
use brainalign::metrics::linear_predictivity;
use brainalign::splits::{make_grouped_folds, make_random_folds, segment_stories, FoldSpec};
use brainalign::{ActivationSet, AlignmentScore, Benchmark, SeriesKind, TrajectoryRow, TrajectoryTable};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{to_json_bytes, Inputs, OutputDir};
use crate::config::{BenchmarkEntry, CheckpointEntry, LoadedConfig, SplitScheme};
use crate::error::{invalid, CliError, CliResult};

pub const SCORES_FILE: &str = "scores.csv";
pub const LOCALIZER_FILE: &str = "localizer.json";
pub const BEHAVIORAL_FILE: &str = "behavioral.json";
pub const ANALYSIS_FILE: &str = "analysis_report.json";
pub const CEILING_FILE: &str = "ceiling.json";
pub const FOLDS_FILE: &str = "folds.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Localize,
    Ceiling,
    Score,
    Behavioral,
    Analyze,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 5] = [
        Stage::Localize,
        Stage::Ceiling,
        Stage::Score,
        Stage::Behavioral,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Localize => "localize",
            Stage::Ceiling => "ceiling",
            Stage::Score => "score",
            Stage::Behavioral => "behavioral",
            Stage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| invalid!("unknown stage '{s}' (expected localize, ceiling, score, behavioral or analyze)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ran { artifacts: usize },
    UpToDate,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: Status,
}

impl fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            Status::Ran { artifacts } => write!(f, "{}: wrote {artifacts} artifact(s)", self.stage),
            Status::UpToDate => write!(f, "{}: up-to-date", self.stage),
            Status::Skipped(why) => write!(f, "{}: skipped ({why})", self.stage),
        }
    }
}

/// Runs `stages` in pipeline order on a pool of `jobs` threads (all cores
/// when `None`).
pub fn run(cfg: &LoadedConfig, out: &Path, stages: &[Stage], jobs: Option<usize>) -> CliResult<Vec<StageOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.or(cfg.config.jobs).unwrap_or(0))
        .build()
        .map_err(|e| invalid!("cannot start worker pool: {e}"))?;
    let mut dir = OutputDir::open(out, cfg)?;
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    pool.install(|| {
        ordered
            .into_iter()
            .map(|stage| {
                let status = run_stage(cfg, &mut dir, stage)?;
                let outcome = StageOutcome { stage, status };
                log::info!("{outcome}");
                Ok(outcome)
            })
            .collect()
    })
}

fn run_stage(cfg: &LoadedConfig, dir: &mut OutputDir, stage: Stage) -> CliResult<Status> {
    let c = &cfg.config;
    let skip = match stage {
        Stage::Localize if c.localizer.is_none() => Some("localization disabled"),
        Stage::Ceiling if c.benchmarks.is_empty() => Some("no benchmarks"),
        Stage::Score if c.benchmarks.is_empty() || c.models.is_empty() => Some("no benchmarks or models"),
        Stage::Behavioral if c.behavioral.is_empty() => Some("no behavioral inputs"),
        _ => None,
    };
    if let Some(why) = skip {
        return Ok(Status::Skipped(why.to_string()));
    }
    let inputs = stage_inputs(cfg, dir, stage)?;
    if dir.up_to_date(stage.name(), &inputs) {
        return Ok(Status::UpToDate);
    }
    let outputs = match stage {
        Stage::Localize => localize(cfg)?,
        Stage::Ceiling => ceiling(cfg)?,
        Stage::Score => score(cfg, dir)?,
        Stage::Behavioral => behavioral(cfg)?,
        Stage::Analyze => analyze(cfg, dir)?,
    };
    let artifacts = outputs.len();
    dir.commit(stage.name(), inputs, outputs)?;
    Ok(Status::Ran { artifacts })
}

// ---------------------------------------------------------------------------
// Inputs

/// Manifest plus subject matrices of a benchmark directory.
fn benchmark_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let manifest = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
    let parsed: BenchmarkManifest = serde_json::from_str(&text)
        .map_err(|e| brainalign::Error::Format(format!("{}: {e}", manifest.display())))?;
    let mut files = vec![manifest];
    files.extend(parsed.subjects.iter().map(|s| dir.join(&s.matrix_file)));
    Ok(files)
}

/// Sidecar plus the matrix it points to.
fn activation_files(sidecar: &Path) -> CliResult<Vec<PathBuf>> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| CliError::io(sidecar, e))?;
    let parsed: brainalign::datamodel::ActivationSidecar = serde_json::from_str(&text)
        .map_err(|e| brainalign::Error::Format(format!("{}: {e}", sidecar.display())))?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    Ok(vec![sidecar.to_path_buf(), base.join(parsed.matrix_file)])
}

fn benchmark_id_of(cfg: &LoadedConfig, entry: &BenchmarkEntry) -> CliResult<String> {
    let dir = cfg.resolve(&entry.dir);
    let manifest = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
    let parsed: BenchmarkManifest = serde_json::from_str(&text)
        .map_err(|e| brainalign::Error::Format(format!("{}: {e}", manifest.display())))?;
    Ok(parsed.benchmark_id)
}

fn stage_inputs(cfg: &LoadedConfig, dir: &OutputDir, stage: Stage) -> CliResult<Inputs> {
    let c = &cfg.config;
    let mut inputs = Inputs::new(cfg);
    let add_all = |inputs: &mut Inputs, files: Vec<PathBuf>| -> CliResult<()> {
        for f in files {
            inputs.file(cfg, &f)?;
        }
        Ok(())
    };
    match stage {
        Stage::Localize => {
            for m in &c.models {
                for ck in &m.checkpoints {
                    if let Some(loc) = &ck.localizer {
                        for p in loc.sentences.iter().chain(&loc.nonwords) {
                            add_all(&mut inputs, activation_files(&cfg.resolve(p))?)?;
                        }
                    }
                }
            }
        }
        Stage::Ceiling => {
            for b in &c.benchmarks {
                add_all(&mut inputs, benchmark_files(&cfg.resolve(&b.dir))?)?;
            }
        }
        Stage::Score => {
            for b in &c.benchmarks {
                add_all(&mut inputs, benchmark_files(&cfg.resolve(&b.dir))?)?;
                let rel = format!("{}/{CEILING_FILE}", benchmark_id_of(cfg, b)?);
                let (_, digest) = dir.read_verified(Stage::Ceiling.name(), &rel)?;
                inputs.artifact(&rel, &digest);
            }
            for m in &c.models {
                for ck in &m.checkpoints {
                    for p in ck.layers.values().flatten() {
                        add_all(&mut inputs, activation_files(&cfg.resolve(p))?)?;
                    }
                }
            }
            if c.localizer.is_some() {
                let (_, digest) = dir.read_verified(Stage::Localize.name(), LOCALIZER_FILE)?;
                inputs.artifact(LOCALIZER_FILE, &digest);
            }
        }
        Stage::Behavioral => {
            for b in &c.behavioral {
                add_all(&mut inputs, vec![cfg.resolve(&b.token_losses), cfg.resolve(&b.reading_times)])?;
            }
        }
        Stage::Analyze => {
            for t in &c.analysis.tables {
                add_all(&mut inputs, vec![cfg.resolve(&t.path)])?;
            }
            for (stage, rel) in [(Stage::Score, SCORES_FILE), (Stage::Behavioral, BEHAVIORAL_FILE)] {
                if dir.output_digest(stage.name(), rel).is_some() {
                    let (_, digest) = dir.read_verified(stage.name(), rel)?;
                    inputs.artifact(rel, &digest);
                }
            }
        }
    }
    Ok(inputs)
}

// ---------------------------------------------------------------------------
// Benchmarks and folds

/// A benchmark with the grouping the configuration asks for.
fn prepare_benchmark(cfg: &LoadedConfig, entry: &BenchmarkEntry) -> CliResult<Benchmark> {
    let mut bench = load_benchmark(cfg.resolve(&entry.dir))?;
    if let Some(n) = entry.folds.segments {
        let groups = segment_stories(bench.stimuli.stimuli(), n)?;
        bench.neural = bench.neural.with_groups(groups)?;
    }
    Ok(bench)
}

fn make_folds(cfg: &LoadedConfig, entry: &BenchmarkEntry, bench: &Benchmark) -> CliResult<FoldSpec> {
    let seed = cfg.config.stage_seeds().folds;
    let spec = match entry.folds.scheme {
        SplitScheme::Random => make_random_folds(bench.neural.stimulus_ids(), entry.folds.k, seed)?,
        SplitScheme::Grouped => make_grouped_folds(bench.neural.groups(), entry.folds.k, seed)?,
    };
    spec.check(Some(bench.neural.groups()))?;
    Ok(spec)
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldsArtifact {
    config_digest: String,
    benchmark_id: String,
    /// `group` or `segments:<n>`
    grouping: String,
    fold_sizes: Vec<usize>,
    #[serde(flatten)]
    spec: FoldSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct CeilingArtifact {
    config_digest: String,
    seed: u64,
    ceiling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    #[serde(flatten)]
    estimate: CeilingEstimate,
}

fn ceiling(cfg: &LoadedConfig) -> CliResult<Vec<(String, Vec<u8>)>> {
    let seed = cfg.config.stage_seeds().ceiling;
    let mut outputs = Vec::new();
    for entry in &cfg.config.benchmarks {
        let bench = prepare_benchmark(cfg, entry)?;
        let estimate = match entry.ceiling.theoretical {
            Some(value) => CeilingEstimate::theoretical(&bench.benchmark_id, value)?,
            None => {
                let folds = make_folds(cfg, entry, &bench)?;
                let ccfg = CeilingConfig {
                    draws: entry.ceiling.draws,
                    seed,
                };
                extrapolate_ceiling(&bench.benchmark_id, &bench.neural, &folds, &cfg.config.ridge, &ccfg)?
            }
        };
        let note = (estimate.method == CeilingMethod::Fixed).then(|| {
            format!(
                "computed without extrapolation ({} subjects)",
                bench.neural.subjects().len()
            )
        });
        let artifact = CeilingArtifact {
            config_digest: cfg.digest.clone(),
            seed,
            ceiling: estimate.value(),
            note,
            estimate,
        };
        outputs.push((format!("{}/{CEILING_FILE}", bench.benchmark_id), to_json_bytes(&artifact)));
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Localizer

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalizedCheckpoint {
    model_id: String,
    checkpoint_tokens: u64,
    layers: Vec<String>,
    /// number of selected units per layer, in layer order
    per_layer: Vec<usize>,
    selected_units: Vec<SelectedUnit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalizerArtifact {
    config_digest: String,
    k: usize,
    ranking: Ranking,
    checkpoints: Vec<LocalizedCheckpoint>,
}

fn localize_checkpoint(cfg: &LoadedConfig, model_id: &str, ck: &CheckpointEntry) -> CliResult<LocalizedCheckpoint> {
    let settings = cfg.config.localizer.as_ref().expect("localization enabled");
    let inputs = ck.localizer.as_ref().expect("validated");
    let layers = inputs
        .sentences
        .iter()
        .zip(&inputs.nonwords)
        .map(|(s, n)| {
            let s = load_activations(cfg.resolve(s))?;
            let n = load_activations(cfg.resolve(n))?;
            if s.layer_tag != n.layer_tag {
                return Err(invalid!(
                    "{model_id}@{}: sentence layer '{}' paired with non-word layer '{}'",
                    ck.checkpoint_tokens,
                    s.layer_tag,
                    n.layer_tag
                ));
            }
            Ok(LayerContrast {
                layer_tag: s.layer_tag.clone(),
                sentences: s.matrix().clone(),
                nonwords: n.matrix().clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let result = select_units(model_id, &layers, settings.k, settings.ranking)?;
    let per_layer = result
        .layers
        .iter()
        .map(|tag| result.selected_units.iter().filter(|u| &u.layer_tag == tag).count())
        .collect();
    Ok(LocalizedCheckpoint {
        model_id: model_id.to_string(),
        checkpoint_tokens: ck.checkpoint_tokens,
        layers: result.layers,
        per_layer,
        selected_units: result.selected_units,
    })
}

fn localize(cfg: &LoadedConfig) -> CliResult<Vec<(String, Vec<u8>)>> {
    let settings = cfg.config.localizer.as_ref().expect("localization enabled");
    let jobs: Vec<(&str, &CheckpointEntry)> = cfg
        .config
        .models
        .iter()
        .flat_map(|m| m.checkpoints.iter().map(move |c| (m.model_id.as_str(), c)))
        .collect();
    let checkpoints = jobs
        .par_iter()
        .map(|(model, ck)| localize_checkpoint(cfg, model, ck))
        .collect::<CliResult<Vec<_>>>()?;
    let artifact = LocalizerArtifact {
        config_digest: cfg.digest.clone(),
        k: settings.k,
        ranking: settings.ranking,
        checkpoints,
    };
    Ok(vec![(LOCALIZER_FILE.to_string(), to_json_bytes(&artifact))])
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub benchmark_id: String,
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub raw_r: f64,
    pub ceiling: f64,
    pub normalized: f64,
    pub n_folds: usize,
}

impl From<&AlignmentScore> for ScoreRow {
    fn from(s: &AlignmentScore) -> Self {
        ScoreRow {
            benchmark_id: s.benchmark_id.clone(),
            model_id: s.model_id.clone(),
            checkpoint_tokens: s.checkpoint_tokens,
            raw_r: s.raw_r,
            ceiling: s.ceiling,
            normalized: s.normalized,
            n_folds: s.n_folds,
        }
    }
}

pub fn read_scores(bytes: &[u8]) -> CliResult<Vec<ScoreRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .map_err(|e| brainalign::Error::Format(format!("{SCORES_FILE}: {e}")).into())
}

fn scores_csv(rows: &[ScoreRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

/// Columns of all subjects side by side.
fn pooled_units(bench: &Benchmark) -> DMatrix<f64> {
    let subjects = bench.neural.subjects();
    let cols = subjects.iter().map(|s| s.matrix.ncols()).sum();
    let mut out = DMatrix::zeros(bench.neural.stimulus_ids().len(), cols);
    let mut offset = 0;
    for s in subjects {
        out.columns_mut(offset, s.matrix.ncols()).copy_from(&s.matrix);
        offset += s.matrix.ncols();
    }
    out
}

/// Model features for one benchmark: the localized units when a selection
/// is given, otherwise all layers side by side.
fn model_features(
    cfg: &LoadedConfig,
    model_id: &str,
    ck: &CheckpointEntry,
    bench: &Benchmark,
    selection: Option<&LocalizerResult>,
) -> CliResult<Option<ActivationSet>> {
    let Some(paths) = ck.layers.get(&bench.benchmark_id) else {
        return Ok(None);
    };
    let stack = paths
        .iter()
        .map(|p| {
            let acts = load_activations(cfg.resolve(p))?;
            if acts.model_id != model_id || acts.checkpoint_tokens != ck.checkpoint_tokens {
                return Err(invalid!(
                    "{}: activations belong to {}@{}, configured as {model_id}@{}",
                    p.display(),
                    acts.model_id,
                    acts.checkpoint_tokens,
                    ck.checkpoint_tokens
                ));
            }
            acts.check_order(&bench.stimuli)?;
            Ok(acts)
        })
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(sel) = selection {
        return Ok(Some(apply_selection(&stack, sel)?));
    }
    if stack.len() == 1 {
        return Ok(stack.into_iter().next());
    }
    let n = bench.stimuli.len();
    let cols = stack.iter().map(|a| a.matrix().ncols()).sum();
    let mut m = DMatrix::zeros(n, cols);
    let mut offset = 0;
    for a in &stack {
        m.columns_mut(offset, a.matrix().ncols()).copy_from(a.matrix());
        offset += a.matrix().ncols();
    }
    let first = &stack[0];
    Ok(Some(ActivationSet::new(
        m,
        first.stimulus_ids().to_vec(),
        model_id,
        ck.checkpoint_tokens,
        "all-layers",
        first.seed,
    )?))
}

fn score(cfg: &LoadedConfig, dir: &OutputDir) -> CliResult<Vec<(String, Vec<u8>)>> {
    let c = &cfg.config;
    let selections: BTreeMap<(String, u64), LocalizerResult> = if c.localizer.is_some() {
        let (bytes, _) = dir.read_verified(Stage::Localize.name(), LOCALIZER_FILE)?;
        let artifact: LocalizerArtifact = serde_json::from_slice(&bytes)
            .map_err(|e| brainalign::Error::Format(format!("{LOCALIZER_FILE}: {e}")))?;
        artifact
            .checkpoints
            .into_iter()
            .map(|lc| {
                let key = (lc.model_id.clone(), lc.checkpoint_tokens);
                let result = LocalizerResult {
                    model_id: lc.model_id,
                    layers: lc.layers,
                    t_values: Vec::new(),
                    selected_units: lc.selected_units,
                    k: artifact.k,
                };
                (key, result)
            })
            .collect()
    } else {
        BTreeMap::new()
    };

    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for entry in &c.benchmarks {
        let bench = prepare_benchmark(cfg, entry)?;
        let folds = make_folds(cfg, entry, &bench)?;
        let folds_artifact = FoldsArtifact {
            config_digest: cfg.digest.clone(),
            benchmark_id: bench.benchmark_id.clone(),
            grouping: entry
                .folds
                .segments
                .map_or_else(|| "group".to_string(), |n| format!("segments:{n}")),
            fold_sizes: folds.fold_sizes(),
            spec: folds.clone(),
        };
        outputs.push((format!("{}/{FOLDS_FILE}", bench.benchmark_id), to_json_bytes(&folds_artifact)));

        let rel = format!("{}/{CEILING_FILE}", bench.benchmark_id);
        let (bytes, _) = dir.read_verified(Stage::Ceiling.name(), &rel)?;
        let ceiling: CeilingArtifact =
            serde_json::from_slice(&bytes).map_err(|e| brainalign::Error::Format(format!("{rel}: {e}")))?;

        let neural = pooled_units(&bench);
        let jobs: Vec<(&str, &CheckpointEntry)> = c
            .models
            .iter()
            .flat_map(|m| m.checkpoints.iter().map(move |ck| (m.model_id.as_str(), ck)))
            .collect();
        let scored = jobs
            .par_iter()
            .map(|(model, ck)| {
                let selection = selections.get(&(model.to_string(), ck.checkpoint_tokens));
                if c.localizer.is_some() && selection.is_none() {
                    return Err(invalid!("{LOCALIZER_FILE} has no selection for {model}@{}", ck.checkpoint_tokens));
                }
                let Some(acts) = model_features(cfg, model, ck, &bench, selection)? else {
                    return Ok(None);
                };
                let p = linear_predictivity(&acts, &neural, &folds, &c.ridge)?;
                let s = AlignmentScore::new(&bench.benchmark_id, *model, ck.checkpoint_tokens, p.per_fold_r, ceiling.ceiling)?;
                Ok(Some(s))
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.extend(scored.iter().flatten().map(ScoreRow::from));
    }
    outputs.push((SCORES_FILE.to_string(), scores_csv(&rows)));
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Behavioral

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BehavioralResult {
    id: String,
    model_id: String,
    checkpoint_tokens: u64,
    #[serde(flatten)]
    report: BehavioralReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BehavioralArtifact {
    config_digest: String,
    results: Vec<BehavioralResult>,
}

fn behavioral(cfg: &LoadedConfig) -> CliResult<Vec<(String, Vec<u8>)>> {
    let results = cfg
        .config
        .behavioral
        .iter()
        .map(|b| {
            let losses = read_token_losses(cfg.resolve(&b.token_losses))?;
            let rts = read_reading_times(cfg.resolve(&b.reading_times))?;
            Ok(BehavioralResult {
                id: b.id.clone(),
                model_id: b.model_id.clone(),
                checkpoint_tokens: b.checkpoint_tokens,
                report: behavioral_alignment(&losses, &rts)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let artifact = BehavioralArtifact {
        config_digest: cfg.digest.clone(),
        results,
    };
    Ok(vec![(BEHAVIORAL_FILE.to_string(), to_json_bytes(&artifact))])
}

// ---------------------------------------------------------------------------
// Analysis

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedFit {
    pub predictor: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub a: String,
    pub b: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub model_id: String,
    pub target_series: Option<String>,
    /// Plot-ready series: id → [(checkpoint_tokens, value)]
    pub series: BTreeMap<String, Vec<(u64, f64)>>,
    pub fits: Vec<TrajectoryFit>,
    pub skipped_fits: Vec<SkippedFit>,
    pub tests: Vec<NamedTest>,
    pub windows: Vec<NamedTest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlResult {
    pub benchmark_id: String,
    pub pretrained: String,
    #[serde(flatten)]
    pub report: ControlReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_digest: String,
    pub seed: u64,
    pub models: Vec<ModelAnalysis>,
    pub controls: Vec<ControlResult>,
}

const BRAIN: &str = "brain_alignment";

/// Brain-alignment series per model from the score table: the benchmark
/// aggregate at every checkpoint.
fn brain_series(rows: &[ScoreRow]) -> CliResult<BTreeMap<String, Vec<(u64, f64)>>> {
    let mut grouped: BTreeMap<(&str, u64), Vec<AlignmentScore>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry((&r.model_id, r.checkpoint_tokens))
            .or_default()
            .push(AlignmentScore {
                benchmark_id: r.benchmark_id.clone(),
                model_id: r.model_id.clone(),
                checkpoint_tokens: r.checkpoint_tokens,
                raw_r: r.raw_r,
                ceiling: r.ceiling,
                normalized: r.normalized,
                n_folds: r.n_folds,
                per_fold_r: Vec::new(),
            });
    }
    let mut out: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for ((model, tokens), scores) in grouped {
        out.entry(model.to_string())
            .or_default()
            .push((tokens, aggregate_benchmarks(&scores)?));
    }
    Ok(out)
}

fn analyze_model(
    model_id: &str,
    table: &TrajectoryTable,
    opts: &TrajectoryOptions,
    windows: &[crate::config::NamedWindow],
) -> ModelAnalysis {
    let ids = table.series_ids();
    let series: BTreeMap<String, Vec<(u64, f64)>> = ids.iter().map(|id| (id.clone(), table.series(id))).collect();
    let target = ids.iter().find(|id| id.as_str() == BRAIN).cloned();
    let mut analysis = ModelAnalysis {
        model_id: model_id.to_string(),
        target_series: target.clone(),
        series,
        fits: Vec::new(),
        skipped_fits: Vec::new(),
        tests: Vec::new(),
        windows: Vec::new(),
    };
    let Some(target) = target else {
        return analysis;
    };
    let y = table.series(&target);
    let predictors: Vec<&String> = ids
        .iter()
        .filter(|id| SeriesKind::of_series(id) != Some(SeriesKind::BrainAlignment))
        .collect();
    for id in &predictors {
        match trajectory_r2(id, &table.series(id), &target, &y, opts) {
            Ok(fit) => analysis.fits.push(fit),
            Err(e) => analysis.skipped_fits.push(SkippedFit {
                predictor: id.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    let fit_of = |name: &str| analysis.fits.iter().find(|f| f.predictor_series == name);
    if let (Some(formal), Some(functional)) = (fit_of("formal_score"), fit_of("functional_score")) {
        let outcome = if formal.skipped_folds == functional.skipped_folds {
            wilcoxon_signed_rank(&formal.per_fold_r2, &functional.per_fold_r2).map_err(|e| e.to_string())
        } else {
            Err("fold sets differ; R² values are not paired".to_string())
        };
        analysis.tests.push(NamedTest {
            name: "formal_vs_functional_r2".into(),
            a: formal.predictor_series.clone(),
            b: functional.predictor_series.clone(),
            result: outcome.as_ref().ok().cloned(),
            error: outcome.err(),
        });
    }

    for w in windows {
        for id in &predictors {
            let outcome = windowed_correlation(&y, &table.series(id), w.window()).map_err(|e| e.to_string());
            analysis.windows.push(NamedTest {
                name: w.name.clone(),
                a: target.clone(),
                b: id.to_string(),
                result: outcome.as_ref().ok().cloned(),
                error: outcome.err(),
            });
        }
    }
    analysis
}

fn analyze(cfg: &LoadedConfig, dir: &OutputDir) -> CliResult<Vec<(String, Vec<u8>)>> {
    let c = &cfg.config;
    let scores = if dir.output_digest(Stage::Score.name(), SCORES_FILE).is_some() {
        read_scores(&dir.read_verified(Stage::Score.name(), SCORES_FILE)?.0)?
    } else {
        Vec::new()
    };
    let behavior: Vec<BehavioralResult> = if dir.output_digest(Stage::Behavioral.name(), BEHAVIORAL_FILE).is_some() {
        let (bytes, _) = dir.read_verified(Stage::Behavioral.name(), BEHAVIORAL_FILE)?;
        let artifact: BehavioralArtifact = serde_json::from_slice(&bytes)
            .map_err(|e| brainalign::Error::Format(format!("{BEHAVIORAL_FILE}: {e}")))?;
        artifact.results
    } else {
        Vec::new()
    };

    // model order: configured models, then any others in table/behavioral order
    let mut models: Vec<String> = c.models.iter().map(|m| m.model_id.clone()).collect();
    for id in c
        .analysis
        .tables
        .iter()
        .map(|t| &t.model_id)
        .chain(behavior.iter().map(|b| &b.model_id))
    {
        if !models.contains(id) {
            models.push(id.clone());
        }
    }

    let brain = brain_series(&scores)?;
    let opts = TrajectoryOptions {
        k: c.analysis.k,
        seed: c.stage_seeds().trajectory,
        intercept: c.analysis.intercept,
        shuffled: c.analysis.shuffled,
    };
    let mut reports = Vec::new();
    for model in &models {
        let mut rows: Vec<TrajectoryRow> = Vec::new();
        for t in c.analysis.tables.iter().filter(|t| &t.model_id == model) {
            rows.extend(TrajectoryTable::read_csv(cfg.resolve(&t.path))?.rows().iter().cloned());
        }
        let has_brain = rows.iter().any(|r| r.series_id == BRAIN);
        if let Some(points) = brain.get(model) {
            let id = if has_brain { "brain_alignment:pipeline" } else { BRAIN };
            rows.extend(points.iter().map(|&(t, v)| TrajectoryRow {
                checkpoint_tokens: t,
                series_id: id.to_string(),
                value: v,
            }));
        }
        let mut by_entry: BTreeMap<&str, Vec<&BehavioralResult>> = BTreeMap::new();
        for b in behavior.iter().filter(|b| &b.model_id == model) {
            by_entry.entry(&b.id).or_default().push(b);
        }
        for (id, mut results) in by_entry {
            results.sort_by_key(|b| b.checkpoint_tokens);
            rows.extend(results.iter().map(|b| TrajectoryRow {
                checkpoint_tokens: b.checkpoint_tokens,
                series_id: format!("behavioral_r:{id}"),
                value: b.report.r,
            }));
        }
        let table = TrajectoryTable::new(rows)?;
        reports.push(analyze_model(model, &table, &opts, &c.analysis.windows));
    }

    let latest = |bench: &str, model: &str| -> CliResult<f64> {
        scores
            .iter()
            .filter(|r| r.benchmark_id == bench && r.model_id == model)
            .max_by_key(|r| r.checkpoint_tokens)
            .map(|r| r.normalized)
            .ok_or_else(|| invalid!("control comparison: no score for model '{model}' on '{bench}'"))
    };
    let controls = c
        .analysis
        .controls
        .iter()
        .map(|ctl| {
            let random = ctl
                .random_token
                .iter()
                .map(|m| latest(&ctl.benchmark_id, m))
                .collect::<CliResult<Vec<_>>>()?;
            let report = control_comparison(
                latest(&ctl.benchmark_id, &ctl.pretrained)?,
                &random,
                latest(&ctl.benchmark_id, &ctl.untrained)?,
            )?;
            for w in &report.warnings {
                log::warn!("{}: {w}", ctl.benchmark_id);
            }
            Ok(ControlResult {
                benchmark_id: ctl.benchmark_id.clone(),
                pretrained: ctl.pretrained.clone(),
                report,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let report = AnalysisReport {
        config_digest: cfg.digest.clone(),
        seed: c.stage_seeds().trajectory,
        models: reports,
        controls,
    };
    Ok(vec![(ANALYSIS_FILE.to_string(), to_json_bytes(&report))])
}

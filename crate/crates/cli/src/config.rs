//! Run configuration: a JSON document with a mandatory seed. Relative paths
//! are resolved against the directory holding the configuration file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use brainalign::analysis::TokenWindow;
use brainalign::localizer::Ranking;
use brainalign::metrics::RidgeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub benchmarks: Vec<BenchmarkEntry>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localizer: Option<LocalizerSettings>,
    #[serde(default)]
    pub behavioral: Vec<BehavioralEntry>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntry {
    pub dir: PathBuf,
    #[serde(default)]
    pub folds: FoldSettings,
    #[serde(default)]
    pub ceiling: CeilingSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    Random,
    Grouped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSettings {
    pub scheme: SplitScheme,
    pub k: usize,
    /// Cut every story into this many contiguous segments and use the
    /// segments as groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings {
            scheme: SplitScheme::Grouped,
            k: brainalign::splits::DEFAULT_K,
            segments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeilingSettings {
    pub draws: usize,
    /// Use this value instead of estimating one from the subjects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theoretical: Option<f64>,
}

impl Default for CeilingSettings {
    fn default() -> Self {
        CeilingSettings {
            draws: brainalign::ceiling::DEFAULT_DRAWS,
            theoretical: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub model_id: String,
    pub checkpoints: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub checkpoint_tokens: u64,
    /// benchmark id → activation sidecars, one per layer
    pub layers: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localizer: Option<LocalizerInputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerInputs {
    /// One sidecar per layer; layer tags must match `nonwords`.
    pub sentences: Vec<PathBuf>,
    pub nonwords: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerSettings {
    #[serde(default = "default_units")]
    pub k: usize,
    #[serde(default)]
    pub ranking: Ranking,
}

fn default_units() -> usize {
    brainalign::localizer::DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehavioralEntry {
    pub id: String,
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub token_losses: PathBuf,
    pub reading_times: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Externally computed per-checkpoint series, one table per model.
    #[serde(default)]
    pub tables: Vec<TableEntry>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub shuffled: bool,
    #[serde(default)]
    pub windows: Vec<NamedWindow>,
    #[serde(default)]
    pub controls: Vec<ControlEntry>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            tables: Vec::new(),
            k: default_k(),
            intercept: true,
            shuffled: false,
            windows: Vec::new(),
            controls: Vec::new(),
        }
    }
}

fn default_k() -> usize {
    brainalign::splits::DEFAULT_K
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub model_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedWindow {
    pub name: String,
    /// Exclusive lower bound in training tokens.
    pub after: u64,
    /// Inclusive upper bound in training tokens.
    pub up_to: u64,
}

impl NamedWindow {
    pub fn window(&self) -> TokenWindow {
        TokenWindow {
            after: self.after,
            up_to: self.up_to,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlEntry {
    pub benchmark_id: String,
    pub pretrained: String,
    pub random_token: Vec<String>,
    pub untrained: String,
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory that relative paths are resolved against.
    pub base: PathBuf,
    pub digest: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| invalid!("{}: invalid configuration: {e}", path.display()))?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::from_parts(config, base))
    }

    pub fn from_parts(config: RunConfig, base: PathBuf) -> Self {
        let digest = config.digest();
        LoadedConfig { config, base, digest }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Path as recorded in the run manifest: relative to the config directory.
    pub fn display_key(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

impl RunConfig {
    /// SHA-256 of the canonical serialization. `jobs` does not affect
    /// results and is left out.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.jobs = None;
        let bytes = serde_json::to_vec(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.ridge.validate()?;
        if self.jobs == Some(0) {
            return Err(invalid!("jobs must be at least 1"));
        }
        for b in &self.benchmarks {
            if b.ceiling.draws == 0 {
                return Err(invalid!("{}: ceiling draws must be at least 1", b.dir.display()));
            }
        }
        for m in &self.models {
            if m.checkpoints.is_empty() {
                return Err(invalid!("model '{}' lists no checkpoints", m.model_id));
            }
            for c in &m.checkpoints {
                if self.localizer.is_some() && c.localizer.is_none() {
                    return Err(invalid!(
                        "model '{}' checkpoint {}: localizer inputs required when localization is enabled",
                        m.model_id,
                        c.checkpoint_tokens
                    ));
                }
                if let Some(loc) = &c.localizer {
                    if loc.sentences.len() != loc.nonwords.len() || loc.sentences.is_empty() {
                        return Err(invalid!(
                            "model '{}' checkpoint {}: sentences and nonwords must list the same non-zero number of layers",
                            m.model_id,
                            c.checkpoint_tokens
                        ));
                    }
                }
            }
        }
        if let Some(l) = &self.localizer {
            if l.k == 0 {
                return Err(invalid!("localizer k must be at least 1"));
            }
        }
        Ok(())
    }

    /// Seeds handed to each randomized step, derived from the run seed.
    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds {
            folds: derive_seed(self.seed, "folds"),
            ceiling: derive_seed(self.seed, "ceiling"),
            trajectory: derive_seed(self.seed, "trajectory"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub folds: u64,
    pub ceiling: u64,
    pub trajectory: u64,
}

fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

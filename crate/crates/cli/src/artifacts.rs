//! Output directory bookkeeping: atomic writes, SHA-256 digests and the
//! run manifest that records each stage's inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, StageSeeds};
use crate::error::{invalid, CliError, CliResult};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// input key → digest; keys are `config`, `file:<path>` or `artifact:<path>`
    pub inputs: BTreeMap<String, String>,
    /// output path (relative to the output directory) → digest
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Digests of everything a stage reads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inputs(pub BTreeMap<String, String>);

impl Inputs {
    pub fn new(cfg: &LoadedConfig) -> Self {
        let mut map = BTreeMap::new();
        map.insert("config".to_string(), cfg.digest.clone());
        Inputs(map)
    }

    pub fn file(&mut self, cfg: &LoadedConfig, path: &Path) -> CliResult<()> {
        let digest = file_digest(path)?;
        self.0.insert(format!("file:{}", cfg.display_key(path)), digest);
        Ok(())
    }

    pub fn artifact(&mut self, rel: &str, digest: &str) {
        self.0.insert(format!("artifact:{rel}"), digest.to_string());
    }
}

/// The output directory of a run and its manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn open(root: &Path, cfg: &LoadedConfig) -> CliResult<Self> {
        let path = root.join(MANIFEST_FILE);
        let stages = if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let previous: RunManifest = serde_json::from_str(&text)
                .map_err(|e| invalid!("{}: unreadable run manifest: {e}", path.display()))?;
            previous.stages
        } else {
            BTreeMap::new()
        };
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest: RunManifest {
                schema_version: MANIFEST_SCHEMA,
                config_digest: cfg.digest.clone(),
                seed: cfg.config.seed,
                seeds: cfg.config.stage_seeds(),
                stages,
            },
        })
    }

    /// True when `root` exists and holds any entry.
    pub fn has_artifacts(root: &Path) -> bool {
        fs::read_dir(root).map(|mut d| d.next().is_some()).unwrap_or(false)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Recorded digest of an output of `stage`, if that stage has run.
    pub fn output_digest(&self, stage: &str, rel: &str) -> Option<&str> {
        self.manifest
            .stages
            .get(stage)
            .and_then(|r| r.outputs.get(rel))
            .map(String::as_str)
    }

    /// Same inputs as last time and every output still intact.
    pub fn up_to_date(&self, stage: &str, inputs: &Inputs) -> bool {
        let Some(record) = self.manifest.stages.get(stage) else {
            return false;
        };
        record.inputs == inputs.0
            && record
                .outputs
                .iter()
                .all(|(rel, digest)| file_digest(&self.root.join(rel)).is_ok_and(|d| &d == digest))
    }

    /// Reads an output of an earlier stage after checking its digest.
    pub fn read_verified(&self, stage: &str, rel: &str) -> CliResult<(Vec<u8>, String)> {
        let path = self.root.join(rel);
        let expected = self
            .output_digest(stage, rel)
            .ok_or_else(|| CliError::MissingInput(path.clone()))?
            .to_string();
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != expected {
            return Err(invalid!(
                "{}: digest mismatch (recorded {expected}, found {actual}); rerun the '{stage}' stage",
                path.display()
            ));
        }
        Ok((bytes, expected))
    }

    /// Writes a stage's outputs and records them in the manifest.
    pub fn commit(&mut self, stage: &str, inputs: Inputs, outputs: Vec<(String, Vec<u8>)>) -> CliResult<()> {
        let mut record = StageRecord {
            inputs: inputs.0,
            outputs: BTreeMap::new(),
        };
        for (rel, bytes) in outputs {
            write_atomic(&self.root.join(&rel), &bytes)?;
            record.outputs.insert(rel, sha256_hex(&bytes));
        }
        self.manifest.stages.insert(stage.to_string(), record);
        write_atomic(&self.root.join(MANIFEST_FILE), &to_json_bytes(&self.manifest))
    }
}

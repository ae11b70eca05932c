//! Datamodel checks on inputs, without scoring anything.

use std::path::Path;

use brainalign::behavioral::{read_reading_times, read_token_losses};
use brainalign::datamodel::{load_activations, load_benchmark, read_matrix};
use brainalign::TrajectoryTable;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

/// Validates every input a configuration references. Returns one summary
/// line per checked item.
pub fn validate_config(cfg: &LoadedConfig) -> CliResult<Vec<String>> {
    let c = &cfg.config;
    let mut lines = Vec::new();
    let mut benchmarks = std::collections::BTreeMap::new();
    for b in &c.benchmarks {
        let bench = load_benchmark(cfg.resolve(&b.dir))?;
        lines.push(format!(
            "benchmark {}: {} stimuli, {} subjects, {} all-NaN units dropped",
            bench.benchmark_id,
            bench.stimuli.len(),
            bench.neural.subjects().len(),
            bench.neural.dropped_units()
        ));
        benchmarks.insert(bench.benchmark_id.clone(), bench);
    }
    for m in &c.models {
        for ck in &m.checkpoints {
            let mut sets = 0;
            for (bench_id, paths) in &ck.layers {
                let bench = benchmarks
                    .get(bench_id)
                    .ok_or_else(|| crate::error::invalid!("{}@{}: unknown benchmark '{bench_id}'", m.model_id, ck.checkpoint_tokens))?;
                for p in paths {
                    load_activations(cfg.resolve(p))?.check_order(&bench.stimuli)?;
                    sets += 1;
                }
            }
            if let Some(loc) = &ck.localizer {
                for p in loc.sentences.iter().chain(&loc.nonwords) {
                    load_activations(cfg.resolve(p))?;
                    sets += 1;
                }
            }
            lines.push(format!("model {}@{}: {sets} activation sets", m.model_id, ck.checkpoint_tokens));
        }
    }
    for b in &c.behavioral {
        let losses = read_token_losses(cfg.resolve(&b.token_losses))?;
        let rts = read_reading_times(cfg.resolve(&b.reading_times))?;
        lines.push(format!("behavioral {}: {} loss rows, {} reading-time rows", b.id, losses.len(), rts.len()));
    }
    for t in &c.analysis.tables {
        let table = TrajectoryTable::read_csv(cfg.resolve(&t.path))?;
        lines.push(format!("table {}: {} series", t.path.display(), table.series_ids().len()));
    }
    Ok(lines)
}

/// Validates a single file or benchmark directory, chosen by its form.
pub fn validate_path(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    if path.is_dir() {
        let bench = load_benchmark(path)?;
        return Ok(format!("{}: benchmark {} ok", path.display(), bench.benchmark_id));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => {
            let m = read_matrix(path)?;
            Ok(format!("{}: {}x{} matrix ok", path.display(), m.nrows(), m.ncols()))
        }
        Some("json") => {
            let acts = load_activations(path)?;
            Ok(format!(
                "{}: activations {}@{} {} ok",
                path.display(),
                acts.model_id,
                acts.checkpoint_tokens,
                acts.layer_tag
            ))
        }
        Some("csv") => {
            let table = TrajectoryTable::read_csv(path)?;
            Ok(format!("{}: trajectory table with {} series ok", path.display(), table.series_ids().len()))
        }
        _ => Err(crate::error::invalid!("{}: unrecognised input kind", path.display())),
    }
}

//! Score normalization, benchmark aggregation, and the statistics relating
//! brain alignment to competence, loss, and behavior across checkpoints.

mod trajectory;
mod wilcoxon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::AlignmentScore;
use crate::error::{validation, Result};
use crate::stats::mean;

pub use trajectory::{trajectory_r2, windowed_correlation, TokenWindow, TrajectoryFit, TrajectoryOptions, TRAJECTORY_LAMBDA};
pub use wilcoxon::{exact_two_sided_p, wilcoxon_signed_rank, EXACT_MAX_N, MIN_PAIRS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticName {
    #[serde(rename = "wilcoxon_W")]
    WilcoxonW,
    PearsonR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic_name: StatisticName,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub sided: Sided,
}

/// `raw_r / ceiling`. Values above 1 are legitimate when the ceiling is noisy.
pub fn normalize_score(raw_r: f64, ceiling: f64) -> Result<f64> {
    if !(ceiling.is_finite() && ceiling > 0.0) {
        return Err(validation!("ceiling must be positive, got {ceiling}"));
    }
    if !raw_r.is_finite() {
        return Err(validation!("raw score must be finite, got {raw_r}"));
    }
    Ok(raw_r / ceiling)
}

/// `(acc − chance) / (1 − chance)`: 0 at chance, 1 at perfect accuracy.
pub fn normalize_accuracy(acc: f64, chance: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&chance) {
        return Err(validation!("chance level must lie in [0, 1), got {chance}"));
    }
    if !(0.0..=1.0).contains(&acc) {
        return Err(validation!("accuracy must lie in [0, 1], got {acc}"));
    }
    Ok((acc - chance) / (1.0 - chance))
}

/// Benchmark family of an id: the part before the first `:`.
///
/// Experiments of one dataset (e.g. `Pereira2018:exp2`, `Pereira2018:exp3`)
/// share a family and are averaged before entering the cross-benchmark mean.
pub fn benchmark_family(benchmark_id: &str) -> &str {
    benchmark_id.split(':').next().unwrap_or(benchmark_id)
}

/// Unweighted mean of normalized scores across benchmark families for one
/// (model, checkpoint).
pub fn aggregate_benchmarks(scores: &[AlignmentScore]) -> Result<f64> {
    let first = scores
        .first()
        .ok_or_else(|| validation!("no scores to aggregate"))?;
    if scores
        .iter()
        .any(|s| s.model_id != first.model_id || s.checkpoint_tokens != first.checkpoint_tokens)
    {
        return Err(validation!("aggregate_benchmarks expects a single (model, checkpoint)"));
    }
    let mut families: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for s in scores {
        let family = benchmark_family(&s.benchmark_id);
        if !families.contains_key(family) {
            order.push(family);
        }
        families.entry(family).or_default().push(s.normalized);
    }
    let per_family: Vec<f64> = order.iter().map(|f| mean(&families[f])).collect();
    Ok(mean(&per_family))
}

/// Comparison of a model against its random-token and untrained controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub pretrained: f64,
    pub random_token_mean: f64,
    pub random_token_scores: Vec<f64>,
    pub untrained: f64,
    pub pretrained_above_random: bool,
    pub untrained_above_random: bool,
    /// untrained / pretrained; absent when the pretrained score is zero.
    pub untrained_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn control_comparison(pretrained: f64, random_token_scores: &[f64], untrained: f64) -> Result<ControlReport> {
    if random_token_scores.is_empty() {
        return Err(validation!("at least one random-token control score is required"));
    }
    let random_token_mean = mean(random_token_scores);
    let pretrained_above_random = pretrained > random_token_mean;
    let mut warnings = Vec::new();
    if !pretrained_above_random {
        warnings.push(format!(
            "metric validity: pretrained score {pretrained} does not exceed the random-token control mean {random_token_mean}"
        ));
    }
    Ok(ControlReport {
        pretrained,
        random_token_mean,
        random_token_scores: random_token_scores.to_vec(),
        untrained,
        pretrained_above_random,
        untrained_above_random: untrained > random_token_mean,
        untrained_ratio: (pretrained != 0.0).then(|| untrained / pretrained),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(bench: &str, normalized: f64) -> AlignmentScore {
        AlignmentScore::new(bench, "m", 4_000_000_000_000, vec![normalized], 1.0).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_score(0.144, 0.144).unwrap(), 1.0);
        assert_eq!(normalize_score(0.0, 0.2).unwrap(), 0.0);
        assert_eq!(normalize_score(0.08, 0.16).unwrap(), 0.5);
        assert!(normalize_score(0.1, 0.0).is_err());
        assert!(normalize_score(0.1, -1.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(normalize_accuracy(0.25, 0.25).unwrap(), 0.0);
        assert_eq!(normalize_accuracy(1.0, 0.25).unwrap(), 1.0);
        assert_eq!(normalize_accuracy(0.75, 0.5).unwrap(), 0.5);
        assert!(normalize_accuracy(0.5, 1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let row: Vec<AlignmentScore> = ["Pereira2018", "Blank2014", "Tuckute2024", "Fedorenko2016", "Narratives"]
            .iter()
            .zip([1.05, 0.13, 0.63, 0.82, 0.05])
            .map(|(b, v)| score(b, v))
            .collect();
        assert!((aggregate_benchmarks(&row).unwrap() - 0.536).abs() < 1e-12);
        assert_eq!(aggregate_benchmarks(&row[..1]).unwrap(), 1.05);
        let two = [score("a", 0.2), score("b", 0.4)];
        assert!((aggregate_benchmarks(&two).unwrap() - 0.3).abs() < 1e-15);
        assert!(aggregate_benchmarks(&[]).is_err());
    }

    #[test]
    fn experiments_of_one_dataset_are_pre_averaged() {
        let scores = [
            score("Pereira2018:exp2", 0.8),
            score("Pereira2018:exp3", 1.2),
            score("Blank2014", 0.2),
        ];
        assert!((aggregate_benchmarks(&scores).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn controls() {
        let report = control_comparison(0.6, &[0.1, 0.12, 0.08, 0.11, 0.09], 0.3).unwrap();
        assert!(report.pretrained_above_random && report.untrained_above_random);
        assert_eq!(report.untrained_ratio, Some(0.5));
        assert!((report.random_token_mean - 0.1).abs() < 1e-15);

        let flat = control_comparison(0.1, &[0.1], 0.05).unwrap();
        assert!(!flat.pretrained_above_random);
        assert_eq!(flat.warnings.len(), 1);
        assert!(control_comparison(0.1, &[], 0.0).is_err());
    }
}

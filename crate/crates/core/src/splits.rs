//! Deterministic cross-validation partitions.
//!
//! Random folds let stimuli of one topic land on both sides of a split;
//! grouped folds hold out whole groups (topics, stories, story segments).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::StimulusRecord;
use crate::error::{validation, Result};

/// Default number of outer folds.
pub const DEFAULT_K: usize = 10;
/// Default number of segments a story is cut into.
pub const DEFAULT_SEGMENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    Random,
    Grouped,
    SubjectHoldout,
}

/// A partition of elements into `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub scheme: FoldScheme,
    pub k: usize,
    pub seed: u64,
    /// element id → test fold index
    pub assignments: BTreeMap<String, usize>,
}

/// Row indices used for training and testing in one outer fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSpec {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Ids in test fold `fold`, sorted.
    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for f in self.assignments.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Train/test row indices for rows labelled by `ids`.
    ///
    /// Every row id must be assigned; a fold with an empty test side is an
    /// error.
    pub fn plan(&self, ids: &[String]) -> Result<Vec<FoldPlan>> {
        let mut plans: Vec<FoldPlan> = (0..self.k)
            .map(|_| FoldPlan {
                train: Vec::new(),
                test: Vec::new(),
            })
            .collect();
        for (row, id) in ids.iter().enumerate() {
            let fold = self
                .fold_of(id)
                .ok_or_else(|| validation!("stimulus '{id}' has no fold assignment"))?;
            for (f, plan) in plans.iter_mut().enumerate() {
                if f == fold {
                    plan.test.push(row);
                } else {
                    plan.train.push(row);
                }
            }
        }
        if let Some(f) = plans.iter().position(|p| p.test.is_empty()) {
            return Err(validation!("fold {f} has no test rows"));
        }
        Ok(plans)
    }

    /// Re-checks the partition and, given labels, the grouping invariant.
    pub fn check(&self, groups: Option<&BTreeMap<String, String>>) -> Result<()> {
        if self.k < 2 {
            return Err(validation!("k must be at least 2"));
        }
        if self.assignments.values().any(|f| *f >= self.k) {
            return Err(validation!("fold index out of range"));
        }
        if self.fold_sizes().contains(&0) {
            return Err(validation!("empty fold"));
        }
        if let (FoldScheme::Grouped, Some(groups)) = (self.scheme, groups) {
            let mut fold_of_group: BTreeMap<&str, usize> = BTreeMap::new();
            for (id, fold) in &self.assignments {
                let label = groups
                    .get(id)
                    .ok_or_else(|| validation!("stimulus '{id}' has no group label"))?;
                if let Some(prev) = fold_of_group.insert(label, *fold) {
                    if prev != *fold {
                        return Err(validation!("group '{label}' spans folds {prev} and {fold}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_k(k: usize, available: usize, what: &str, op: &str) -> Result<()> {
    if k < 2 {
        return Err(validation!("{op}: k must be at least 2, got {k}"));
    }
    if k > available {
        return Err(validation!("{op}: k = {k} exceeds the number of {what} ({available})"));
    }
    Ok(())
}

/// Shuffles stimuli and deals them round-robin into `k` folds.
pub fn make_random_folds(stimulus_ids: &[String], k: usize, seed: u64) -> Result<FoldSpec> {
    check_k(k, stimulus_ids.len(), "stimuli", "make_random_folds")?;
    let unique: BTreeSet<&String> = stimulus_ids.iter().collect();
    if unique.len() != stimulus_ids.len() {
        return Err(validation!("make_random_folds: duplicate stimulus ids"));
    }
    let mut order: Vec<&String> = stimulus_ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % k))
        .collect();
    Ok(FoldSpec {
        scheme: FoldScheme::Random,
        k,
        seed,
        assignments,
    })
}

/// Holds out whole groups: labels are shuffled, then assigned largest-first
/// to whichever fold currently has the fewest stimuli.
pub fn make_grouped_folds(groups: &BTreeMap<String, String>, k: usize, seed: u64) -> Result<FoldSpec> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for label in groups.values() {
        *sizes.entry(label.as_str()).or_default() += 1;
    }
    check_k(k, sizes.len(), "distinct group labels", "make_grouped_folds")?;

    let mut labels: Vec<(&str, usize)> = sizes.into_iter().collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // stable: equal sizes keep their shuffled order
    labels.sort_by_key(|l| std::cmp::Reverse(l.1));

    let mut load = vec![0usize; k];
    let mut fold_of_label: BTreeMap<&str, usize> = BTreeMap::new();
    for (label, size) in labels {
        let lightest = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[lightest] += size;
        fold_of_label.insert(label, lightest);
    }
    let assignments = groups
        .iter()
        .map(|(id, label)| (id.clone(), fold_of_label[label.as_str()]))
        .collect();
    Ok(FoldSpec {
        scheme: FoldScheme::Grouped,
        k,
        seed,
        assignments,
    })
}

/// Leave-one-subject-out folds over subject ids.
pub fn make_subject_folds(subject_ids: &[String]) -> Result<FoldSpec> {
    check_k(subject_ids.len(), subject_ids.len(), "subjects", "make_subject_folds")?;
    let assignments: BTreeMap<String, usize> = subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    if assignments.len() != subject_ids.len() {
        return Err(validation!("make_subject_folds: duplicate subject ids"));
    }
    Ok(FoldSpec {
        scheme: FoldScheme::SubjectHoldout,
        k: subject_ids.len(),
        seed: 0,
        assignments,
    })
}

/// Cuts one story into `n_segments` contiguous segments labelled
/// `seg0`, `seg1`, …; leading segments absorb the remainder.
pub fn segment_story(stimuli: &[StimulusRecord], n_segments: usize) -> Result<BTreeMap<String, String>> {
    if n_segments < 2 {
        return Err(validation!("segment_story: need at least 2 segments"));
    }
    if n_segments > stimuli.len() {
        return Err(validation!(
            "segment_story: {n_segments} segments for {} stimuli",
            stimuli.len()
        ));
    }
    if stimuli.windows(2).any(|w| w[0].position >= w[1].position) {
        return Err(validation!(
            "segment_story: stimuli are not in presentation order"
        ));
    }
    let n = stimuli.len();
    let (base, extra) = (n / n_segments, n % n_segments);
    let mut out = BTreeMap::new();
    let mut cursor = 0;
    for seg in 0..n_segments {
        let len = base + usize::from(seg < extra);
        for s in &stimuli[cursor..cursor + len] {
            out.insert(s.stimulus_id.clone(), format!("seg{seg}"));
        }
        cursor += len;
    }
    Ok(out)
}

/// Segments every story of a stimulus set; labels become `<story>/segN`.
pub fn segment_stories(stimuli: &[StimulusRecord], n_segments: usize) -> Result<BTreeMap<String, String>> {
    let mut by_story: BTreeMap<&str, Vec<StimulusRecord>> = BTreeMap::new();
    for s in stimuli {
        by_story.entry(&s.group).or_default().push(s.clone());
    }
    let mut out = BTreeMap::new();
    for (story, records) in by_story {
        for (id, seg) in segment_story(&records, n_segments)? {
            out.insert(id, format!("{story}/{seg}"));
        }
    }
    Ok(out)
}

/// `k` contiguous blocks over `n` positions; leading blocks take the remainder.
pub(crate) fn contiguous_blocks(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

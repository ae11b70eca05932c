//! Synthetic fixtures: grouped stimuli, subjects sharing a latent signal,
//! and model activations that carry that signal.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datamodel::{Modality, NeuralDataset, Presentation, StimulusRecord, StimulusSet, SubjectData};
use crate::error::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `n_groups × per_group` stimuli with ids `s0000…` and groups `topic00…`.
pub fn grouped_stimuli(n_groups: usize, per_group: usize) -> StimulusSet {
    let stimuli = (0..n_groups * per_group)
        .map(|i| StimulusRecord {
            stimulus_id: format!("s{i:04}"),
            text: format!("synthetic sentence {i}"),
            group: format!("topic{:02}", i / per_group),
            position: i as u64,
        })
        .collect();
    StimulusSet::new(stimuli, Presentation::Reading, "synthetic").expect("ids are unique")
}

/// Shape of a synthetic neural dataset.
#[derive(Debug, Clone)]
pub struct SharedSignal {
    pub n_subjects: usize,
    pub units_per_subject: usize,
    pub latent_dim: usize,
    /// Standard deviation of subject-specific noise relative to the signal.
    pub noise: f64,
}

/// Subjects whose responses are `latent · mapᵢ + noise`, with a latent
/// shared across subjects. Returns the latent alongside the dataset.
pub fn shared_signal_dataset(
    stimuli: &StimulusSet,
    spec: &SharedSignal,
    seed: u64,
) -> Result<(DMatrix<f64>, NeuralDataset)> {
    let mut rng = rng(seed);
    let n = stimuli.len();
    let latent = gaussian_matrix(n, spec.latent_dim, &mut rng);
    let subjects = (0..spec.n_subjects)
        .map(|s| {
            let map = gaussian_matrix(spec.latent_dim, spec.units_per_subject, &mut rng)
                / (spec.latent_dim as f64).sqrt();
            let noise = gaussian_matrix(n, spec.units_per_subject, &mut rng) * spec.noise;
            SubjectData {
                subject_id: format!("sub{s:02}"),
                matrix: &latent * map + noise,
                units_meta: None,
                dropped_units: 0,
            }
        })
        .collect();
    let dataset = NeuralDataset::new(subjects, stimuli.ids(), stimuli.groups(), Modality::Fmri)?;
    Ok((latent, dataset))
}

/// Features `latent · map + noise` with `features` columns.
pub fn features_from_latent(latent: &DMatrix<f64>, features: usize, noise: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let map = gaussian_matrix(latent.ncols(), features, rng) / (latent.ncols() as f64).sqrt();
    latent * map + gaussian_matrix(latent.nrows(), features, rng) * noise
}

/// One random vector per group, repeated for every stimulus of the group.
pub fn group_component(stimuli: &StimulusSet, dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in stimuli.stimuli() {
        by_group
            .entry(&s.group)
            .or_insert_with(|| (0..dim).map(|_| rng.sample(StandardNormal)).collect());
    }
    DMatrix::from_fn(stimuli.len(), dim, |i, j| by_group[stimuli.stimuli()[i].group.as_str()][j])
}

/// Localizer activations: `planted` units respond to sentences (mean 1)
/// and not to non-words (mean 0); all others share one distribution.
pub fn planted_localizer(
    n_sentences: usize,
    n_nonwords: usize,
    n_units: usize,
    planted: &[usize],
    noise: f64,
    rng: &mut impl Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut sentences = gaussian_matrix(n_sentences, n_units, rng) * noise;
    let nonwords = gaussian_matrix(n_nonwords, n_units, rng) * noise;
    for &u in planted {
        sentences.column_mut(u).add_scalar_mut(1.0);
    }
    (sentences, nonwords)
}

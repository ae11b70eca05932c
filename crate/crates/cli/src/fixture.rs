//! Writes a small synthetic input tree (benchmarks, activations, localizer
//! sets, competence tables, behavioral files) plus a run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use brainalign::behavioral::{reading_times_csv, token_losses_csv, ReadingTimeRecord, TokenLossRecord};
use brainalign::datamodel::{write_activations, write_benchmark};
use brainalign::localizer::Ranking;
use brainalign::synthetic::{self, gaussian_matrix, SharedSignal};
use brainalign::{ActivationSet, Modality, Presentation, StimulusRecord, StimulusSet, TrajectoryRow, TrajectoryTable};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{to_json_bytes, write_atomic};
use crate::config::*;
use crate::error::CliResult;

pub const CONFIG_FILE: &str = "config.json";

const CHECKPOINTS: [u64; 8] = [
    100_000_000,
    250_000_000,
    500_000_000,
    1_000_000_000,
    2_000_000_000,
    4_000_000_000,
    8_000_000_000,
    16_000_000_000,
];
const LAYERS: usize = 2;
const UNITS: usize = 24;
/// Units per layer that carry the stimulus signal and respond to sentences.
const SELECTIVE: usize = 6;

/// How strongly a checkpoint's features carry the latent signal.
fn maturity(tokens: u64) -> f64 {
    1.0 - (-(tokens as f64) / 1e9).exp()
}

fn story_stimuli(stories: usize, per_story: usize) -> StimulusSet {
    let stimuli = (0..stories * per_story)
        .map(|i| StimulusRecord {
            stimulus_id: format!("t{i:04}"),
            text: format!("story fragment {i}"),
            group: format!("story{}", i / per_story),
            position: (i % per_story) as u64,
        })
        .collect();
    StimulusSet::new(stimuli, Presentation::Listening, "synthetic stories").expect("ids are unique")
}

/// Kind of model a synthetic activation set imitates.
#[derive(Clone, Copy)]
enum Variant {
    Trained,
    RandomTokens,
    Untrained,
}

struct ModelSpec {
    model_id: &'static str,
    variant: Variant,
    checkpoints: Vec<u64>,
}

fn layer_features(
    latent: &DMatrix<f64>,
    map: &DMatrix<f64>,
    strength: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let n = latent.nrows();
    let mut m = gaussian_matrix(n, UNITS, rng) * 0.5;
    let signal = latent * map;
    for u in 0..UNITS {
        let gain = if u < SELECTIVE { strength } else { 0.1 * strength };
        let col = signal.column(u) * gain;
        m.column_mut(u).axpy(1.0, &col, 1.0);
    }
    m
}

/// Generates the tree under `root` and returns the configuration path.
pub fn write_fixture(root: &Path, seed: u64) -> CliResult<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let topics = synthetic::grouped_stimuli(12, 6);
    let (topic_latent, topic_neural) = synthetic::shared_signal_dataset(
        &topics,
        &SharedSignal {
            n_subjects: 5,
            units_per_subject: 12,
            latent_dim: 6,
            noise: 1.0,
        },
        rng.random(),
    )?;
    let stories = story_stimuli(2, 40);
    let (story_latent, story_neural) = synthetic::shared_signal_dataset(
        &stories,
        &SharedSignal {
            n_subjects: 2,
            units_per_subject: 10,
            latent_dim: 6,
            noise: 1.0,
        },
        rng.random(),
    )?;
    let subjects = |n: &brainalign::NeuralDataset| -> Vec<(String, DMatrix<f64>)> {
        n.subjects().iter().map(|s| (s.subject_id.clone(), s.matrix.clone())).collect()
    };
    write_benchmark(root.join("benchmarks/topics"), "topics", Modality::Fmri, &topics, &subjects(&topic_neural))?;
    write_benchmark(root.join("benchmarks/stories"), "stories", Modality::Fmri, &stories, &subjects(&story_neural))?;

    let models = [
        ModelSpec {
            model_id: "tiny",
            variant: Variant::Trained,
            checkpoints: CHECKPOINTS.to_vec(),
        },
        ModelSpec {
            model_id: "tiny-untrained",
            variant: Variant::Untrained,
            checkpoints: vec![0],
        },
        ModelSpec {
            model_id: "tiny-random-s0",
            variant: Variant::RandomTokens,
            checkpoints: vec![*CHECKPOINTS.last().expect("non-empty")],
        },
        ModelSpec {
            model_id: "tiny-random-s1",
            variant: Variant::RandomTokens,
            checkpoints: vec![*CHECKPOINTS.last().expect("non-empty")],
        },
    ];
    // one fixed readout per (benchmark, layer), shared by every model
    let maps: Vec<DMatrix<f64>> = (0..2 * LAYERS).map(|_| gaussian_matrix(6, UNITS, &mut rng)).collect();

    let mut model_entries = Vec::new();
    for spec in &models {
        let mut checkpoints = Vec::new();
        for &tokens in &spec.checkpoints {
            let strength = match spec.variant {
                Variant::Trained => maturity(tokens),
                Variant::Untrained => 0.3,
                Variant::RandomTokens => 0.0,
            };
            let dir = format!("activations/{}/{tokens}", spec.model_id);
            let mut layers = BTreeMap::new();
            for (b, (bench, latent, stim)) in [
                ("topics", &topic_latent, &topics),
                ("stories", &story_latent, &stories),
            ]
            .into_iter()
            .enumerate()
            {
                let mut paths = Vec::new();
                for l in 0..LAYERS {
                    let m = layer_features(latent, &maps[b * LAYERS + l], strength, &mut rng);
                    let acts = ActivationSet::new(m, stim.ids(), spec.model_id, tokens, format!("L{l}"), None)?;
                    write_activations(root.join(&dir), &format!("{bench}_L{l}"), &acts)?;
                    paths.push(PathBuf::from(format!("{dir}/{bench}_L{l}.json")));
                }
                layers.insert(bench.to_string(), paths);
            }

            let (mut sentences, mut nonwords) = (Vec::new(), Vec::new());
            let planted: Vec<usize> = match spec.variant {
                Variant::RandomTokens => Vec::new(),
                _ => (0..SELECTIVE).collect(),
            };
            let ids: Vec<String> = (0..40).map(|i| format!("loc{i:03}")).collect();
            for l in 0..LAYERS {
                let (s, n) = synthetic::planted_localizer(40, 40, UNITS, &planted, 0.5, &mut rng);
                for (kind, m, out) in [("sentences", s, &mut sentences), ("nonwords", n, &mut nonwords)] {
                    let acts = ActivationSet::new(m, ids.clone(), spec.model_id, tokens, format!("L{l}"), None)?;
                    write_activations(root.join(&dir), &format!("localizer_{kind}_L{l}"), &acts)?;
                    out.push(PathBuf::from(format!("{dir}/localizer_{kind}_L{l}.json")));
                }
            }
            checkpoints.push(CheckpointEntry {
                checkpoint_tokens: tokens,
                layers,
                localizer: Some(LocalizerInputs { sentences, nonwords }),
            });
        }
        model_entries.push(ModelEntry {
            model_id: spec.model_id.to_string(),
            checkpoints,
        });
    }

    // competence and loss trajectories of the trained model
    let last = *CHECKPOINTS.last().expect("non-empty") as f64;
    let mut rows = Vec::new();
    for &t in &CHECKPOINTS {
        let a = maturity(t);
        let series = [
            ("formal_score", 0.2 + 0.6 * a + rng.random_range(-0.01..0.01)),
            ("functional_score", 0.05 + 0.4 * (t as f64 / last) + rng.random_range(-0.02..0.02)),
            ("lm_loss", 3.0 + 4.0 * (-(t as f64) / 1e9).exp()),
        ];
        for (id, value) in series {
            rows.push(TrajectoryRow {
                checkpoint_tokens: t,
                series_id: id.to_string(),
                value,
            });
        }
    }
    rows.sort_by(|a, b| a.series_id.cmp(&b.series_id).then(a.checkpoint_tokens.cmp(&b.checkpoint_tokens)));
    let table = TrajectoryTable::new(rows)?;
    write_atomic(&root.join("tables/tiny.csv"), table.to_csv_string().as_bytes())?;

    // word-level losses and reading times for three short stories
    let (mut losses, mut rts) = (Vec::new(), Vec::new());
    for story in 0..3 {
        for w in 0..30u64 {
            let n_tokens = rng.random_range(1..=3);
            let token_losses: Vec<f64> = (0..n_tokens).map(|_| rng.random_range(0.3..3.0)).collect();
            let surprisal: f64 = token_losses.iter().sum();
            let word = format!("word{w}");
            losses.push(TokenLossRecord {
                stimulus_id: format!("story{story}"),
                word_index: w,
                word: word.clone(),
                token_losses,
            });
            rts.push(ReadingTimeRecord {
                stimulus_id: format!("story{story}"),
                word_index: w,
                word,
                mean_rt: 250.0 + 25.0 * surprisal + rng.random_range(-30.0..30.0),
            });
        }
    }
    write_atomic(&root.join("behavior/token_losses.csv"), token_losses_csv(&losses).as_bytes())?;
    write_atomic(&root.join("behavior/reading_times.csv"), reading_times_csv(&rts).as_bytes())?;

    let config = RunConfig {
        seed,
        jobs: None,
        ridge: Default::default(),
        benchmarks: vec![
            BenchmarkEntry {
                dir: "benchmarks/topics".into(),
                folds: FoldSettings {
                    scheme: SplitScheme::Grouped,
                    k: 6,
                    segments: None,
                },
                ceiling: CeilingSettings {
                    draws: 5,
                    theoretical: None,
                },
            },
            BenchmarkEntry {
                dir: "benchmarks/stories".into(),
                folds: FoldSettings {
                    scheme: SplitScheme::Grouped,
                    k: 5,
                    segments: Some(5),
                },
                ceiling: CeilingSettings::default(),
            },
        ],
        models: model_entries,
        localizer: Some(LocalizerSettings {
            k: 2 * SELECTIVE,
            ranking: Ranking::Global,
        }),
        behavioral: vec![BehavioralEntry {
            id: "reading".into(),
            model_id: "tiny".into(),
            checkpoint_tokens: *CHECKPOINTS.last().expect("non-empty"),
            token_losses: "behavior/token_losses.csv".into(),
            reading_times: "behavior/reading_times.csv".into(),
        }],
        analysis: AnalysisSettings {
            tables: vec![TableEntry {
                model_id: "tiny".into(),
                path: "tables/tiny.csv".into(),
            }],
            k: 4,
            intercept: true,
            shuffled: false,
            windows: vec![
                NamedWindow {
                    name: "early".into(),
                    after: 0,
                    up_to: 2_000_000_000,
                },
                NamedWindow {
                    name: "late".into(),
                    after: 2_000_000_000,
                    up_to: u64::MAX,
                },
            ],
            controls: vec![ControlEntry {
                benchmark_id: "topics".into(),
                pretrained: "tiny".into(),
                random_token: vec!["tiny-random-s0".into(), "tiny-random-s1".into()],
                untrained: "tiny-untrained".into(),
            }],
        },
    };
    let path = root.join(CONFIG_FILE);
    write_atomic(&path, &to_json_bytes(&config))?;
    Ok(path)
}

//! Functional localization of language-selective model units.
//!
//! Units are ranked by a Welch t contrast of responses to sentences against
//! responses to non-word lists, pooled across layers, and the top `k` are
//! kept for scoring.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::ActivationSet;
use crate::error::{validation, Error, Result};

/// Default number of localized units.
pub const DEFAULT_K: usize = 128;

/// Welch t statistic per column, sentences minus non-words.
///
/// Columns with zero variance in both conditions get `+∞`, `-∞` or `0`
/// according to the sign of the mean difference.
pub fn t_contrast(sentences: &DMatrix<f64>, nonwords: &DMatrix<f64>) -> Result<Vec<f64>> {
    if sentences.ncols() != nonwords.ncols() {
        return Err(Error::Shape(format!(
            "sentence activations have {} units, non-word activations {}",
            sentences.ncols(),
            nonwords.ncols()
        )));
    }
    if sentences.nrows() < 2 || nonwords.nrows() < 2 {
        return Err(validation!("each localizer condition needs at least 2 stimuli"));
    }
    if sentences.iter().chain(nonwords.iter()).any(|v| !v.is_finite()) {
        return Err(validation!("localizer activations must be finite"));
    }
    let (ns, nn) = (sentences.nrows() as f64, nonwords.nrows() as f64);
    Ok(sentences
        .column_iter()
        .zip(nonwords.column_iter())
        .map(|(s, w)| {
            let (ms, mw) = (s.mean(), w.mean());
            let vs = s.iter().map(|v| (v - ms) * (v - ms)).sum::<f64>() / (ns - 1.0);
            let vw = w.iter().map(|v| (v - mw) * (v - mw)).sum::<f64>() / (nn - 1.0);
            let se2 = vs / ns + vw / nn;
            let diff = ms - mw;
            if se2 > 0.0 {
                diff / se2.sqrt()
            } else if diff > 0.0 {
                f64::INFINITY
            } else if diff < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

/// Localizer activations of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerContrast {
    pub layer_tag: String,
    pub sentences: DMatrix<f64>,
    pub nonwords: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Top `k` over all (layer, unit) pairs.
    #[default]
    Global,
    /// `k` split evenly across layers (leading layers take the remainder),
    /// top units within each layer.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedUnit {
    pub layer_tag: String,
    pub unit_index: usize,
    #[serde(with = "signed_inf")]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerResult {
    pub model_id: String,
    /// Layer tags in the order they were given.
    pub layers: Vec<String>,
    /// t value of every unit, per layer.
    pub t_values: Vec<Vec<f64>>,
    /// Selected units in descending t order.
    pub selected_units: Vec<SelectedUnit>,
    pub k: usize,
}

fn by_t_then_position(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Picks the `k` most sentence-selective units across `layers`.
///
/// Ties in t are broken by layer order, then column index.
pub fn select_units(model_id: &str, layers: &[LayerContrast], k: usize, ranking: Ranking) -> Result<LocalizerResult> {
    if layers.is_empty() {
        return Err(validation!("no localizer layers given"));
    }
    let total: usize = layers.iter().map(|l| l.sentences.ncols()).sum();
    if k == 0 || k > total {
        return Err(validation!("cannot select {k} units out of {total}"));
    }
    let t_values = layers
        .par_iter()
        .map(|l| t_contrast(&l.sentences, &l.nonwords))
        .collect::<Result<Vec<_>>>()?;

    let candidates = |layer: usize| t_values[layer].iter().enumerate().map(move |(u, t)| (*t, layer, u));
    let mut chosen: Vec<(f64, usize, usize)> = match ranking {
        Ranking::Global => {
            let mut all: Vec<_> = (0..layers.len()).flat_map(candidates).collect();
            all.sort_by(by_t_then_position);
            all.truncate(k);
            all
        }
        Ranking::PerLayer => {
            let (base, extra) = (k / layers.len(), k % layers.len());
            let mut out = Vec::with_capacity(k);
            for layer in 0..layers.len() {
                let quota = base + usize::from(layer < extra);
                if quota > t_values[layer].len() {
                    return Err(validation!(
                        "layer '{}' has {} units, per-layer quota is {quota}",
                        layers[layer].layer_tag,
                        t_values[layer].len()
                    ));
                }
                let mut own: Vec<_> = candidates(layer).collect();
                own.sort_by(by_t_then_position);
                out.extend(own.into_iter().take(quota));
            }
            out.sort_by(by_t_then_position);
            out
        }
    };
    let selected_units = chosen
        .drain(..)
        .map(|(t, layer, unit)| SelectedUnit {
            layer_tag: layers[layer].layer_tag.clone(),
            unit_index: unit,
            t,
        })
        .collect();
    Ok(LocalizerResult {
        model_id: model_id.to_string(),
        layers: layers.iter().map(|l| l.layer_tag.clone()).collect(),
        t_values,
        selected_units,
        k,
    })
}

/// Projects a stack of per-layer activations onto the selected units.
pub fn apply_selection(stack: &[ActivationSet], sel: &LocalizerResult) -> Result<ActivationSet> {
    let first = stack
        .first()
        .ok_or_else(|| validation!("empty activation stack"))?;
    for layer in stack {
        if layer.stimulus_ids() != first.stimulus_ids() {
            return Err(validation!(
                "layer '{}' rows differ from layer '{}'",
                layer.layer_tag,
                first.layer_tag
            ));
        }
    }
    let n = first.matrix().nrows();
    let mut out = DMatrix::zeros(n, sel.selected_units.len());
    for (col, unit) in sel.selected_units.iter().enumerate() {
        let layer = stack
            .iter()
            .find(|l| l.layer_tag == unit.layer_tag)
            .ok_or_else(|| validation!("selected layer '{}' missing from stack", unit.layer_tag))?;
        if unit.unit_index >= layer.matrix().ncols() {
            return Err(validation!(
                "unit {} out of range for layer '{}' ({} units)",
                unit.unit_index,
                unit.layer_tag,
                layer.matrix().ncols()
            ));
        }
        out.set_column(col, &layer.matrix().column(unit.unit_index));
    }
    ActivationSet::new(
        out,
        first.stimulus_ids().to_vec(),
        first.model_id.clone(),
        first.checkpoint_tokens,
        format!("localized-{}", sel.k),
        first.seed,
    )
}

/// JSON encoding of t values where the infinite sentinels become strings.
mod signed_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *t == f64::INFINITY {
            s.serialize_str("inf")
        } else if *t == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*t)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("bad t value '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(tag: &str, s: DMatrix<f64>, w: DMatrix<f64>) -> LayerContrast {
        LayerContrast {
            layer_tag: tag.into(),
            sentences: s,
            nonwords: w,
        }
    }

    #[test]
    fn welch_hand_example() {
        // Δmean = 1, se² = 2/2 + 2/2
        let s = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let t = t_contrast(&s, &w).unwrap();
        assert!((t[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sentinels() {
        let s = DMatrix::from_row_slice(3, 3, &[1., 0., 2., 1., 0., 2., 1., 0., 2.]);
        let w = DMatrix::from_row_slice(3, 3, &[0., 1., 2., 0., 1., 2., 0., 1., 2.]);
        assert_eq!(t_contrast(&s, &w).unwrap(), vec![f64::INFINITY, f64::NEG_INFINITY, 0.0]);
        let sel = select_units("m", &[layer("l0", s, w)], 1, Ranking::Global).unwrap();
        assert_eq!(sel.selected_units[0].unit_index, 0);
    }

    #[test]
    fn null_unit_near_zero() {
        let s = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let t = t_contrast(&s, &s).unwrap();
        assert_eq!(t[0], 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let s = DMatrix::zeros(3, 2);
        let w = DMatrix::zeros(3, 3);
        assert!(matches!(t_contrast(&s, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn exhaustive_selection_sorted() {
        let s = DMatrix::from_row_slice(2, 3, &[1., 5., 3., 2., 7., 4.]);
        let w = DMatrix::from_row_slice(2, 3, &[0., 0., 0., 1., 1., 1.]);
        let sel = select_units("m", &[layer("a", s.clone(), w.clone()), layer("b", s, w)], 6, Ranking::Global).unwrap();
        assert_eq!(sel.selected_units.len(), 6);
        assert!(sel.selected_units.windows(2).all(|p| p[0].t >= p[1].t));
        // equal t across layers: layer order breaks the tie
        assert_eq!(sel.selected_units[0].layer_tag, "a");
        assert_eq!(sel.selected_units[1].layer_tag, "b");
        assert!(select_units("m", &[layer("a", DMatrix::zeros(2, 1), DMatrix::zeros(2, 1))], 2, Ranking::Global).is_err());
    }

    #[test]
    fn per_layer_quota() {
        let s = DMatrix::from_row_slice(2, 3, &[9., 8., 7., 9.5, 8.5, 7.5]);
        let w = DMatrix::from_row_slice(2, 3, &[0., 0., 0., 0.5, 0.5, 0.5]);
        let weak = DMatrix::from_row_slice(2, 3, &[1., 1.2, 1.1, 1.5, 1.3, 1.6]);
        let layers = [layer("strong", s, w.clone()), layer("weak", weak, w)];
        let global = select_units("m", &layers, 2, Ranking::Global).unwrap();
        assert!(global.selected_units.iter().all(|u| u.layer_tag == "strong"));
        let per = select_units("m", &layers, 2, Ranking::PerLayer).unwrap();
        let tags: Vec<&str> = per.selected_units.iter().map(|u| u.layer_tag.as_str()).collect();
        assert!(tags.contains(&"strong") && tags.contains(&"weak"));
    }

    #[test]
    fn projection_follows_selection_order() {
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let a = ActivationSet::new(DMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64), ids.clone(), "m", 5, "a", None).unwrap();
        let b = ActivationSet::new(DMatrix::from_fn(3, 3, |i, j| (100 + i * 10 + j) as f64), ids, "m", 5, "b", None).unwrap();
        let sel = LocalizerResult {
            model_id: "m".into(),
            layers: vec!["a".into(), "b".into()],
            t_values: vec![],
            selected_units: vec![
                SelectedUnit { layer_tag: "b".into(), unit_index: 2, t: 3.0 },
                SelectedUnit { layer_tag: "a".into(), unit_index: 0, t: 2.0 },
                SelectedUnit { layer_tag: "b".into(), unit_index: 0, t: 1.0 },
            ],
            k: 3,
        };
        let out = apply_selection(&[a.clone(), b.clone()], &sel).unwrap();
        assert_eq!(out.matrix().ncols(), 3);
        assert_eq!(out.matrix().column(0), b.matrix().column(2));
        assert_eq!(out.matrix().column(1), a.matrix().column(0));
        assert_eq!(out.matrix().column(2), b.matrix().column(0));

        let whole = LocalizerResult {
            selected_units: (0..2).map(|u| SelectedUnit { layer_tag: "a".into(), unit_index: u, t: 0.0 }).collect(),
            k: 2,
            ..sel.clone()
        };
        assert_eq!(apply_selection(&[a.clone(), b.clone()], &whole).unwrap().matrix(), a.matrix());

        let missing = LocalizerResult {
            selected_units: vec![SelectedUnit { layer_tag: "c".into(), unit_index: 0, t: 0.0 }],
            k: 1,
            ..sel
        };
        assert!(apply_selection(&[a, b], &missing).is_err());
    }

    #[test]
    fn infinite_t_json() {
        let u = SelectedUnit { layer_tag: "l".into(), unit_index: 1, t: f64::INFINITY };
        let text = serde_json::to_string(&u).unwrap();
        assert!(text.contains("\"inf\""));
        let back: SelectedUnit = serde_json::from_str(&text).unwrap();
        assert_eq!(back, u);
    }
}

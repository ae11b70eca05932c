//! Alignment between per-word model surprisal and human reading times.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::metrics::pearson;

/// Per-token losses (nats) of one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLossRecord {
    pub stimulus_id: String,
    pub word_index: u64,
    pub word: String,
    pub token_losses: Vec<f64>,
}

/// Mean reading time of one word in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingTimeRecord {
    pub stimulus_id: String,
    pub word_index: u64,
    pub word: String,
    pub mean_rt: f64,
}

/// Surprisal of a word: the sum of its token losses.
pub fn word_surprisal(rec: &TokenLossRecord) -> Result<f64> {
    if rec.token_losses.is_empty() {
        return Err(validation!(
            "word {} of '{}' has no token losses",
            rec.word_index,
            rec.stimulus_id
        ));
    }
    Ok(rec.token_losses.iter().sum())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BehavioralReport {
    pub r: f64,
    pub n_words: usize,
    /// Words found on only one side of the join.
    pub excluded_unmatched: usize,
    /// Same key, different word text.
    pub excluded_text_mismatch: usize,
    /// Story-initial words.
    pub excluded_first_word: usize,
    /// Words whose token list is empty.
    pub excluded_no_tokens: usize,
}

/// Lowercases and trims leading/trailing punctuation.
fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace() || (!c.is_alphanumeric() && !c.is_ascii()))
        .to_lowercase()
}

/// Pearson correlation between word surprisal and mean reading time over
/// words present on both sides with matching text. The first word of every
/// story (lowest `word_index` per stimulus in the reading-time data) is
/// left out.
pub fn behavioral_alignment(losses: &[TokenLossRecord], rts: &[ReadingTimeRecord]) -> Result<BehavioralReport> {
    let mut report = BehavioralReport::default();

    let mut by_key: BTreeMap<(&str, u64), &TokenLossRecord> = BTreeMap::new();
    for rec in losses {
        if by_key.insert((&rec.stimulus_id, rec.word_index), rec).is_some() {
            return Err(validation!(
                "duplicate loss record for word {} of '{}'",
                rec.word_index,
                rec.stimulus_id
            ));
        }
    }
    let mut first_word: BTreeMap<&str, u64> = BTreeMap::new();
    for rt in rts {
        if !(rt.mean_rt.is_finite() && rt.mean_rt > 0.0) {
            return Err(validation!(
                "reading time {} for word {} of '{}' is not positive",
                rt.mean_rt,
                rt.word_index,
                rt.stimulus_id
            ));
        }
        let entry = first_word.entry(&rt.stimulus_id).or_insert(rt.word_index);
        *entry = (*entry).min(rt.word_index);
    }

    let mut surprisal = Vec::new();
    let mut times = Vec::new();
    let mut matched = 0usize;
    for rt in rts {
        let Some(loss) = by_key.get(&(rt.stimulus_id.as_str(), rt.word_index)) else {
            report.excluded_unmatched += 1;
            continue;
        };
        matched += 1;
        if normalize_word(&loss.word) != normalize_word(&rt.word) {
            report.excluded_text_mismatch += 1;
            continue;
        }
        if first_word[rt.stimulus_id.as_str()] == rt.word_index {
            report.excluded_first_word += 1;
            continue;
        }
        if loss.token_losses.is_empty() {
            report.excluded_no_tokens += 1;
            continue;
        }
        surprisal.push(word_surprisal(loss)?);
        times.push(rt.mean_rt);
    }
    report.excluded_unmatched += losses.len() - matched;
    report.n_words = surprisal.len();
    if surprisal.len() < 3 {
        return Err(Error::ScoreUndefined(format!(
            "only {} words survive the join",
            surprisal.len()
        )));
    }
    report.r = pearson(&surprisal, &times).map_err(|e| Error::ScoreUndefined(e.to_string()))?;
    Ok(report)
}

#[derive(Debug, Deserialize)]
struct TokenLossRow {
    stimulus_id: String,
    word_index: u64,
    word: String,
    token_index: Option<u64>,
    loss: Option<f64>,
}

/// Reads `token_losses.csv` (stimulus_id, word_index, word, token_index,
/// loss) and groups tokens into words. A row with empty token_index and
/// loss marks a word the tokenizer could not align.
pub fn read_token_losses(path: impl AsRef<Path>) -> Result<Vec<TokenLossRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut words: Vec<TokenLossRecord> = Vec::new();
    let mut index: BTreeMap<(String, u64), usize> = BTreeMap::new();
    let mut last_token: BTreeMap<(String, u64), u64> = BTreeMap::new();
    for row in reader.deserialize::<TokenLossRow>() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let key = (row.stimulus_id.clone(), row.word_index);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            words.push(TokenLossRecord {
                stimulus_id: row.stimulus_id.clone(),
                word_index: row.word_index,
                word: row.word.clone(),
                token_losses: Vec::new(),
            });
            words.len() - 1
        });
        if words[slot].word != row.word {
            return Err(validation!(
                "{}: word {} of '{}' has inconsistent text across tokens",
                path.display(),
                row.word_index,
                row.stimulus_id
            ));
        }
        match (row.token_index, row.loss) {
            (Some(t), Some(loss)) => {
                if !(loss.is_finite() && loss >= 0.0) {
                    return Err(validation!("{}: negative or non-finite loss {loss}", path.display()));
                }
                if let Some(prev) = last_token.insert(key, t) {
                    if t <= prev {
                        return Err(validation!(
                            "{}: token indices of word {} in '{}' are not increasing",
                            path.display(),
                            row.word_index,
                            row.stimulus_id
                        ));
                    }
                }
                words[slot].token_losses.push(loss);
            }
            (None, None) => {}
            _ => {
                return Err(Error::Format(format!(
                    "{}: token_index and loss must both be present or both empty",
                    path.display()
                )))
            }
        }
    }
    Ok(words)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReadingTimeRow {
    stimulus_id: String,
    word_index: u64,
    word: String,
    mean_rt_ms: f64,
}

/// Reads `reading_times.csv` (stimulus_id, word_index, word, mean_rt_ms).
pub fn read_reading_times(path: impl AsRef<Path>) -> Result<Vec<ReadingTimeRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize::<ReadingTimeRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Ok(ReadingTimeRecord {
                stimulus_id: row.stimulus_id,
                word_index: row.word_index,
                word: row.word,
                mean_rt: row.mean_rt_ms,
            })
        })
        .collect()
}

/// Writes token losses in the `token_losses.csv` layout.
pub fn token_losses_csv(records: &[TokenLossRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stimulus_id", "word_index", "word", "token_index", "loss"])
        .expect("in-memory csv");
    for rec in records {
        if rec.token_losses.is_empty() {
            w.write_record([rec.stimulus_id.as_str(), &rec.word_index.to_string(), &rec.word, "", ""])
                .expect("in-memory csv");
        }
        for (t, loss) in rec.token_losses.iter().enumerate() {
            w.write_record([
                rec.stimulus_id.as_str(),
                &rec.word_index.to_string(),
                &rec.word,
                &t.to_string(),
                &loss.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

/// Writes reading times in the `reading_times.csv` layout.
pub fn reading_times_csv(records: &[ReadingTimeRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in records {
        w.serialize(ReadingTimeRow {
            stimulus_id: rec.stimulus_id.clone(),
            word_index: rec.word_index,
            word: rec.word.clone(),
            mean_rt_ms: rec.mean_rt,
        })
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

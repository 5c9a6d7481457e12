//! Correctness labels for the base model's top answer.
//!
//! Text normalization and token F1 follow the SQuAD 2.0 evaluation script:
//! lowercase, drop punctuation, drop the articles `a`/`an`/`the`, collapse
//! whitespace. Offset mode compares inclusive token offsets exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data_model::{DatasetMode, PredictionRecord};
use crate::error::{Error, Result};

/// Training target for one dump record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example_id: String,
    #[serde(with = "label_as_int")]
    pub label: bool,
    pub answerable: bool,
    pub match_credit: f64,
}

mod label_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Unicode punctuation plus the ASCII symbols listed in Python's
    // `string.punctuation`.
    RE.get_or_init(|| Regex::new(r"[\p{P}$+<=>^`|~]").unwrap())
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap())
}

pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct = punctuation().replace_all(&lowered, "");
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(s: &str) -> Vec<String> {
    normalize_text(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Max token F1 of `pred` over `golds`. An empty gold list stands for the
/// single empty answer.
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let pred_tokens = tokens(pred);
    if golds.is_empty() {
        return f1_single(&pred_tokens, &[]);
    }
    golds
        .iter()
        .map(|g| f1_single(&pred_tokens, &tokens(g.as_ref())))
        .fold(0.0, f64::max)
}

/// Whether the record's top candidate is correct under its dataset mode.
pub fn exact_match(record: &PredictionRecord) -> Result<bool> {
    let top = record.top();
    if !record.is_answerable() {
        return Ok(top.is_null);
    }
    if top.is_null {
        return Ok(false);
    }
    match record.dataset_mode {
        DatasetMode::FuzzyText => {
            let pred = normalize_text(&top.text);
            Ok(record.gold_answers.iter().any(|g| normalize_text(g) == pred))
        }
        DatasetMode::OffsetExact => {
            let spans = offset_spans(record)?;
            Ok(spans.iter().any(|s| s.0 == top.begin_token && s.1 == top.end_token))
        }
    }
}

fn offset_spans(record: &PredictionRecord) -> Result<&[crate::data_model::GoldSpan]> {
    match record.gold_spans.as_deref() {
        Some(spans) if !spans.is_empty() => Ok(spans),
        _ => Err(Error::Labeling {
            example_id: record.example_id.clone(),
            message: "offset_exact record is answerable but has no gold_spans".into(),
        }),
    }
}

fn offset_f1(begin: usize, end: usize, gold_begin: usize, gold_end: usize) -> f64 {
    let lo = begin.max(gold_begin);
    let hi = end.min(gold_end);
    if lo > hi {
        return 0.0;
    }
    let overlap = (hi - lo + 1) as f64;
    let precision = overlap / (end - begin + 1) as f64;
    let recall = overlap / (gold_end - gold_begin + 1) as f64;
    2.0 * precision * recall / (precision + recall)
}

fn match_credit(record: &PredictionRecord) -> Result<f64> {
    let top = record.top();
    let answerable = record.is_answerable();
    if !answerable {
        return Ok(if top.is_null { 1.0 } else { 0.0 });
    }
    if top.is_null {
        return Ok(0.0);
    }
    Ok(match record.dataset_mode {
        DatasetMode::FuzzyText => token_f1(&top.text, &record.gold_answers),
        DatasetMode::OffsetExact => offset_spans(record)?
            .iter()
            .map(|g| offset_f1(top.begin_token, top.end_token, g.0, g.1))
            .fold(0.0, f64::max),
    })
}

pub fn derive_label(record: &PredictionRecord) -> Result<LabeledExample> {
    Ok(LabeledExample {
        example_id: record.example_id.clone(),
        label: exact_match(record)?,
        answerable: record.is_answerable(),
        match_credit: match_credit(record)?,
    })
}

pub fn derive_labels(records: &[PredictionRecord]) -> Result<Vec<LabeledExample>> {
    records.iter().map(derive_label).collect()
}

/// Seeded random partition of `0..n` into sizes `round(fraction * n)` and the
/// remainder. Both parts are returned in ascending index order. Each part
/// keeps at least one element.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction {fraction} must lie in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 examples to split, got {n}")));
    }
    let size_a = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut a = order[..size_a].to_vec();
    let mut b = order[size_a..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

pub fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = split_indices(items.len(), fraction, seed)?;
    Ok((
        a.into_iter().map(|i| items[i].clone()).collect(),
        b.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

pub fn write_labels<W: Write>(mut writer: W, labels: &[LabeledExample]) -> Result<()> {
    for l in labels {
        serde_json::to_writer(&mut writer, l).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_labels<R: Read>(reader: R) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: LabeledExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(l);
    }
    Ok(out)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<LabeledExample>> {
    parse_labels(File::open(path)?)
}

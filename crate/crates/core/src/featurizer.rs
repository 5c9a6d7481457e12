//! Feature extraction from prediction records.
//!
//! Every record maps to the same ordered list of named features:
//!
//! | family | names |
//! |---|---|
//! | top-k begin likelihood | `alpha_b_top1` .. `alpha_b_top{k}` |
//! | top-k end likelihood | `alpha_e_top1` .. `alpha_e_top{k}` |
//! | offset overlap with top-1 | `f1_overlap_top1_top2` .. `f1_overlap_top1_top{k}` |
//! | query IDF | `idf_min`, `idf_max`, `idf_mean`, `idf_skew` |
//! | no-answer likelihood | `noanswer_likelihood` |
//! | answer-type likelihood | `atype_{name}` per answer type |
//! | query embedding gradients | `qeg_min`, `qeg_max`, `qeg_mean`, `qeg_skew` |
//!
//! Absent inputs (fewer than k candidates, no answer types, no gradient
//! norms) produce missing values rather than zeros.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data_model::{CandidateSpan, PredictionRecord};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const MAX_K: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub document_count: u64,
    pub default_idf: f64,
    pub idf: BTreeMap<String, f64>,
}

/// Token form used on both sides of the IDF lookup: lowercased, with
/// non-alphanumeric characters trimmed from both ends.
pub fn idf_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Builds a smoothed IDF table, `ln((N + 1) / (df + 1)) + 1`, from an
/// iterator of documents. Documents are whitespace tokenized.
pub fn build_idf_table<I, S>(documents: I) -> Result<IdfTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut df: BTreeMap<String, u64> = BTreeMap::new();
    let mut n: u64 = 0;
    for doc in documents {
        n += 1;
        let unique: HashSet<String> = doc
            .as_ref()
            .split_whitespace()
            .map(idf_token)
            .filter(|t| !t.is_empty())
            .collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    if n == 0 {
        return Err(Error::Feature("cannot build an IDF table from an empty corpus".into()));
    }
    let idf = df.into_iter().map(|(t, d)| (t, smoothed_idf(n, d))).collect();
    Ok(IdfTable {
        document_count: n,
        default_idf: smoothed_idf(n, 0),
        idf,
    })
}

fn is_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn smoothed_idf(n: u64, df: u64) -> f64 {
    ((n as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

impl IdfTable {
    /// IDF of an already-normalized token; unseen tokens get `default_idf`.
    pub fn get(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.default_idf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let table: IdfTable =
            serde_json::from_reader(File::open(path)?).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        if table.document_count == 0 || !is_positive(table.default_idf) || table.idf.values().any(|v| !is_positive(*v))
        {
            return Err(Error::Load(format!("{}: IDF values must be positive", path.display())));
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats4 {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub skew: f64,
}

/// Min, max, mean and population skewness `m3 / m2^(3/2)`. Skew is 0 for
/// fewer than three values or a constant list.
pub fn stats4(values: &[f64]) -> Result<Stats4> {
    if values.is_empty() {
        return Err(Error::Feature("stats4 of an empty list".into()));
    }
    let n = values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / n;
    let skew = if values.len() < 3 || min == max {
        0.0
    } else {
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        if m2 > 0.0 {
            m3 / m2.powf(1.5)
        } else {
            0.0
        }
    };
    Ok(Stats4 { min, max, mean, skew })
}

/// Token-offset F1 between two spans, with `a` as the reference. A null span
/// overlaps only another null span.
pub fn span_overlap_f1(a: &CandidateSpan, b: &CandidateSpan) -> f64 {
    match (a.is_null, b.is_null) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lo = a.begin_token.max(b.begin_token);
    let hi = a.end_token.min(b.end_token);
    if lo > hi {
        return 0.0;
    }
    let overlap = (hi - lo + 1) as f64;
    let precision = overlap / b.len() as f64;
    let recall = overlap / a.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Named, ordered feature values for one record. `None` marks a missing value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    values: IndexMap<String, Option<f64>>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Option<f64>) {
        self.values.insert(name.into(), value);
    }

    /// `None` if the feature is absent or missing.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied().flatten()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<f64>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The feature registry for one dataset: candidate depth plus the answer
/// types seen anywhere in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    k: usize,
    answer_types: Vec<String>,
}

impl FeatureSchema {
    pub fn new(k: usize, answer_types: impl IntoIterator<Item = String>) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(Error::Config(format!("k must be in 1..={MAX_K}, got {k}")));
        }
        let answer_types: BTreeSet<String> = answer_types.into_iter().collect();
        Ok(FeatureSchema {
            k,
            answer_types: answer_types.into_iter().collect(),
        })
    }

    /// Schema covering every answer type that appears in `records`.
    pub fn for_records(records: &[PredictionRecord], k: usize) -> Result<Self> {
        let types = records
            .iter()
            .filter_map(|r| r.answer_type_likelihoods.as_ref())
            .flat_map(|m| m.keys().cloned());
        Self::new(k, types)
    }

    /// Recovers a schema from a feature name list, e.g. a trained model's.
    pub fn from_feature_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut k = 1;
        let mut types = Vec::new();
        for name in names {
            let name = name.as_ref();
            if let Some(i) = name
                .strip_prefix("alpha_b_top")
                .or_else(|| name.strip_prefix("alpha_e_top"))
            {
                if let Ok(i) = i.parse::<usize>() {
                    k = k.max(i);
                }
            } else if let Some(i) = name.strip_prefix("f1_overlap_top1_top") {
                if let Ok(i) = i.parse::<usize>() {
                    k = k.max(i);
                }
            } else if let Some(t) = name.strip_prefix("atype_") {
                types.push(t.to_string());
            }
        }
        Self::new(k, types)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((1..=self.k).map(|i| format!("alpha_b_top{i}")));
        names.extend((1..=self.k).map(|i| format!("alpha_e_top{i}")));
        names.extend((2..=self.k).map(|i| format!("f1_overlap_top1_top{i}")));
        names.extend(["idf_min", "idf_max", "idf_mean", "idf_skew"].map(String::from));
        names.push("noanswer_likelihood".into());
        names.extend(self.answer_types.iter().map(|t| format!("atype_{t}")));
        names.extend(["qeg_min", "qeg_max", "qeg_mean", "qeg_skew"].map(String::from));
        names
    }

    pub fn featurize(&self, record: &PredictionRecord, idf: &IdfTable) -> Result<FeatureVector> {
        let mut fv = FeatureVector::new();
        let cand = |i: usize| record.candidates.get(i - 1);

        for i in 1..=self.k {
            fv.insert(format!("alpha_b_top{i}"), cand(i).map(|c| c.begin_likelihood));
        }
        for i in 1..=self.k {
            fv.insert(format!("alpha_e_top{i}"), cand(i).map(|c| c.end_likelihood));
        }
        let top = record.top();
        for i in 2..=self.k {
            fv.insert(
                format!("f1_overlap_top1_top{i}"),
                cand(i).map(|c| span_overlap_f1(top, c)),
            );
        }

        let idfs: Vec<f64> = record
            .query_tokens
            .iter()
            .map(|t| idf_token(t))
            .filter(|t| !t.is_empty())
            .map(|t| idf.get(&t))
            .collect();
        insert_stats(&mut fv, "idf", &idfs)?;

        fv.insert(
            "noanswer_likelihood",
            Some(record.cls_begin_likelihood + record.cls_end_likelihood),
        );
        for t in &self.answer_types {
            let v = record.answer_type_likelihoods.as_ref().and_then(|m| m.get(t)).copied();
            fv.insert(format!("atype_{t}"), v);
        }

        let norms = record.query_embedding_gradnorms.as_deref().unwrap_or(&[]);
        insert_stats(&mut fv, "qeg", norms)?;
        Ok(fv)
    }
}

fn insert_stats(fv: &mut FeatureVector, prefix: &str, values: &[f64]) -> Result<()> {
    let stats = if values.is_empty() { None } else { Some(stats4(values)?) };
    fv.insert(format!("{prefix}_min"), stats.map(|s| s.min));
    fv.insert(format!("{prefix}_max"), stats.map(|s| s.max));
    fv.insert(format!("{prefix}_mean"), stats.map(|s| s.mean));
    fv.insert(format!("{prefix}_skew"), stats.map(|s| s.skew));
    Ok(())
}

/// Featurizes a single record with the answer types that record carries.
pub fn featurize(record: &PredictionRecord, idf: &IdfTable, k: usize) -> Result<FeatureVector> {
    FeatureSchema::for_records(std::slice::from_ref(record), k)?.featurize(record, idf)
}

/// Featurizes a dataset under one shared schema.
pub fn featurize_records(records: &[PredictionRecord], idf: &IdfTable, k: usize) -> Result<FeatureTable> {
    let schema = FeatureSchema::for_records(records, k)?;
    let mut table = FeatureTable::new(schema.names());
    for r in records {
        let fv = schema.featurize(r, idf)?;
        table.push(r.example_id.clone(), fv.iter().map(|(_, v)| v).collect())?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub example_id: String,
    pub values: Vec<Option<f64>>,
}

/// Row-major feature matrix with a shared column registry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>) -> Self {
        FeatureTable {
            names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, example_id: String, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Feature(format!(
                "row `{example_id}` has {} values for {} columns",
                values.len(),
                self.names.len()
            )));
        }
        self.rows.push(FeatureRow { example_id, values });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[j]).collect())
    }

    pub fn vector(&self, row: usize) -> FeatureVector {
        let mut fv = FeatureVector::new();
        for (name, v) in self.names.iter().zip(&self.rows[row].values) {
            fv.insert(name.clone(), *v);
        }
        fv
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::Feature(format!("unknown feature `{}`", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            names: names.iter().map(|n| n.as_ref().to_string()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    example_id: r.example_id.clone(),
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                })
                .collect(),
        })
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header = std::iter::once("example_id").chain(self.names.iter().map(String::as_str));
        w.write_record(header).map_err(csv_err)?;
        for row in &self.rows {
            let mut fields = Vec::with_capacity(row.values.len() + 1);
            fields.push(row.example_id.clone());
            fields.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("example_id") {
            return Err(Error::Parse {
                line: 1,
                message: "first CSV column must be `example_id`".into(),
            });
        }
        let mut table = FeatureTable::new(header.iter().skip(1).map(String::from).collect());
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let values = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        return Ok(None);
                    }
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(Some(v)),
                        _ => Err(Error::Parse {
                            line,
                            message: format!("`{cell}` is not a finite number"),
                        }),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(id, values).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn read_csv_file(path: &Path) -> Result<FeatureTable> {
        Self::read_csv(File::open(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

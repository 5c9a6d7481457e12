//! Prediction dump schema.
//!
//! A dump is newline-delimited JSON, one [`PredictionRecord`] per line, as
//! written by the span extractor. Plain and gzip-compressed streams are both
//! accepted. Optional keys (`answer_type_likelihoods`,
//! `query_embedding_gradnorms`, `gold_spans`) are either present with a value
//! or omitted entirely; an explicit `null` is rejected.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// One candidate answer span with its begin/end likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub begin_token: usize,
    pub end_token: usize,
    pub begin_likelihood: f64,
    pub end_likelihood: f64,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub is_null: bool,
}

impl CandidateSpan {
    pub fn span(begin_token: usize, end_token: usize, begin: f64, end: f64, text: &str) -> Self {
        CandidateSpan {
            begin_token,
            end_token,
            begin_likelihood: begin,
            end_likelihood: end,
            text: text.to_string(),
            is_null: false,
        }
    }

    /// The "no answer" candidate, anchored at the CLS position.
    pub fn null(begin: f64, end: f64) -> Self {
        CandidateSpan {
            begin_token: 0,
            end_token: 0,
            begin_likelihood: begin,
            end_likelihood: end,
            text: String::new(),
            is_null: true,
        }
    }

    pub fn combined_likelihood(&self) -> f64 {
        self.begin_likelihood + self.end_likelihood
    }

    /// Number of tokens covered by the span (0 for the null span).
    pub fn len(&self) -> usize {
        if self.is_null {
            0
        } else {
            self.end_token - self.begin_token + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical candidate order: descending combined likelihood; ties go to the
/// smaller begin token, then the smaller end token, with the null span last.
pub fn candidate_order(a: &CandidateSpan, b: &CandidateSpan) -> Ordering {
    b.combined_likelihood()
        .total_cmp(&a.combined_likelihood())
        .then_with(|| a.is_null.cmp(&b.is_null))
        .then_with(|| a.begin_token.cmp(&b.begin_token))
        .then_with(|| a.end_token.cmp(&b.end_token))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// SQuAD 2.0 style: normalized text equality.
    FuzzyText,
    /// Natural Questions style: exact token offset equality.
    OffsetExact,
}

/// A gold answer span as inclusive token offsets, encoded `[begin, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan(pub usize, pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub query_tokens: Vec<String>,
    pub candidates: Vec<CandidateSpan>,
    pub cls_begin_likelihood: f64,
    pub cls_end_likelihood: f64,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub answer_type_likelihoods: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub query_embedding_gradnorms: Option<Vec<f64>>,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub gold_spans: Option<Vec<GoldSpan>>,
    pub dataset_mode: DatasetMode,
}

// A key that is present must carry a value: `null` fails here instead of
// silently becoming `None`.
fn present<'de, D, T>(deserializer: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(deserializer).map(Some)
}

impl PredictionRecord {
    /// The max-scoring candidate. Validated records always have one.
    pub fn top(&self) -> &CandidateSpan {
        &self.candidates[0]
    }

    /// Whether the question has a gold answer in the passage.
    pub fn is_answerable(&self) -> bool {
        match self.dataset_mode {
            DatasetMode::FuzzyText => !self.gold_answers.is_empty(),
            DatasetMode::OffsetExact => self.gold_spans.as_ref().is_some_and(|s| !s.is_empty()),
        }
    }

    /// Checks every record invariant. `line` is only used for error context.
    pub fn validate(&self, line: usize) -> Result<()> {
        let fail = |field: &str, message: String| Error::Validation {
            line,
            example_id: self.example_id.clone(),
            field: field.to_string(),
            message,
        };

        if self.example_id.is_empty() {
            return Err(fail("example_id", "must be nonempty".into()));
        }
        if self.candidates.is_empty() {
            return Err(fail("candidates", "at least one candidate is required".into()));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            let field = format!("candidates[{i}]");
            if !is_probability(c.begin_likelihood) {
                return Err(fail(
                    &field,
                    format!("begin_likelihood {} not in [0,1]", c.begin_likelihood),
                ));
            }
            if !is_probability(c.end_likelihood) {
                return Err(fail(
                    &field,
                    format!("end_likelihood {} not in [0,1]", c.end_likelihood),
                ));
            }
            if c.is_null {
                if !c.text.is_empty() {
                    return Err(fail(&field, "null span must have empty text".into()));
                }
            } else if c.begin_token > c.end_token {
                return Err(fail(
                    &field,
                    format!("begin_token {} > end_token {}", c.begin_token, c.end_token),
                ));
            }
        }
        for (i, pair) in self.candidates.windows(2).enumerate() {
            if candidate_order(&pair[0], &pair[1]) == Ordering::Greater {
                return Err(fail(
                    "candidates",
                    format!("candidate {} is out of order relative to candidate {}", i + 1, i),
                ));
            }
        }
        if !is_probability(self.cls_begin_likelihood) {
            return Err(fail("cls_begin_likelihood", "not in [0,1]".into()));
        }
        if !is_probability(self.cls_end_likelihood) {
            return Err(fail("cls_end_likelihood", "not in [0,1]".into()));
        }
        if let Some(types) = &self.answer_type_likelihoods {
            if let Some((name, v)) = types.iter().find(|(_, v)| !is_probability(**v)) {
                return Err(fail("answer_type_likelihoods", format!("`{name}` = {v} not in [0,1]")));
            }
        }
        if let Some(norms) = &self.query_embedding_gradnorms {
            if norms.len() != self.query_tokens.len() {
                return Err(fail(
                    "query_embedding_gradnorms",
                    format!("{} values for {} query tokens", norms.len(), self.query_tokens.len()),
                ));
            }
            if let Some(v) = norms.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(fail(
                    "query_embedding_gradnorms",
                    format!("{v} is not a nonnegative real"),
                ));
            }
        }
        if let Some(spans) = &self.gold_spans {
            if let Some(s) = spans.iter().find(|s| s.0 > s.1) {
                return Err(fail("gold_spans", format!("begin {} > end {}", s.0, s.1)));
            }
        }
        if self.dataset_mode == DatasetMode::OffsetExact && self.gold_spans.is_none() && !self.gold_answers.is_empty() {
            return Err(fail(
                "gold_spans",
                "offset_exact records with gold answers must carry gold_spans".into(),
            ));
        }
        Ok(())
    }
}

fn is_probability(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Parses a JSONL prediction dump (plain or gzip) and validates every record.
///
/// Blank lines are skipped. Errors carry the 1-based line number.
pub fn parse_prediction_records<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut buffered = BufReader::new(reader);
    let gzip = buffered.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if gzip {
        parse_lines(BufReader::new(MultiGzDecoder::new(buffered)))
    } else {
        parse_lines(buffered)
    }
}

fn parse_lines<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate(line_no)?;
        if !seen.insert(record.example_id.clone()) {
            return Err(Error::Validation {
                line: line_no,
                example_id: record.example_id,
                field: "example_id".into(),
                message: "duplicate example_id".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_prediction_file(path: &Path) -> Result<Vec<PredictionRecord>> {
    parse_prediction_records(File::open(path)?)
}

pub fn write_prediction_records<W: Write>(mut writer: W, records: &[PredictionRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub answerable: usize,
    pub unanswerable: usize,
    pub with_gradnorms: usize,
    pub with_answer_types: usize,
}

pub fn validate_dataset(records: &[PredictionRecord]) -> DatasetSummary {
    let mut summary = DatasetSummary {
        total: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.is_answerable() {
            summary.answerable += 1;
        } else {
            summary.unanswerable += 1;
        }
        if r.query_embedding_gradnorms.is_some() {
            summary.with_gradnorms += 1;
        }
        if r.answer_type_likelihoods.is_some() {
            summary.with_answer_types += 1;
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = r#"{"example_id":"q1","query_tokens":["who","wrote","the","book"],"candidates":[{"begin_token":3,"end_token":4,"begin_likelihood":0.6,"end_likelihood":0.5,"text":"Jane Doe","is_null":false},{"begin_token":3,"end_token":3,"begin_likelihood":0.6,"end_likelihood":0.2,"text":"Jane","is_null":false},{"begin_token":0,"end_token":0,"begin_likelihood":0.2,"end_likelihood":0.2,"text":"","is_null":true},{"begin_token":7,"end_token":9,"begin_likelihood":0.1,"end_likelihood":0.1,"text":"a long span","is_null":false},{"begin_token":8,"end_token":9,"begin_likelihood":0.05,"end_likelihood":0.1,"text":"long span","is_null":false}],"cls_begin_likelihood":0.2,"cls_end_likelihood":0.2,"query_embedding_gradnorms":[0.1,0.4,0.05,0.9],"gold_answers":["Jane Doe"],"dataset_mode":"fuzzy_text"}"#;

    fn parse(s: &str) -> Result<Vec<PredictionRecord>> {
        parse_prediction_records(s.as_bytes())
    }

    #[test]
    fn well_formed_line_parses() {
        let records = parse(FIVE).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].candidates.len(), 5);
        assert_eq!(records[0].query_tokens.len(), 4);
        assert!(records[0].answer_type_likelihoods.is_none());
    }

    #[test]
    fn gradnorm_length_mismatch_is_rejected() {
        let bad = FIVE.replace("[0.1,0.4,0.05,0.9]", "[0.1,0.4,0.05]");
        match parse(&bad) {
            Err(Error::Validation {
                field,
                example_id,
                line,
                ..
            }) => {
                assert_eq!(field, "query_embedding_gradnorms");
                assert_eq!(example_id, "q1");
                assert_eq!(line, 1);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = format!("{FIVE}\n{{not json");
        match parse(&input) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let input = format!("{FIVE}\n{FIVE}\n");
        match parse(&input) {
            Err(Error::Validation { field, line, .. }) => {
                assert_eq!(field, "example_id");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn null_literal_for_optional_field_is_rejected() {
        let bad = FIVE.replace("\"dataset_mode\"", "\"gold_spans\":null,\"dataset_mode\"");
        assert!(matches!(parse(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn out_of_order_candidates_are_rejected() {
        let bad = FIVE.replace(
            r#""begin_likelihood":0.6,"end_likelihood":0.2"#,
            r#""begin_likelihood":0.9,"end_likelihood":0.9"#,
        );
        assert!(matches!(parse(&bad), Err(Error::Validation { ref field, .. }) if field == "candidates"));
    }

    #[test]
    fn null_span_with_text_is_rejected() {
        let bad = FIVE.replace(r#""text":"","is_null":true"#, r#""text":"x","is_null":true"#);
        assert!(matches!(parse(&bad), Err(Error::Validation { .. })));
    }

    #[test]
    fn likelihood_out_of_range_is_rejected() {
        let bad = FIVE.replace(r#""cls_begin_likelihood":0.2"#, r#""cls_begin_likelihood":1.2"#);
        assert!(matches!(parse(&bad), Err(Error::Validation { ref field, .. }) if field == "cls_begin_likelihood"));
    }

    #[test]
    fn offset_mode_requires_spans_when_answerable() {
        let bad = FIVE.replace("fuzzy_text", "offset_exact");
        assert!(matches!(parse(&bad), Err(Error::Validation { ref field, .. }) if field == "gold_spans"));
        let ok = bad.replace("\"dataset_mode\"", "\"gold_spans\":[[3,4]],\"dataset_mode\"");
        let records = parse(&ok).unwrap();
        assert_eq!(records[0].gold_spans, Some(vec![GoldSpan(3, 4)]));
        assert!(records[0].is_answerable());
    }

    #[test]
    fn tie_break_orders_begin_then_end_then_null() {
        let a = CandidateSpan::span(2, 5, 0.25, 0.25, "a");
        let b = CandidateSpan::span(2, 6, 0.25, 0.25, "b");
        let c = CandidateSpan::span(3, 3, 0.3, 0.2, "c");
        let n = CandidateSpan::null(0.25, 0.25);
        let mut spans = vec![n.clone(), c.clone(), b.clone(), a.clone()];
        spans.sort_by(candidate_order);
        assert_eq!(spans, vec![a, b, c, n]);
    }

    #[test]
    fn gzip_input_is_accepted() {
        use flate2::write::GzEncoder;
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(FIVE.as_bytes()).unwrap();
        let bytes = enc.finish().unwrap();
        let records = parse_prediction_records(bytes.as_slice()).unwrap();
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn summary_counts() {
        let mut a = parse(FIVE).unwrap().remove(0);
        let mut b = a.clone();
        b.example_id = "q2".into();
        b.gold_answers.clear();
        b.query_embedding_gradnorms = None;
        let s = validate_dataset(&[a.clone(), b.clone()]);
        assert_eq!(
            s,
            DatasetSummary {
                total: 2,
                answerable: 1,
                unanswerable: 1,
                with_gradnorms: 1,
                with_answer_types: 0
            }
        );
        a.answer_type_likelihoods = Some(BTreeMap::from([("short".to_string(), 0.5)]));
        assert_eq!(validate_dataset(&[a, b]).with_answer_types, 1);
    }

    #[test]
    fn serialization_omits_absent_optionals() {
        let records = parse(FIVE).unwrap();
        let mut out = Vec::new();
        write_prediction_records(&mut out, &records).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(!text.contains("null,"));
        assert!(!text.contains("gold_spans"));
        assert_eq!(parse(&text).unwrap(), records);
    }
}

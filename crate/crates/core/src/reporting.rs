//! Report rendering: feature influence tables and query-token gradient
//! highlighting (HTML and ANSI terminal).

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guards the min-max normalization of constant gradient vectors.
pub const INTENSITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub feature: String,
    pub influence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub rows: Vec<InfluenceRow>,
}

/// Sorts features by descending influence (ties by name) and keeps the
/// first `top_n` when given.
pub fn render_influence_table(influence: &IndexMap<String, f64>, top_n: Option<usize>) -> InfluenceTable {
    let mut rows: Vec<InfluenceRow> = influence
        .iter()
        .map(|(f, v)| InfluenceRow {
            feature: f.clone(),
            influence: *v,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.influence
            .total_cmp(&a.influence)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    if let Some(n) = top_n {
        rows.truncate(n);
    }
    InfluenceTable { rows }
}

impl InfluenceTable {
    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.feature.len())
            .max()
            .unwrap_or(0)
            .max("feature".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<name_w$}  {:>9}", "feature", "influence");
        for r in &self.rows {
            let _ = writeln!(out, "{:<name_w$}  {:>9.2}", r.feature, r.influence);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize")
    }
}

/// Per-token highlight intensity in [0, 1): `(g - min) / (max - min + eps)`.
pub fn highlight_intensities(gradnorms: &[f64]) -> Vec<f64> {
    let min = gradnorms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = gradnorms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    gradnorms
        .iter()
        .map(|g| (g - min) / (max - min + INTENSITY_EPS))
        .collect()
}

fn check_lengths(tokens: &[String], gradnorms: &[f64]) -> Result<()> {
    if tokens.len() != gradnorms.len() {
        return Err(Error::Render(format!(
            "{} query tokens but {} gradient norms",
            tokens.len(),
            gradnorms.len()
        )));
    }
    if let Some(g) = gradnorms.iter().find(|g| !g.is_finite()) {
        return Err(Error::Render(format!("gradient norm {g} is not finite")));
    }
    Ok(())
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// What the explain view shows for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HighlightInput<'a> {
    pub query_tokens: &'a [String],
    pub gradnorms: &'a [f64],
    pub confidence_score: f64,
    pub base_score: f64,
    /// The base model's top answer; `None` for the null span.
    pub prediction: Option<&'a str>,
}

/// HTML fragment with the base prediction, both scores, and the query
/// tokens shaded by their gradient norm.
pub fn render_qeg_highlight(input: &HighlightInput<'_>) -> Result<String> {
    check_lengths(input.query_tokens, input.gradnorms)?;
    let prediction = input
        .prediction
        .map(escape_html)
        .unwrap_or_else(|| "&lt;no answer&gt;".into());
    let mut html = String::new();
    html.push_str("<div class=\"qeg\">\n");
    let _ = writeln!(html, "<div><b>Base RC Prediction:</b> {prediction}</div>");
    let _ = writeln!(html, "<div><b>Base RC Score:</b> {:.2}</div>", input.base_score);
    let _ = writeln!(
        html,
        "<div><b>Confidence Score:</b> {:.2}</div>",
        input.confidence_score
    );
    html.push_str("<div><b>Query Embedding Gradient Highlighting:</b></div>\n");
    html.push_str("<div class=\"qeg-tokens\">");
    for (i, (tok, w)) in input
        .query_tokens
        .iter()
        .zip(highlight_intensities(input.gradnorms))
        .enumerate()
    {
        if i > 0 {
            html.push(' ');
        }
        let _ = write!(
            html,
            "<span class=\"qeg-tok\" style=\"background-color: rgba(220, 38, 38, {w:.3})\" title=\"{:.6}\">{}</span>",
            input.gradnorms[i],
            escape_html(tok)
        );
    }
    html.push_str("</div>\n</div>\n");
    Ok(html)
}

/// Wraps fragments into a standalone HTML page with inline CSS.
pub fn render_html_page(title: &str, fragments: &[String]) -> String {
    let mut page = String::new();
    page.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(page, "<title>{}</title>", escape_html(title));
    page.push_str(
        "<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         .qeg { border: 1px solid #999; padding: 0.8em; margin-bottom: 1em; max-width: 48em; }\n\
         .qeg div { margin: 0.2em 0; }\n\
         .qeg-tok { padding: 0.1em 0.25em; border-radius: 3px; }\n\
         </style>\n</head>\n<body>\n",
    );
    for f in fragments {
        page.push_str(f);
    }
    page.push_str("</body>\n</html>\n");
    page
}

// white to saturated red in the xterm 256-color cube
const ANSI_RAMP: [u8; 6] = [231, 224, 217, 210, 203, 196];

/// Terminal variant: each query token on a background from a white-to-red
/// ramp.
pub fn render_qeg_ansi(input: &HighlightInput<'_>) -> Result<String> {
    check_lengths(input.query_tokens, input.gradnorms)?;
    let mut out = String::new();
    let _ = writeln!(out, "Base RC Prediction: {}", input.prediction.unwrap_or("<no answer>"));
    let _ = writeln!(out, "Base RC Score: {:.2}", input.base_score);
    let _ = writeln!(out, "Confidence Score: {:.2}", input.confidence_score);
    out.push_str("Query Embedding Gradient Highlighting:\n  ");
    for (i, (tok, w)) in input
        .query_tokens
        .iter()
        .zip(highlight_intensities(input.gradnorms))
        .enumerate()
    {
        if i > 0 {
            out.push(' ');
        }
        let level = (w * (ANSI_RAMP.len() - 1) as f64).round() as usize;
        let _ = write!(out, "\x1b[48;5;{};38;5;16m{}\x1b[0m", ANSI_RAMP[level], tok);
    }
    out.push('\n');
    Ok(out)
}

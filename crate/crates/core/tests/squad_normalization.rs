use ansconf::labeling::{normalize_text, token_f1};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    pred: String,
    golds: Vec<String>,
    normalized_pred: String,
    normalized_golds: Vec<String>,
    exact: u8,
    f1: f64,
}

fn cases() -> Vec<Case> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/squad_cases.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fixture_has_fifty_cases() {
    assert_eq!(cases().len(), 50);
}

#[test]
fn normalization_matches_reference_outputs() {
    for c in cases() {
        assert_eq!(normalize_text(&c.pred), c.normalized_pred, "pred {:?}", c.pred);
        let golds: Vec<String> = c.golds.iter().map(|g| normalize_text(g)).collect();
        assert_eq!(golds, c.normalized_golds, "golds {:?}", c.golds);
    }
}

#[test]
fn exact_and_f1_match_reference_outputs() {
    for c in cases() {
        let pred = normalize_text(&c.pred);
        let golds: Vec<&str> = if c.golds.is_empty() {
            vec![""]
        } else {
            c.golds.iter().map(String::as_str).collect()
        };
        let exact = golds.iter().any(|g| normalize_text(g) == pred);
        assert_eq!(exact, c.exact == 1, "exact for {:?} vs {:?}", c.pred, c.golds);
        assert_eq!(
            token_f1(&c.pred, &c.golds),
            c.f1,
            "f1 for {:?} vs {:?}",
            c.pred,
            c.golds
        );
    }
}

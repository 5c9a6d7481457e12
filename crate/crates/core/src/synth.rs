//! Seeded synthetic prediction dumps.
//!
//! Each record gets a latent correctness logit
//!
//! ```text
//! z = 3 (b1 + e1 - 1.1) - 3 (mean gradnorm - 1.1) + N(0, 0.7^2)
//! ```
//!
//! where `b1`/`e1` are the top span's begin/end likelihoods. The top answer
//! is then made correct with probability `sigmoid(z)` by choosing the gold
//! answers accordingly. A confidence model that sees the gradient norms can
//! therefore beat the raw top-1 likelihood.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_model::{candidate_order, CandidateSpan, DatasetMode, GoldSpan, PredictionRecord};
use crate::gbm::sigmoid;

const QUERY_VOCAB: &[&str] = &[
    "what",
    "who",
    "when",
    "where",
    "which",
    "how",
    "is",
    "the",
    "of",
    "a",
    "in",
    "did",
    "does",
    "was",
    "many",
    "year",
    "first",
    "name",
    "city",
    "river",
    "king",
    "war",
    "album",
    "team",
    "species",
    "element",
    "capital",
    "founded",
    "largest",
    "population",
    "wrote",
    "invented",
    "discovered",
    "treaty",
    "empire",
    "government",
    "structure",
    "ratio",
    "water",
    "cement",
    "minimum",
    "required",
    "concrete",
    "workable",
    "aztec",
    "inca",
    "common",
    "monarchy",
    "season",
    "episode",
    "director",
    "novel",
    "protein",
    "orbit",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_records: usize,
    pub seed: u64,
    pub k: usize,
    pub unanswerable_rate: f64,
    /// Fraction of records that carry gradient norms.
    pub gradnorm_rate: f64,
    pub with_answer_types: bool,
    /// Fraction of records labeled by exact token offsets.
    pub offset_exact_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_records: 2000,
            seed: 13,
            k: 5,
            unanswerable_rate: 0.2,
            gradnorm_rate: 1.0,
            with_answer_types: false,
            offset_exact_rate: 0.0,
        }
    }
}

fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite positive sd").sample(rng)
}

fn passage_text(begin: usize, end: usize) -> String {
    (begin..=end).map(|p| format!("w{p}")).collect::<Vec<_>>().join(" ")
}

fn span(begin: usize, len: usize, b: f64, e: f64) -> CandidateSpan {
    let end = begin + len - 1;
    CandidateSpan::span(begin, end, b, e, &passage_text(begin, end))
}

pub fn generate_records(cfg: &SynthConfig) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_records).map(|i| generate_one(&mut rng, cfg, i)).collect()
}

fn generate_one(rng: &mut ChaCha8Rng, cfg: &SynthConfig, i: usize) -> PredictionRecord {
    let n_query = rng.random_range(3..=10);
    let query_tokens: Vec<String> = (0..n_query)
        .map(|_| QUERY_VOCAB[rng.random_range(0..QUERY_VOCAB.len())].to_string())
        .collect();

    let scale = normal(rng, 0.0, 0.5).exp();
    let gradnorms: Vec<f64> = (0..n_query).map(|_| scale * normal(rng, 0.0, 0.3).exp()).collect();
    let qeg_mean = gradnorms.iter().sum::<f64>() / n_query as f64;
    let has_gradnorms = rng.random_bool(cfg.gradnorm_rate);

    let b1: f64 = rng.random_range(0.15..0.95);
    let e1: f64 = rng.random_range(0.15..0.95);
    let z = 3.0 * (b1 + e1 - 1.1) - 3.0 * (qeg_mean - 1.1) + normal(rng, 0.0, 0.7);
    let correct = rng.random_bool(sigmoid(z));
    let answerable = !rng.random_bool(cfg.unanswerable_rate);
    let offset_mode = rng.random_bool(cfg.offset_exact_rate);

    // the model abstains when it is right about an unanswerable question,
    // and sometimes wrongly on answerable ones
    let top_is_null = if answerable {
        !correct && rng.random_bool(0.15)
    } else {
        correct
    };

    let top_begin = rng.random_range(10..200);
    let top_len = rng.random_range(1..=4);
    let top = if top_is_null {
        CandidateSpan::null(b1, e1)
    } else {
        span(top_begin, top_len, b1, e1)
    };

    let (cls_b, cls_e) = if top_is_null {
        (b1, e1)
    } else {
        (b1 * rng.random_range(0.05..0.9), e1 * rng.random_range(0.05..0.9))
    };
    let mut candidates = vec![top.clone()];
    let (mut b, mut e) = (b1, e1);
    while candidates.len() < cfg.k {
        b *= rng.random_range(0.3..0.9);
        e *= rng.random_range(0.3..0.9);
        let begin = (top_begin as i64 + rng.random_range(-3..=3)).max(0) as usize;
        candidates.push(span(begin, rng.random_range(1..=5), b, e));
    }
    if !top_is_null && candidates.len() > 2 && rng.random_bool(0.5) {
        let last = candidates.len() - 1;
        candidates[last] = CandidateSpan::null(cls_b.min(b), cls_e.min(e));
    }
    candidates[1..].sort_by(candidate_order);

    let (gold_answers, gold_spans) = if !answerable {
        (vec![], offset_mode.then(Vec::new))
    } else {
        let (gb, gl) = if correct {
            (top_begin, top_len)
        } else {
            // a different span, possibly overlapping the prediction
            let shift = rng.random_range(1..=6);
            (top_begin + shift, rng.random_range(1..=4))
        };
        let text = passage_text(gb, gb + gl - 1);
        let mut golds = vec![text.clone()];
        if rng.random_bool(0.3) {
            golds.push(format!("The {text}."));
        }
        (golds, offset_mode.then(|| vec![GoldSpan(gb, gb + gl - 1)]))
    };

    let answer_type_likelihoods = cfg.with_answer_types.then(|| {
        let short: f64 = if top_is_null {
            rng.random_range(0.0..0.3)
        } else {
            rng.random_range(0.3..0.9)
        };
        let long = (1.0 - short) * rng.random_range(0.2..0.8);
        BTreeMap::from([
            ("short".to_string(), short),
            ("long".to_string(), long),
            ("null".to_string(), (1.0 - short - long).max(0.0)),
        ])
    });

    PredictionRecord {
        example_id: format!("synth-{i:05}"),
        query_tokens,
        candidates,
        cls_begin_likelihood: cls_b,
        cls_end_likelihood: cls_e,
        answer_type_likelihoods,
        query_embedding_gradnorms: has_gradnorms.then_some(gradnorms),
        gold_answers,
        gold_spans,
        dataset_mode: if offset_mode {
            DatasetMode::OffsetExact
        } else {
            DatasetMode::FuzzyText
        },
    }
}

/// Documents over the same vocabulary as the synthetic queries, with a
/// skewed word distribution so IDF varies across tokens.
pub fn generate_corpus(n_docs: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| {
            let len = rng.random_range(5..40);
            (0..len)
                .map(|_| {
                    // squaring a uniform draw favors the front of the vocabulary
                    let u: f64 = rng.random();
                    QUERY_VOCAB[((u * u) * QUERY_VOCAB.len() as f64) as usize]
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

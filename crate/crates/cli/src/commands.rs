use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ansconf::data_model::read_prediction_file;
use ansconf::evaluation::{evaluate, extended_real, paired_randomization_test, write_roc_csv, MetricKind};
use ansconf::featurizer::{build_idf_table, featurize_records, FeatureSchema, FeatureTable, IdfTable};
use ansconf::gbm::{GbmModel, GbmParams};
use ansconf::labeling::{derive_labels, read_labels_file, split_indices, write_labels, LabeledExample};
use ansconf::reporting::{render_html_page, render_qeg_ansi, render_qeg_highlight, HighlightInput};
use ansconf::selection::{
    grid_search_capped, select_features_with_noise, GridSpec, SelectionReport, TrainingSet, TRAIN_FRACTION,
};

use crate::{Command, Format, Style};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] ansconf::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildIdf { corpus, out } => build_idf(&corpus, &out),
        Command::Label { predictions, out } => label(&predictions, &out),
        Command::Featurize {
            predictions,
            idf,
            k,
            out,
        } => featurize(&predictions, &idf, k, &out),
        Command::Select {
            features,
            labels,
            seed,
            params,
            style,
            noise_columns,
            out,
        } => select(&features, &labels, seed, params.as_deref(), style, noise_columns, &out),
        Command::Tune {
            features,
            labels,
            grid,
            seed,
            selection,
            max_grid_points,
            out,
        } => tune(
            &features,
            &labels,
            &grid,
            seed,
            selection.as_deref(),
            max_grid_points,
            &out,
        ),
        Command::Train {
            features,
            labels,
            params,
            seed,
            selection,
            split,
            out,
        } => train(&features, &labels, &params, seed, selection.as_deref(), split, &out),
        Command::Eval {
            model,
            features,
            labels,
            baseline_score_column,
            rounds,
            seed,
            split,
            roc_csv,
            report,
        } => eval(EvalArgs {
            model: &model,
            features: &features,
            labels: &labels,
            baseline: &baseline_score_column,
            rounds,
            seed,
            split,
            roc_csv: roc_csv.as_deref(),
            report: &report,
        }),
        Command::Explain {
            model,
            predictions,
            example_id,
            idf,
            format,
            out,
        } => explain(
            &model,
            &predictions,
            &example_id,
            idf.as_deref(),
            format,
            out.as_deref(),
        ),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_training_set(features: &Path, labels: &Path, selection: Option<&Path>) -> Result<TrainingSet> {
    let table = FeatureTable::read_csv_file(features)?;
    let labels = read_labels_file(labels)?;
    let data = TrainingSet::join(table, &labels)?;
    match selection {
        None => Ok(data),
        Some(path) => {
            let report = SelectionReport::read(path)?;
            if report.selected.is_empty() {
                return Err(CliError::Invalid(format!(
                    "{}: no features were selected",
                    path.display()
                )));
            }
            Ok(data.select_columns(&report.selected)?)
        }
    }
}

fn build_idf(corpus: &Path, out: &Path) -> Result<()> {
    let lines: Vec<String> = BufReader::new(File::open(corpus)?)
        .lines()
        .collect::<std::io::Result<_>>()?;
    let table = build_idf_table(lines.iter().filter(|l| !l.trim().is_empty()))?;
    table.write(out)?;
    println!(
        "{} documents, {} distinct tokens",
        table.document_count,
        table.idf.len()
    );
    Ok(())
}

fn label(predictions: &Path, out: &Path) -> Result<()> {
    let records = read_prediction_file(predictions)?;
    let labels = derive_labels(&records)?;
    let mut w = BufWriter::new(File::create(out)?);
    write_labels(&mut w, &labels)?;
    w.flush()?;
    let positives = labels.iter().filter(|l| l.label).count();
    println!("{} examples, {positives} labeled correct", labels.len());
    Ok(())
}

fn featurize(predictions: &Path, idf: &Path, k: usize, out: &Path) -> Result<()> {
    let records = read_prediction_file(predictions)?;
    let idf = IdfTable::read(idf)?;
    let table = featurize_records(&records, &idf, k)?;
    let mut w = BufWriter::new(File::create(out)?);
    table.write_csv(&mut w)?;
    w.flush()?;
    println!("{} rows, {} features", table.len(), table.names.len());
    Ok(())
}

fn read_params(path: &Path) -> Result<GbmParams> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum ParamsFile {
        Wrapped { params: GbmParams },
        Bare(GbmParams),
    }
    let text = std::fs::read_to_string(path)?;
    let parsed: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}: not a GBM parameter file: {e}", path.display())))?;
    Ok(match parsed {
        ParamsFile::Wrapped { params } | ParamsFile::Bare(params) => params,
    })
}

fn select(
    features: &Path,
    labels: &Path,
    seed: u64,
    params: Option<&Path>,
    style: Style,
    noise_columns: usize,
    out: &Path,
) -> Result<()> {
    let data = load_training_set(features, labels, None)?;
    let base = match params {
        Some(p) => read_params(p)?,
        None => match style {
            Style::Sq2 => GbmParams::sq2(),
            Style::Nq => GbmParams::nq(),
        },
    };
    let report = select_features_with_noise(&data, &base, seed, noise_columns)?;
    write_json(out, &report)?;
    println!(
        "selected {} of {} features",
        report.selected.len(),
        data.features.names.len()
    );
    Ok(())
}

fn tune(
    features: &Path,
    labels: &Path,
    grid: &Path,
    seed: u64,
    selection: Option<&Path>,
    cap: usize,
    out: &Path,
) -> Result<()> {
    let data = load_training_set(features, labels, selection)?;
    let grid = GridSpec::read(grid)?;
    let result = grid_search_capped(&data, &grid, seed, cap)?;
    write_json(out, &result)?;
    println!(
        "best holdout AUC {:.4} over {} grid points",
        result.holdout_auc,
        result.leaderboard.len()
    );
    Ok(())
}

fn train(
    features: &Path,
    labels: &Path,
    params: &Path,
    seed: u64,
    selection: Option<&Path>,
    split: bool,
    out: &Path,
) -> Result<()> {
    let mut data = load_training_set(features, labels, selection)?;
    if split {
        data = data.holdout_split(seed)?.0;
    }
    let params = read_params(params)?.with_seed(seed);
    let model = data.train(&params)?;
    model.write(out)?;
    println!("trained {} trees on {} rows", model.trees.len(), data.len());
    Ok(())
}

struct EvalArgs<'a> {
    model: &'a Path,
    features: &'a Path,
    labels: &'a Path,
    baseline: &'a str,
    rounds: usize,
    seed: u64,
    split: bool,
    roc_csv: Option<&'a Path>,
    report: &'a Path,
}

#[derive(Debug, Serialize)]
struct SystemMetrics {
    auc_full: f64,
    auc_answerable: Option<f64>,
    best_f1: f64,
    #[serde(with = "extended_real")]
    best_threshold: f64,
}

#[derive(Debug, Serialize)]
struct BaselineMetrics {
    score_column: String,
    #[serde(flatten)]
    metrics: SystemMetrics,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    seed: u64,
    n_examples: usize,
    n_answerable: usize,
    #[serde(flatten)]
    model: SystemMetrics,
    baseline: BaselineMetrics,
    auc_delta: f64,
    f1_delta: f64,
    /// Randomization-test p-value for the AUC difference.
    p_value: f64,
    p_value_f1: f64,
    rounds: usize,
}

fn baseline_scores(table: &FeatureTable, expr: &str) -> Result<Vec<f64>> {
    let cols: Vec<usize> = expr
        .split('+')
        .map(str::trim)
        .map(|name| {
            table
                .column_index(name)
                .ok_or_else(|| CliError::Usage(format!("baseline column `{name}` is not in the feature table")))
        })
        .collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            cols.iter()
                .map(|&j| {
                    row.values[j].ok_or_else(|| {
                        CliError::Invalid(format!(
                            "example `{}`: baseline column `{}` is missing",
                            row.example_id, table.names[j]
                        ))
                    })
                })
                .sum()
        })
        .collect()
}

fn eval(args: EvalArgs<'_>) -> Result<()> {
    let model = GbmModel::read(args.model)?;
    let mut table = FeatureTable::read_csv_file(args.features)?;
    if let Some(name) = model.feature_names.iter().find(|n| table.column_index(n).is_none()) {
        return Err(CliError::Invalid(format!(
            "model feature `{name}` is not in the feature table"
        )));
    }
    let all_labels = read_labels_file(args.labels)?;
    let by_id: HashMap<&str, &LabeledExample> = all_labels.iter().map(|l| (l.example_id.as_str(), l)).collect();
    if args.split {
        let (_, holdout) = split_indices(table.len(), TRAIN_FRACTION, args.seed)?;
        table = table.subset(&holdout);
    }
    let labeled: Vec<LabeledExample> = table
        .rows
        .iter()
        .map(|r| {
            by_id.get(r.example_id.as_str()).map(|l| (*l).clone()).ok_or_else(|| {
                CliError::Core(ansconf::Error::Labeling {
                    example_id: r.example_id.clone(),
                    message: "feature row has no label".into(),
                })
            })
        })
        .collect::<Result<_>>()?;

    let scores = model.predict_table(&table);
    let base = baseline_scores(&table, args.baseline)?;
    let ours = evaluate(&scores, &labeled)?;
    let theirs = evaluate(&base, &labeled)?;
    let auc_test = paired_randomization_test(MetricKind::Auc, &scores, &base, &labeled, args.rounds, args.seed)?;
    let f1_test = paired_randomization_test(MetricKind::F1, &scores, &base, &labeled, args.rounds, args.seed)?;

    if let Some(path) = args.roc_csv {
        let mut w = BufWriter::new(File::create(path)?);
        write_roc_csv(&mut w, &ours.roc_points)?;
        w.flush()?;
    }
    let output = EvalOutput {
        seed: args.seed,
        n_examples: ours.n_examples,
        n_answerable: ours.n_answerable,
        model: SystemMetrics {
            auc_full: ours.auc_full,
            auc_answerable: ours.auc_answerable,
            best_f1: ours.best_f1,
            best_threshold: ours.best_threshold,
        },
        baseline: BaselineMetrics {
            score_column: args.baseline.to_string(),
            metrics: SystemMetrics {
                auc_full: theirs.auc_full,
                auc_answerable: theirs.auc_answerable,
                best_f1: theirs.best_f1,
                best_threshold: theirs.best_threshold,
            },
        },
        auc_delta: auc_test.observed_delta,
        f1_delta: f1_test.observed_delta,
        p_value: auc_test.p_value,
        p_value_f1: f1_test.p_value,
        rounds: args.rounds,
    };
    write_json(args.report, &output)?;
    println!(
        "AUC {:.4} vs baseline {:.4} (p = {:.4}); best F1 {:.4} vs {:.4} (p = {:.4})",
        ours.auc_full, theirs.auc_full, auc_test.p_value, ours.best_f1, theirs.best_f1, f1_test.p_value
    );
    Ok(())
}

fn explain(
    model: &Path,
    predictions: &Path,
    example_id: &str,
    idf: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let model = GbmModel::read(model)?;
    let records = read_prediction_file(predictions)?;
    let record = records
        .iter()
        .find(|r| r.example_id == example_id)
        .ok_or_else(|| CliError::Usage(format!("example `{example_id}` is not in {}", predictions.display())))?;
    let gradnorms = record.query_embedding_gradnorms.as_deref().ok_or_else(|| {
        CliError::Invalid(format!(
            "example `{example_id}`: no query_embedding_gradnorms to highlight"
        ))
    })?;

    let schema = FeatureSchema::from_feature_names(&model.feature_names)?;
    let fv = match idf {
        Some(p) => schema.featurize(record, &IdfTable::read(p)?)?,
        None => {
            if model.feature_names.iter().any(|n| n.starts_with("idf_")) {
                eprintln!("warning: no --idf given; IDF features are treated as missing");
            }
            let placeholder = build_idf_table([""])?;
            let mut fv = schema.featurize(record, &placeholder)?;
            for stat in ["idf_min", "idf_max", "idf_mean", "idf_skew"] {
                fv.insert(stat, None);
            }
            fv
        }
    };
    let top = record.top();
    let input = HighlightInput {
        query_tokens: &record.query_tokens,
        gradnorms,
        confidence_score: model.predict_score(&fv),
        base_score: top.combined_likelihood(),
        prediction: (!top.is_null).then_some(top.text.as_str()),
    };
    let rendered = match format {
        Format::Html => render_html_page(example_id, &[render_qeg_highlight(&input)?]),
        Format::Ansi => render_qeg_ansi(&input)?,
    };
    match out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

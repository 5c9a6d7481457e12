//! Regenerates the bundled CLI fixtures and default grid files.
//!
//! Usage: `cargo run -p ansconf --example gen_fixture [-- <fixture-dir> <config-dir>]`

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ansconf::data_model::write_prediction_records;
use ansconf::gbm::GbmParams;
use ansconf::selection::GridSpec;
use ansconf::synth::{generate_corpus, generate_records, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let fixtures = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("crates/cli/tests/fixtures"));
    let configs = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("configs"));
    std::fs::create_dir_all(&fixtures)?;
    std::fs::create_dir_all(&configs)?;

    let cfg = SynthConfig {
        n_records: 200,
        seed: 13,
        gradnorm_rate: 0.9,
        with_answer_types: true,
        offset_exact_rate: 0.2,
        ..Default::default()
    };
    write_prediction_records(
        BufWriter::new(File::create(fixtures.join("synthetic_200.jsonl"))?),
        &generate_records(&cfg),
    )?;

    let mut corpus = BufWriter::new(File::create(fixtures.join("corpus.txt"))?);
    for doc in generate_corpus(300, 13) {
        writeln!(corpus, "{doc}")?;
    }
    corpus.flush()?;

    // small leaves so 150 training rows can still be split
    let params = GbmParams {
        learning_rate: 0.1,
        n_trees: 60,
        interaction_depth: 3,
        min_obs_in_node: 10,
        bag_fraction: 0.8,
        seed: 13,
    };
    std::fs::write(
        fixtures.join("params.json"),
        serde_json::to_string_pretty(&params)? + "\n",
    )?;

    let small = GridSpec {
        learning_rate: vec![0.05, 0.1],
        n_trees: vec![30, 60],
        interaction_depth: vec![2, 3],
        min_obs_in_node: vec![10],
        bag_fraction: vec![0.8, 1.0],
        objective: Default::default(),
    };
    std::fs::write(fixtures.join("grid.toml"), toml::to_string(&small)?)?;
    std::fs::write(
        configs.join("grid_sq2.toml"),
        toml::to_string(&GridSpec::sq2_default())?,
    )?;
    std::fs::write(configs.join("grid_nq.toml"), toml::to_string(&GridSpec::nq_default())?)?;
    Ok(())
}

use std::path::PathBuf;

use fedanomaly::data::{prepare_with_norm, RateTable};
use fedanomaly::model::load_checkpoint;
use fedanomaly::protocol::infer_in_sim;

use crate::commands::{ensure_out, load_records};
use crate::config::load_config;
use crate::errors::{io_err, CliError};
use crate::manifest::write_manifest;
use crate::{InferArgs, Split};

pub fn run(args: InferArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(v) = args.infer_noise {
        cfg.session.infer_noise = v;
    }
    let strategy = args.strategy.unwrap_or_default();
    let out = &args.common.out;
    ensure_out(out)?;

    let model_path: PathBuf = args.model.unwrap_or_else(|| out.join("checkpoint.bin"));
    let (model, norm) = load_checkpoint(&model_path)?;

    // Rows must be normalized exactly as the checkpoint's training run
    // normalized them, not refit on whatever this file contains.
    let (transactions, accounts) = load_records(&args.data)?;
    let data =
        prepare_with_norm(&transactions, &accounts, &RateTable::builtin(), &cfg.pipeline, &norm)?;

    let rows: Vec<usize> = match args.split {
        Split::All => (0..data.n_rows()).collect(),
        Split::Test => data.test_rows.clone(),
    };
    let outcome = infer_in_sim(&data, &model, &rows, strategy, &cfg.session.to_session())?;

    let scores_path = out.join("scores.csv");
    let mut w = csv::Writer::from_path(&scores_path)
        .map_err(|e| CliError::Io { path: scores_path.clone(), source: std::io::Error::other(e) })?;
    w.write_record(["tx-id", "score", "label"])
        .map_err(|e| CliError::Io { path: scores_path.clone(), source: std::io::Error::other(e) })?;
    for (&row, score) in rows.iter().zip(&outcome.scores) {
        let label = if data.labels[row] { "anomalous" } else { "normal" };
        w.write_record([data.tx_ids[row].to_string(), format!("{score}"), label.to_string()])
            .map_err(|e| CliError::Io { path: scores_path.clone(), source: std::io::Error::other(e) })?;
    }
    w.flush().map_err(io_err(&scores_path))?;

    let outputs = ["scores.csv".to_string()];
    write_manifest(out, "infer", &cfg, &outputs, None)?;
    println!(
        "scored {} rows with {} strategy, {} oblivious transfers",
        rows.len(),
        match strategy {
            fedanomaly::protocol::InferStrategy::Direct => "direct",
            fedanomaly::protocol::InferStrategy::Round => "round",
        },
        outcome.ot_invocations
    );
    Ok(())
}

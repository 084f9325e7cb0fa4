use serde::Serialize;

use fedanomaly::model::{save_checkpoint, train_centralized_traced, TrainData};

use crate::commands::{ensure_out, load_prepared, test_auprc, write_json};
use crate::config::load_config;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::TrainCentralizedArgs;

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct Metrics {
    auprc: Option<f64>,
    epoch_losses: Vec<f64>,
    train_rows: usize,
    test_rows: usize,
}

pub fn run(args: TrainCentralizedArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    args.train.apply(&mut cfg.train);
    let out = &args.common.out;
    ensure_out(out)?;

    let data = load_prepared(&args.data, &cfg)?;
    let (model, losses) = train_centralized_traced(&TrainData::training_slice(&data), &cfg.train)?;
    let auprc = test_auprc(&model, &data)?;

    save_checkpoint(&out.join("checkpoint.bin"), &model, &data.norm)?;
    let metrics = Metrics {
        auprc,
        epoch_losses: losses,
        train_rows: data.train_rows.len(),
        test_rows: data.test_rows.len(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;

    let outputs = ["checkpoint.bin".to_string(), "metrics.json".to_string()];
    write_manifest(out, "train-centralized", &cfg, &outputs, None)?;
    match metrics.auprc {
        Some(v) => println!("trained {} epochs, test AUPRC {v:.4}", cfg.train.epochs),
        None => println!("trained {} epochs, test split has no anomalies", cfg.train.epochs),
    }
    Ok(())
}

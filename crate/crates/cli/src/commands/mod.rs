pub mod attack;
pub mod bench;
pub mod gen_data;
pub mod infer;
pub mod train_centralized;
pub mod train_federated;

use std::path::Path;

use serde::Serialize;

use fedanomaly::data::{
    read_accounts_csv, read_transactions_csv, AccountRecord, PreparedDataset, RateTable,
    TransactionRecord,
};
use fedanomaly::model::{auprc, score_with_true_flags, Mlp, ModelError};

use crate::config::RunConfig;
use crate::errors::{io_err, CliError};

pub fn ensure_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn load_records(
    dir: &Path,
) -> Result<(Vec<TransactionRecord>, Vec<AccountRecord>), CliError> {
    let transactions = read_transactions_csv(&dir.join("transactions.csv"))?;
    let accounts = read_accounts_csv(&dir.join("accounts.csv"))?;
    Ok((transactions, accounts))
}

pub fn load_prepared(dir: &Path, cfg: &RunConfig) -> Result<PreparedDataset, CliError> {
    let (transactions, accounts) = load_records(dir)?;
    Ok(fedanomaly::data::prepare(
        &transactions,
        &accounts,
        &RateTable::builtin(),
        &cfg.pipeline,
    )?)
}

/// AUPRC on the held-out split, scored with the true flag bits. `None` when
/// the split happens to contain no anomalies, which is a property of the
/// data rather than a failure of the run.
pub fn test_auprc(model: &Mlp, data: &PreparedDataset) -> Result<Option<f64>, CliError> {
    let scores = score_with_true_flags(model, &data.features, &data.flag_bits, &data.test_rows);
    let labels: Vec<bool> = data.test_rows.iter().map(|&r| data.labels[r]).collect();
    match auprc(&scores, &labels) {
        Ok(v) => Ok(Some(v)),
        Err(ModelError::NoPositives) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_vec_pretty(value).expect("report serializes");
    body.push(b'\n');
    std::fs::write(path, body).map_err(io_err(path))
}

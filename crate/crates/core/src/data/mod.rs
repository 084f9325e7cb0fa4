//! Transaction data: synthetic generation, features, and preparation.
//!
//! The real payment corpus this pipeline is built for is not public, so
//! [`generate_synthetic`] manufactures one with the same load-bearing
//! properties: interbank transfers in several currencies, a configurable
//! anomaly rate, account flag statuses held by banks, and a tunable
//! correlation between a receiver being flagged and its traffic being
//! anomalous. Velocity features, normalization and upsampling turn the raw
//! tables into the fixed 17-feature rows the model trains on.

mod features;
mod normalize;
mod pipeline;
mod rates;
mod records;
mod synth;
mod upsample;

pub use features::{extract_features, FeatureVector, FEATURE_COUNT, LAST_N_WINDOW};
pub use normalize::{apply_normalization, fit_normalization, NormStats};
pub use pipeline::{prepare, prepare_with_norm, PipelineConfig, PreparedDataset};
pub use rates::RateTable;
pub use records::{
    read_accounts_csv, read_transactions_csv, write_accounts_csv, write_transactions_csv,
    AccountRecord, Label, TransactionRecord,
};
pub use synth::{generate_synthetic, DatasetConfig, SyntheticData};
pub use upsample::upsample;

/// Data-layer errors.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unknown currency {0:?}")]
    UnknownCurrency(String),
    #[error("rates file: {0}")]
    Rates(String),
    #[error("no anomalous rows to upsample")]
    NoAnomalies,
    #[error("config: {0}")]
    Config(String),
    #[error("transaction references unknown account {0:?}")]
    UnknownAccount(String),
}

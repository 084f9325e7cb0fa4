//! End-to-end preparation of raw tables into model-ready rows.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureVector};
use super::normalize::{apply_normalization, fit_normalization, NormStats};
use super::rates::RateTable;
use super::records::{AccountRecord, TransactionRecord};
use super::upsample::upsample;
use super::DataError;
use crate::rng::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct PipelineConfig {
    /// Target anomalous:normal ratio for the training split.
    pub upsample_ratio: f64,
    /// Fraction of rows (the most recent ones) held out for evaluation.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { upsample_ratio: 0.1, test_fraction: 0.2, seed: 42 }
    }
}

/// Model-ready rows in time order, plus the account-level tables the
/// protocol parties are built from.
///
/// `train_rows` is an upsampled multiset of indices into the row arrays;
/// `test_rows` is the held-out time suffix, never upsampled. Normalization
/// statistics come from the training prefix only; the suffix would leak
/// future information into training otherwise.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub tx_ids: Vec<u64>,
    /// Normalized velocity features per row.
    pub features: Vec<FeatureVector>,
    /// True for anomalous rows.
    pub labels: Vec<bool>,
    /// Receiver's flag bit per row: the input the protocol keeps private.
    pub flag_bits: Vec<bool>,
    pub receiver_bank: Vec<u32>,
    pub receiver_account: Vec<u32>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub norm: NormStats,
    /// Sorted distinct bank ids; `receiver_bank` and `account_bank` index
    /// into this.
    pub banks: Vec<String>,
    /// Flag bit per interned account (position in the account table).
    pub account_flags: Vec<bool>,
    /// Owning bank per interned account.
    pub account_bank: Vec<u32>,
}

impl PreparedDataset {
    pub fn n_banks(&self) -> u32 {
        self.banks.len() as u32
    }

    pub fn n_rows(&self) -> usize {
        self.features.len()
    }
}

/// Runs the full preparation pipeline over the raw tables.
pub fn prepare(
    transactions: &[TransactionRecord],
    accounts: &[AccountRecord],
    rates: &RateTable,
    cfg: &PipelineConfig,
) -> Result<PreparedDataset, DataError> {
    prepare_inner(transactions, accounts, rates, cfg, None)
}

/// [`prepare`] with externally fitted normalization statistics, for scoring
/// rows against a model trained elsewhere. Everything else, including the
/// time split, is produced identically; `norm` echoes the applied stats.
pub fn prepare_with_norm(
    transactions: &[TransactionRecord],
    accounts: &[AccountRecord],
    rates: &RateTable,
    cfg: &PipelineConfig,
    norm: &NormStats,
) -> Result<PreparedDataset, DataError> {
    prepare_inner(transactions, accounts, rates, cfg, Some(norm))
}

fn prepare_inner(
    transactions: &[TransactionRecord],
    accounts: &[AccountRecord],
    rates: &RateTable,
    cfg: &PipelineConfig,
    external_norm: Option<&NormStats>,
) -> Result<PreparedDataset, DataError> {
    if transactions.is_empty() {
        return Err(DataError::Config("no transactions".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(DataError::Config("test-fraction must be in [0, 1)".into()));
    }
    if !(cfg.upsample_ratio.is_finite() && cfg.upsample_ratio >= 0.0) {
        return Err(DataError::Config("upsample-ratio must be non-negative".into()));
    }

    let mut banks: Vec<String> = accounts.iter().map(|a| a.bank_id.clone()).collect();
    banks.sort();
    banks.dedup();
    let bank_index: HashMap<&str, u32> =
        banks.iter().enumerate().map(|(i, b)| (b.as_str(), i as u32)).collect();
    let account_index: HashMap<&str, u32> = accounts
        .iter()
        .enumerate()
        .map(|(i, a)| (a.account_id.as_str(), i as u32))
        .collect();
    let account_flags: Vec<bool> = accounts.iter().map(|a| a.flag_bit()).collect();
    let account_bank: Vec<u32> =
        accounts.iter().map(|a| bank_index[a.bank_id.as_str()]).collect();

    let raw_features = extract_features(transactions, rates)?;

    // Work in time order from here on so the train/test split is a clean
    // past/future cut.
    let mut order: Vec<usize> = (0..transactions.len()).collect();
    order.sort_by_key(|&i| (transactions[i].timestamp, transactions[i].tx_id));

    let mut tx_ids = Vec::with_capacity(order.len());
    let mut features = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    let mut flag_bits = Vec::with_capacity(order.len());
    let mut receiver_bank = Vec::with_capacity(order.len());
    let mut receiver_account = Vec::with_capacity(order.len());
    for &i in &order {
        let tx = &transactions[i];
        let acct = *account_index
            .get(tx.receiver_account.as_str())
            .ok_or_else(|| DataError::UnknownAccount(tx.receiver_account.clone()))?;
        tx_ids.push(tx.tx_id);
        features.push(raw_features[i]);
        labels.push(tx.label.is_anomalous());
        flag_bits.push(account_flags[acct as usize]);
        receiver_bank.push(account_bank[acct as usize]);
        receiver_account.push(acct);
    }

    let n = features.len();
    let n_test = ((n as f64) * cfg.test_fraction).round() as usize;
    let n_train = (n - n_test).max(1);
    let norm = match external_norm {
        Some(stats) => stats.clone(),
        None => fit_normalization(&features[..n_train]),
    };
    apply_normalization(&mut features, &norm);

    let mut rng = labeled_rng(cfg.seed, "upsample");
    let train_rows = upsample(&labels[..n_train], cfg.upsample_ratio, &mut rng)?;
    let test_rows: Vec<usize> = (n_train..n).collect();

    Ok(PreparedDataset {
        tx_ids,
        features,
        labels,
        flag_bits,
        receiver_bank,
        receiver_account,
        train_rows,
        test_rows,
        norm,
        banks,
        account_flags,
        account_bank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, DatasetConfig};

    fn dataset() -> (Vec<TransactionRecord>, Vec<AccountRecord>) {
        let data = generate_synthetic(&DatasetConfig {
            n_transactions: 1_000,
            n_accounts: 120,
            n_banks: 4,
            anomaly_rate: 0.05,
            flag_correlation: 1.0,
            seed: 31,
        })
        .unwrap();
        (data.transactions, data.accounts)
    }

    #[test]
    fn split_is_a_time_cut_and_upsampling_stays_in_train() {
        let (tx, accounts) = dataset();
        let cfg = PipelineConfig { upsample_ratio: 1.0, test_fraction: 0.2, seed: 1 };
        let d = prepare(&tx, &accounts, &RateTable::builtin(), &cfg).unwrap();
        assert_eq!(d.n_rows(), 1_000);
        assert_eq!(d.test_rows, (800..1_000).collect::<Vec<_>>());
        assert!(d.train_rows.iter().all(|&r| r < 800));
        let train_anoms = d.train_rows.iter().filter(|&&r| d.labels[r]).count();
        let train_base_normals = (0..800).filter(|&r| !d.labels[r]).count();
        assert_eq!(train_anoms, train_base_normals, "1:1 ratio balances the classes");
    }

    #[test]
    fn normalization_ignores_the_test_suffix() {
        let (tx, accounts) = dataset();
        let rates = RateTable::builtin();
        let cfg = PipelineConfig { upsample_ratio: 0.0, test_fraction: 0.3, seed: 2 };
        let d = prepare(&tx, &accounts, &rates, &cfg).unwrap();
        let raw = extract_features(&tx, &rates).unwrap();
        // Generator output is already time-sorted, so row k is transaction k.
        let expected = crate::data::normalize::fit_normalization(&raw[..700]);
        assert_eq!(d.norm, expected);
    }

    #[test]
    fn per_row_tables_agree_with_the_account_table() {
        let (tx, accounts) = dataset();
        let d = prepare(&tx, &accounts, &RateTable::builtin(), &PipelineConfig::default())
            .unwrap();
        assert_eq!(d.n_banks(), 4);
        for (row, &acct) in d.receiver_account.iter().enumerate() {
            let rec = &accounts[acct as usize];
            assert_eq!(d.flag_bits[row], rec.flag != 0);
            assert_eq!(d.banks[d.receiver_bank[row] as usize], rec.bank_id);
            // Correlation 1.0: flag bit equals the label on every row.
            assert_eq!(d.flag_bits[row], d.labels[row]);
        }
    }

    #[test]
    fn unknown_receiver_account_is_rejected() {
        let (tx, mut accounts) = dataset();
        accounts.retain(|a| a.account_id != tx[0].receiver_account);
        let err = prepare(&tx, &accounts, &RateTable::builtin(), &PipelineConfig::default());
        assert!(matches!(err, Err(DataError::UnknownAccount(_))));
    }

    #[test]
    fn preparation_is_deterministic_in_the_seed() {
        let (tx, accounts) = dataset();
        let cfg = PipelineConfig { upsample_ratio: 0.5, test_fraction: 0.2, seed: 11 };
        let a = prepare(&tx, &accounts, &RateTable::builtin(), &cfg).unwrap();
        let b = prepare(&tx, &accounts, &RateTable::builtin(), &cfg).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        assert_eq!(a.features, b.features);
    }
}

//! Synthetic interbank transaction generator.
//!
//! Field families (labels, routing, amounts, timestamps, account identities)
//! are drawn from independently derived RNG streams, so changing how one
//! family is sampled never perturbs the others for a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use super::rates::RateTable;
use super::records::{AccountRecord, Label, TransactionRecord};
use super::DataError;
use crate::rng::labeled_rng;

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct DatasetConfig {
    pub n_transactions: usize,
    pub n_accounts: usize,
    pub n_banks: u32,
    /// Fraction of transactions labeled anomalous. The realized count is
    /// exact: `round(n_transactions * anomaly_rate)`.
    pub anomaly_rate: f64,
    /// Probability that an anomalous transaction is routed to a flagged
    /// receiver. Non-anomalous traffic never touches flagged accounts, so
    /// this is the knob tying the bank-held flag to the label.
    pub flag_correlation: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_transactions: 100_000,
            n_accounts: 4_000,
            n_banks: 8,
            anomaly_rate: 0.001,
            flag_correlation: 0.9,
            seed: 42,
        }
    }
}

/// A generated dataset: the hub-visible transaction log plus the bank-held
/// account table.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub transactions: Vec<TransactionRecord>,
    pub accounts: Vec<AccountRecord>,
}

/// Dataset epoch: 2026-01-01 00:00:00 UTC. Timestamps span the 90 days after.
const T0: i64 = 1_767_225_600;
const SPAN_SECS: i64 = 90 * 86_400;
/// Log-scale spread of amounts around the per-currency median.
const SIGMA_LOG: f64 = 0.8;
/// Log-scale shift applied to anomalous amounts.
const ANOMALY_LOG_SHIFT: f64 = 1.1;
/// Median amount in USD terms, before the anomaly shift.
const MEDIAN_USD: f64 = 500.0;

const FIRST_NAMES: [&str; 16] = [
    "Ava", "Ben", "Cara", "Dev", "Elif", "Finn", "Gia", "Hugo", "Ines", "Jon", "Kira", "Liam",
    "Mona", "Nils", "Omar", "Pia",
];
const LAST_NAMES: [&str; 16] = [
    "Adler", "Brook", "Costa", "Diaz", "Engel", "Fontes", "Gruber", "Haas", "Iver", "Jansen",
    "Klein", "Lund", "Meyer", "Novak", "Okafor", "Patel",
];
const STREETS: [&str; 12] = [
    "Oak", "Elm", "Maple", "Cedar", "Birch", "Pine", "Ash", "Willow", "Juniper", "Linden",
    "Rowan", "Hazel",
];

fn validate(cfg: &DatasetConfig) -> Result<(), DataError> {
    if cfg.n_transactions == 0 {
        return Err(DataError::Config("n-transactions must be positive".into()));
    }
    if cfg.n_banks == 0 || cfg.n_banks as usize > cfg.n_accounts {
        return Err(DataError::Config("n-banks must be in 1..=n-accounts".into()));
    }
    if cfg.n_accounts < 3 {
        return Err(DataError::Config("need at least 3 accounts".into()));
    }
    if !(0.0..=1.0).contains(&cfg.anomaly_rate) {
        return Err(DataError::Config("anomaly-rate must be in [0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&cfg.flag_correlation) {
        return Err(DataError::Config("flag-correlation must be in [0, 1]".into()));
    }
    Ok(())
}

/// Generates a transaction log and account table per `cfg`. Deterministic in
/// `cfg.seed`: identical configs produce byte-identical CSV output.
pub fn generate_synthetic(cfg: &DatasetConfig) -> Result<SyntheticData, DataError> {
    validate(cfg)?;
    let rates = RateTable::builtin();
    let currencies: Vec<&str> = rates.currencies().collect();

    // Account table. A small pool is flagged; everyone else is status 0.
    let mut acct_rng = labeled_rng(cfg.seed, "accounts");
    let n = cfg.n_accounts;
    let flagged_count = (((n as f64) * 0.04).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut acct_rng);
    let mut flags = vec![0u8; n];
    for &i in order.iter().take(flagged_count) {
        flags[i] = acct_rng.gen_range(1..=12);
    }
    let mut accounts = Vec::with_capacity(n);
    for (i, &flag) in flags.iter().enumerate() {
        let first = FIRST_NAMES[acct_rng.gen_range(0..FIRST_NAMES.len())];
        let last = LAST_NAMES[acct_rng.gen_range(0..LAST_NAMES.len())];
        let street = STREETS[acct_rng.gen_range(0..STREETS.len())];
        accounts.push(AccountRecord {
            bank_id: format!("B{:02}", i as u32 % cfg.n_banks),
            account_id: format!("A{:06}", i + 1),
            name: format!("{first} {last}"),
            street: format!("{} {} St", acct_rng.gen_range(1..=999), street),
            zip: format!("{:05}", acct_rng.gen_range(0..100_000)),
            flag,
        });
    }
    let unflagged: Vec<usize> = (0..n).filter(|&i| flags[i] == 0).collect();
    let flagged: Vec<usize> = (0..n).filter(|&i| flags[i] != 0).collect();
    if unflagged.len() < 2 {
        return Err(DataError::Config("too few unflagged accounts to route traffic".into()));
    }

    // Label assignment: exactly round(n * rate) anomalous rows.
    let n_tx = cfg.n_transactions;
    let target = (n_tx as f64 * cfg.anomaly_rate).round() as usize;
    let mut label_rng = labeled_rng(cfg.seed, "labels");
    let mut tx_order: Vec<usize> = (0..n_tx).collect();
    tx_order.shuffle(&mut label_rng);
    let mut anomalous = vec![false; n_tx];
    for &i in tx_order.iter().take(target) {
        anomalous[i] = true;
    }

    // Routing: senders are always unflagged; anomalous receivers land on a
    // flagged account with probability flag_correlation, all other receivers
    // are unflagged. Self-payments are redrawn.
    let mut route_rng = labeled_rng(cfg.seed, "routing");
    let mut routes = Vec::with_capacity(n_tx);
    for &anom in &anomalous {
        let sender = unflagged[route_rng.gen_range(0..unflagged.len())];
        let receiver = if anom && route_rng.gen_bool(cfg.flag_correlation) {
            flagged[route_rng.gen_range(0..flagged.len())]
        } else {
            loop {
                let r = unflagged[route_rng.gen_range(0..unflagged.len())];
                if r != sender {
                    break r;
                }
            }
        };
        routes.push((sender, receiver));
    }

    // Amounts: log-normal with the same USD-equivalent median in every
    // currency; anomalous rows shift the log-median up.
    let mut amount_rng = labeled_rng(cfg.seed, "amounts");
    let mut amounts = Vec::with_capacity(n_tx);
    for &anom in &anomalous {
        let currency = currencies[amount_rng.gen_range(0..currencies.len())];
        let rate = rates.rate(currency).expect("builtin currency");
        let mut mu = (MEDIAN_USD / rate).ln();
        if anom {
            mu += ANOMALY_LOG_SHIFT;
        }
        let dist = LogNormal::new(mu, SIGMA_LOG).expect("valid log-normal");
        let amount = (dist.sample(&mut amount_rng) * 100.0).round() / 100.0;
        amounts.push((currency.to_string(), amount.max(0.01)));
    }

    let mut ts_rng = labeled_rng(cfg.seed, "timestamps");
    let timestamps: Vec<i64> =
        (0..n_tx).map(|_| T0 + ts_rng.gen_range(0..SPAN_SECS)).collect();

    let mut rows: Vec<TransactionRecord> = (0..n_tx)
        .map(|i| {
            let (s, r) = routes[i];
            let (currency, amount) = amounts[i].clone();
            TransactionRecord {
                tx_id: 0,
                sender_name: accounts[s].name.clone(),
                sender_account: accounts[s].account_id.clone(),
                sender_bank: accounts[s].bank_id.clone(),
                sender_street: accounts[s].street.clone(),
                sender_zip: accounts[s].zip.clone(),
                receiver_name: accounts[r].name.clone(),
                receiver_account: accounts[r].account_id.clone(),
                receiver_bank: accounts[r].bank_id.clone(),
                amount,
                currency,
                timestamp: timestamps[i],
                label: if anomalous[i] { Label::Anomalous } else { Label::Normal },
            }
        })
        .collect();
    rows.sort_by_key(|t| t.timestamp);
    for (i, row) in rows.iter_mut().enumerate() {
        row.tx_id = (i + 1) as u64;
    }

    Ok(SyntheticData { transactions: rows, accounts })
}

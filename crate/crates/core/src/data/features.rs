//! Velocity features over strictly-past transaction history.
//!
//! Every statistic for a transaction at time `t` is computed from
//! transactions with timestamp strictly less than `t`, so a row never sees
//! itself or a same-instant row. Feature order is a frozen contract shared
//! with trained checkpoints:
//!
//! ```text
//!  0      amount in USD
//!  1..=2  sender   28-day  avg, max
//!  3..=4  receiver 28-day  avg, max
//!  5..=6  pair     28-day  avg, max
//!  7..=9  sender   last-20 avg, min, max
//! 10..=12 receiver last-20 avg, min, max
//! 13..=15 pair     last-20 avg, min, max
//! 16      pair 7-day transaction count
//! ```
//!
//! Senders are tracked over their outgoing history, receivers over their
//! incoming history, pairs over the directed (sender, receiver) edge. Empty
//! histories contribute zeros.

use std::collections::HashMap;

use super::rates::RateTable;
use super::records::TransactionRecord;
use super::DataError;

/// Number of derived features per transaction.
pub const FEATURE_COUNT: usize = 17;
/// How many most-recent prior transactions the last-N statistics cover.
pub const LAST_N_WINDOW: usize = 20;

pub type FeatureVector = [f64; FEATURE_COUNT];

const DAY: i64 = 86_400;
const LONG_WINDOW: i64 = 28 * DAY;
const COUNT_WINDOW: i64 = 7 * DAY;

/// Entries are (timestamp, usd amount), kept sorted by timestamp.
type History = Vec<(i64, f64)>;

fn avg_max(hist: &History, ts: i64, window: i64) -> (f64, f64) {
    let end = hist.partition_point(|&(t, _)| t < ts);
    let start = hist.partition_point(|&(t, _)| t < ts - window);
    if start == end {
        return (0.0, 0.0);
    }
    let slice = &hist[start..end];
    let sum: f64 = slice.iter().map(|&(_, a)| a).sum();
    let max = slice.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    (sum / slice.len() as f64, max)
}

fn last_n(hist: &History, ts: i64) -> (f64, f64, f64) {
    let end = hist.partition_point(|&(t, _)| t < ts);
    let start = end.saturating_sub(LAST_N_WINDOW);
    if start == end {
        return (0.0, 0.0, 0.0);
    }
    let slice = &hist[start..end];
    let sum: f64 = slice.iter().map(|&(_, a)| a).sum();
    let min = slice.iter().map(|&(_, a)| a).fold(f64::INFINITY, f64::min);
    let max = slice.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    (sum / slice.len() as f64, min, max)
}

fn count_in(hist: &History, ts: i64, window: i64) -> usize {
    let end = hist.partition_point(|&(t, _)| t < ts);
    let start = hist.partition_point(|&(t, _)| t < ts - window);
    end - start
}

/// Computes the feature vector for every transaction, returned in input
/// order. The input does not need to be time-sorted.
pub fn extract_features(
    transactions: &[TransactionRecord],
    rates: &RateTable,
) -> Result<Vec<FeatureVector>, DataError> {
    let usd: Vec<f64> = transactions
        .iter()
        .map(|t| rates.usd(t.amount, &t.currency))
        .collect::<Result<_, _>>()?;

    fn intern<'a>(ids: &mut HashMap<&'a str, u32>, name: &'a str) -> u32 {
        let next = ids.len() as u32;
        *ids.entry(name).or_insert(next)
    }
    let mut ids: HashMap<&str, u32> = HashMap::new();

    let mut order: Vec<usize> = (0..transactions.len()).collect();
    order.sort_by_key(|&i| transactions[i].timestamp);

    let mut sender_hist: Vec<History> = Vec::new();
    let mut receiver_hist: Vec<History> = Vec::new();
    let mut pair_hist: HashMap<(u32, u32), History> = HashMap::new();
    let mut out = vec![[0.0; FEATURE_COUNT]; transactions.len()];

    for &i in &order {
        let tx = &transactions[i];
        let s = intern(&mut ids, &tx.sender_account) as usize;
        let r = intern(&mut ids, &tx.receiver_account) as usize;
        if sender_hist.len() <= s.max(r) {
            sender_hist.resize(s.max(r) + 1, Vec::new());
            receiver_hist.resize(s.max(r) + 1, Vec::new());
        }
        let pair = pair_hist.entry((s as u32, r as u32)).or_default();
        let ts = tx.timestamp;

        let f = &mut out[i];
        f[0] = usd[i];
        (f[1], f[2]) = avg_max(&sender_hist[s], ts, LONG_WINDOW);
        (f[3], f[4]) = avg_max(&receiver_hist[r], ts, LONG_WINDOW);
        (f[5], f[6]) = avg_max(pair, ts, LONG_WINDOW);
        (f[7], f[8], f[9]) = last_n(&sender_hist[s], ts);
        (f[10], f[11], f[12]) = last_n(&receiver_hist[r], ts);
        (f[13], f[14], f[15]) = last_n(pair, ts);
        f[16] = count_in(pair, ts, COUNT_WINDOW) as f64;

        sender_hist[s].push((ts, usd[i]));
        receiver_hist[r].push((ts, usd[i]));
        pair.push((ts, usd[i]));
    }
    Ok(out)
}

//! Session drivers: wire the party machines together and run them to
//! completion, over the in-memory simulator or over TCP.
//!
//! The machines themselves are transport-agnostic; a driver only moves
//! envelopes between outboxes and inboxes. Per-pair FIFO is the one
//! ordering guarantee either transport provides, and the only one any
//! machine relies on.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use crate::data::PreparedDataset;
use crate::model::{Mlp, TrainConfig};
use crate::ot::OtMode;
use crate::party::PartyId;
use crate::ring::{FixedVector, DEFAULT_FRACTION_BITS};
use crate::transport::{
    CommsCounters, CommsReport, DeliveryOrder, MsgType, SimNet, TcpEndpoint, DEFAULT_MAX_FRAME,
};

use super::aggregator::AggregatorMachine;
use super::bank::BankMachine;
use super::hub::{BatchSelectHub, CandidatePair, HubData, HubOptions, HubStats, HubTrainer, InferHub};
use super::noise::NoiseSpec;
use super::{InferStrategy, LeakageReport, Outbox, PartyMachine, ProtocolError};

/// Per-session knobs shared by every party. Training hyperparameters live
/// in [`TrainConfig`]; this covers identity, transports and the transfer
/// machinery.
#[derive(Debug, Clone, Copy)]
pub struct SessionConfig {
    /// Sixteen-byte session identity stamped on every envelope.
    pub session_id: [u8; 16],
    pub ot_mode: OtMode,
    /// Skip bank contact for training rows whose label already fixes the
    /// selected candidate.
    pub ot_reduction: bool,
    /// One key transfer per account up front, sealed pairs afterwards.
    pub key_cache: bool,
    /// Noise each bank adds to its inference share before replying.
    pub infer_noise: NoiseSpec,
    pub hub_seed: u64,
    pub aggregator_seed: u64,
    /// Bank `i` seeds its streams from `bank_seed_base + i`.
    pub bank_seed_base: u64,
    pub fraction_bits: u32,
    /// Delivery policy of the simulator (ignored over TCP).
    pub delivery: DeliveryOrder,
    pub max_frame: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            session_id: *b"fedanomaly-sess\0",
            ot_mode: OtMode::Ideal,
            ot_reduction: true,
            key_cache: true,
            infer_noise: NoiseSpec::None,
            hub_seed: 1000,
            aggregator_seed: 2000,
            bank_seed_base: 3000,
            fraction_bits: DEFAULT_FRACTION_BITS,
            delivery: DeliveryOrder::RoundRobin,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

impl SessionConfig {
    /// The hub-side knobs this session implies.
    pub fn hub_options(&self, n_banks: u32) -> HubOptions {
        HubOptions {
            session: self.session_id,
            ot_mode: self.ot_mode,
            ot_reduction: self.ot_reduction,
            key_cache: self.key_cache,
            fraction_bits: self.fraction_bits,
            n_banks,
            hub_seed: self.hub_seed,
        }
    }

    /// One bank machine per flag table, seeded and numbered in order.
    pub fn banks(&self, flags: Vec<BTreeMap<u32, bool>>) -> Vec<BankMachine> {
        flags
            .into_iter()
            .enumerate()
            .map(|(i, table)| {
                BankMachine::new(
                    self.session_id,
                    i as u32,
                    table,
                    self.infer_noise,
                    self.fraction_bits,
                    self.bank_seed_base + i as u64,
                )
            })
            .collect()
    }
}

/// Splits the dataset's account registry into one flag table per bank,
/// the view each bank holds privately during a session.
pub fn bank_flag_tables(data: &PreparedDataset) -> Vec<BTreeMap<u32, bool>> {
    let mut tables = vec![BTreeMap::new(); data.n_banks() as usize];
    for (account, (&bank, &flag)) in data.account_bank.iter().zip(&data.account_flags).enumerate() {
        tables[bank as usize].insert(account as u32, flag);
    }
    tables
}

/// Everything a finished training session yields.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub comms: CommsReport,
    pub leakage: LeakageReport,
    /// True oblivious transfers (sealed pairs under cached keys excluded).
    pub ot_invocations: u64,
    pub batches: u64,
    /// Message counts the hub received, by payload type name.
    pub hub_received: BTreeMap<String, u64>,
    pub skipped_rows: u64,
}

/// Everything a finished inference session yields.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    /// One score per queried row, in row order.
    pub scores: Vec<f64>,
    pub comms: CommsReport,
    pub leakage: LeakageReport,
    pub ot_invocations: u64,
}

fn flush(net: &mut SimNet, out: &mut Outbox) -> Result<(), ProtocolError> {
    for (to, msg) in out.drain() {
        net.send(msg.sender, to, &msg)?;
    }
    Ok(())
}

/// Runs every machine against the simulator until the network goes quiet.
fn pump(net: &mut SimNet, parties: &mut [&mut dyn PartyMachine]) -> Result<(), ProtocolError> {
    let mut out = Outbox::default();
    for p in parties.iter_mut() {
        p.start(&mut out)?;
        flush(net, &mut out)?;
    }
    while let Some((_, to, msg)) = net.deliver_next()? {
        let target = parties.iter_mut().find(|p| p.party() == to).ok_or(
            ProtocolError::UnexpectedMessage {
                party: to,
                got: msg.msg_type,
                state: "no such party in this session",
            },
        )?;
        target.handle(&msg, &mut out)?;
        flush(net, &mut out)?;
    }
    Ok(())
}

fn name_counts(by_byte: &BTreeMap<u8, u64>) -> BTreeMap<String, u64> {
    by_byte
        .iter()
        .map(|(&b, &n)| {
            let name = match MsgType::from_byte(b) {
                Some(t) => t.name().to_string(),
                None => format!("type-{b}"),
            };
            (name, n)
        })
        .collect()
}

fn bank_leakage(banks: &[BankMachine]) -> BTreeMap<u32, BTreeMap<u32, u64>> {
    banks
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.query_counts().is_empty())
        .map(|(i, b)| (i as u32, b.query_counts().clone()))
        .collect()
}

/// Trains over explicit row tables and per-bank flag tables in the
/// simulator. [`train_in_sim`] is the same thing fed from a prepared
/// dataset.
pub fn train_parties(
    data: HubData<'_>,
    flags: Vec<BTreeMap<u32, bool>>,
    cfg: &TrainConfig,
    session: &SessionConfig,
) -> Result<TrainOutcome, ProtocolError> {
    if flags.is_empty() {
        return Err(ProtocolError::Config("a session needs at least one bank".into()));
    }
    let n_banks = flags.len() as u32;
    let mut hub = HubTrainer::new(data, cfg.clone(), session.hub_options(n_banks))?;
    let mut agg = AggregatorMachine::new(session.session_id, cfg.noise, session.aggregator_seed);
    let mut banks = session.banks(flags);

    let mut net = SimNet::new(session.delivery, session.max_frame);
    {
        let mut parties: Vec<&mut dyn PartyMachine> = Vec::with_capacity(2 + banks.len());
        parties.push(&mut hub);
        parties.push(&mut agg);
        for b in &mut banks {
            parties.push(b);
        }
        pump(&mut net, &mut parties)?;
    }
    if !hub.finished() {
        return Err(ProtocolError::Stalled("training hub never reached shutdown".into()));
    }

    let comms = net.counters().report();
    let leakage = LeakageReport {
        bank_queries: bank_leakage(&banks),
        aggregator_banks: agg.bank_share_counts().clone(),
        skipped_rows: 0,
    };
    let (model, stats) = hub.into_parts();
    Ok(TrainOutcome {
        model,
        comms,
        leakage: LeakageReport { skipped_rows: stats.skipped_rows, ..leakage },
        ot_invocations: stats.ot_invocations,
        batches: stats.batches,
        hub_received: name_counts(&stats.received_by_type),
        skipped_rows: stats.skipped_rows,
    })
}

/// Federated training over the simulator, all parties on this thread.
pub fn train_in_sim(
    data: &PreparedDataset,
    cfg: &TrainConfig,
    session: &SessionConfig,
) -> Result<TrainOutcome, ProtocolError> {
    let hub_data = HubData {
        features: &data.features,
        labels: &data.labels,
        receiver_bank: &data.receiver_bank,
        receiver_account: &data.receiver_account,
        rows: &data.train_rows,
    };
    train_parties(hub_data, bank_flag_tables(data), cfg, session)
}

/// Scores explicit rows against per-bank flag tables in the simulator.
pub fn infer_parties(
    data: HubData<'_>,
    flags: Vec<BTreeMap<u32, bool>>,
    model: &Mlp,
    strategy: InferStrategy,
    session: &SessionConfig,
) -> Result<InferOutcome, ProtocolError> {
    if flags.is_empty() {
        return Err(ProtocolError::Config("a session needs at least one bank".into()));
    }
    let n_banks = flags.len() as u32;
    let mut hub = InferHub::new(data, model, strategy, session.hub_options(n_banks))?;
    let mut banks = session.banks(flags);

    let mut net = SimNet::new(session.delivery, session.max_frame);
    {
        let mut parties: Vec<&mut dyn PartyMachine> = Vec::with_capacity(1 + banks.len());
        parties.push(&mut hub);
        for b in &mut banks {
            parties.push(b);
        }
        pump(&mut net, &mut parties)?;
    }
    if !hub.finished() {
        return Err(ProtocolError::Stalled("inference hub never reached shutdown".into()));
    }

    let comms = net.counters().report();
    let leakage = LeakageReport {
        bank_queries: bank_leakage(&banks),
        aggregator_banks: BTreeMap::new(),
        skipped_rows: 0,
    };
    let (scores, ot_invocations) = hub.into_parts();
    Ok(InferOutcome { scores, comms, leakage, ot_invocations })
}

/// Scores `rows` of a prepared dataset with a trained model over the
/// simulator. The aggregator plays no part in inference.
pub fn infer_in_sim(
    data: &PreparedDataset,
    model: &Mlp,
    rows: &[usize],
    strategy: InferStrategy,
    session: &SessionConfig,
) -> Result<InferOutcome, ProtocolError> {
    let hub_data = HubData {
        features: &data.features,
        labels: &data.labels,
        receiver_bank: &data.receiver_bank,
        receiver_account: &data.receiver_account,
        rows,
    };
    infer_parties(hub_data, bank_flag_tables(data), model, strategy, session)
}

/// Runs one selection batch over injected candidate pairs: same banks,
/// aggregator and wire traffic as a training batch, but the "updates" are
/// caller-chosen vectors. Returns the reconstructed ring sum of the
/// selected candidates (noise included) and the hub's counters.
pub fn select_and_aggregate(
    pairs: Vec<CandidatePair>,
    flags: Vec<BTreeMap<u32, bool>>,
    noise: NoiseSpec,
    session: &SessionConfig,
) -> Result<(FixedVector, HubStats), ProtocolError> {
    if flags.is_empty() {
        return Err(ProtocolError::Config("a session needs at least one bank".into()));
    }
    let n_banks = flags.len() as u32;
    let mut hub = BatchSelectHub::new(pairs, session.hub_options(n_banks))?;
    let mut agg = AggregatorMachine::new(session.session_id, noise, session.aggregator_seed);
    let mut banks = session.banks(flags);

    let mut net = SimNet::new(session.delivery, session.max_frame);
    {
        let mut parties: Vec<&mut dyn PartyMachine> = Vec::with_capacity(2 + banks.len());
        parties.push(&mut hub);
        parties.push(&mut agg);
        for b in &mut banks {
            parties.push(b);
        }
        pump(&mut net, &mut parties)?;
    }
    if !hub.finished() {
        return Err(ProtocolError::Stalled("selection hub never reached shutdown".into()));
    }
    let (result, stats) = hub.into_parts();
    let result =
        result.ok_or_else(|| ProtocolError::Stalled("no aggregate ever arrived".into()))?;
    Ok((result, stats))
}

/// Runs one party of a session over a TCP mesh and returns the finished
/// machine with the counters for everything it sent.
///
/// Every party calls this with the same address book (wire tag to socket
/// address); start order does not matter within `establish_deadline`.
pub fn run_party_over_tcp<M: PartyMachine>(
    mut machine: M,
    addresses: &BTreeMap<u32, SocketAddr>,
    peers: &[PartyId],
    establish_deadline: Duration,
    recv_timeout: Duration,
) -> Result<(M, CommsCounters), ProtocolError> {
    let mut endpoint = TcpEndpoint::establish(machine.party(), addresses, peers, establish_deadline)?;
    let mut out = Outbox::default();
    machine.start(&mut out)?;
    for (to, msg) in out.drain() {
        endpoint.send(to, &msg)?;
    }
    while !machine.finished() {
        let (_, msg) = endpoint.recv(recv_timeout)?;
        machine.handle(&msg, &mut out)?;
        for (to, msg) in out.drain() {
            endpoint.send(to, &msg)?;
        }
    }
    let sent = endpoint.sent_counters().clone();
    endpoint.shutdown();
    Ok((machine, sent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, FEATURE_COUNT};
    use crate::model::{detector_input, train_centralized, TrainData};
    use crate::protocol::noise::NoiseSpec;
    use std::net::TcpListener;

    // Six rows across two banks; receivers of anomalous rows are flagged,
    // the rest never are. Feature values are arbitrary but fixed.
    struct Tiny {
        features: Vec<FeatureVector>,
        labels: Vec<bool>,
        flag_bits: Vec<bool>,
        receiver_bank: Vec<u32>,
        receiver_account: Vec<u32>,
        rows: Vec<usize>,
        flags: Vec<BTreeMap<u32, bool>>,
    }

    fn tiny() -> Tiny {
        let mut features = Vec::new();
        for i in 0..6 {
            let mut f = [0.0; FEATURE_COUNT];
            for (k, slot) in f.iter_mut().enumerate() {
                *slot = ((i * 31 + k * 7) % 13) as f64 / 13.0 - 0.4;
            }
            features.push(f);
        }
        let labels = vec![false, true, false, true, false, false];
        // Accounts 0..=2 live at bank 0, 3..=5 at bank 1.
        let receiver_account = vec![0u32, 1, 2, 3, 4, 5];
        let receiver_bank = vec![0u32, 0, 0, 1, 1, 1];
        let flag_bits = labels.clone();
        let mut flags = vec![BTreeMap::new(), BTreeMap::new()];
        for (acct, (&bank, &flag)) in receiver_bank.iter().zip(&flag_bits).enumerate() {
            flags[bank as usize].insert(acct as u32, flag);
        }
        Tiny {
            features,
            labels,
            flag_bits,
            receiver_bank,
            receiver_account,
            rows: (0..6).collect(),
            flags,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            lr0: 0.05,
            weight_decay: 5e-4,
            clip_norm: Some(100.0),
            noise: NoiseSpec::None,
            seed: 42,
            flag_blind: false,
        }
    }

    fn hub_data(t: &Tiny) -> HubData<'_> {
        HubData {
            features: &t.features,
            labels: &t.labels,
            receiver_bank: &t.receiver_bank,
            receiver_account: &t.receiver_account,
            rows: &t.rows,
        }
    }

    #[test]
    fn federated_training_matches_centralized_without_noise() {
        let t = tiny();
        let cfg = tiny_cfg();
        let fed = train_parties(hub_data(&t), t.flags.clone(), &cfg, &SessionConfig::default())
            .unwrap();
        let central = train_centralized(
            &TrainData {
                features: &t.features,
                labels: &t.labels,
                flag_bits: &t.flag_bits,
                rows: &t.rows,
            },
            &cfg,
        )
        .unwrap();
        let a = fed.model.params_flat();
        let b = central.params_flat();
        let worst =
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
        // Only fixed-point quantization separates the two paths.
        assert!(worst < 1e-4, "fed and centralized parameters differ by {worst}");
        assert_eq!(fed.batches, 4, "two epochs of two batches each");
        assert_eq!(fed.skipped_rows, 0);
    }

    #[test]
    fn final_model_is_identical_across_modes_caches_and_orders() {
        let t = tiny();
        let cfg = tiny_cfg();
        let base = SessionConfig::default();
        let mut variants = vec![base];
        variants.push(SessionConfig { ot_mode: OtMode::Crypto, ..base });
        variants.push(SessionConfig { key_cache: false, ..base });
        variants.push(SessionConfig { ot_mode: OtMode::Crypto, key_cache: false, ..base });
        variants.push(SessionConfig { delivery: DeliveryOrder::Shuffled(9), ..base });
        variants.push(SessionConfig {
            ot_mode: OtMode::Crypto,
            delivery: DeliveryOrder::Shuffled(77),
            ot_reduction: false,
            ..base
        });

        let reference =
            train_parties(hub_data(&t), t.flags.clone(), &cfg, &base).unwrap().model.params_flat();
        for (i, v) in variants.iter().enumerate() {
            let got =
                train_parties(hub_data(&t), t.flags.clone(), &cfg, v).unwrap().model.params_flat();
            let same = reference.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "variant {i} drifted from the reference parameters");
        }
    }

    #[test]
    fn selected_sums_are_exact_for_every_flag_pattern() {
        let f = DEFAULT_FRACTION_BITS;
        let pairs: Vec<CandidatePair> = (0..3)
            .map(|i| CandidatePair {
                bank: (i % 2) as u32,
                account: i as u32,
                u0: FixedVector::encode(&[i as f64 + 0.25, -1.5, 0.0, 3.125], f).unwrap(),
                u1: FixedVector::encode(&[-2.0 * i as f64, 0.75, 1.0 / 3.0, -0.001], f).unwrap(),
            })
            .collect();

        for pattern in 0u32..8 {
            let bits: Vec<bool> = (0..3).map(|i| pattern >> i & 1 == 1).collect();
            let mut flags = vec![BTreeMap::new(), BTreeMap::new()];
            for (i, &bit) in bits.iter().enumerate() {
                flags[i % 2].insert(i as u32, bit);
            }
            let mut oracle = FixedVector::zeros(4, f);
            for (p, &bit) in pairs.iter().zip(&bits) {
                oracle.add_assign(if bit { &p.u1 } else { &p.u0 }).unwrap();
            }
            for session in [
                SessionConfig::default(),
                SessionConfig { key_cache: false, ..SessionConfig::default() },
                SessionConfig { ot_mode: OtMode::Crypto, ..SessionConfig::default() },
            ] {
                let (got, _) = select_and_aggregate(
                    pairs.clone(),
                    flags.clone(),
                    NoiseSpec::None,
                    &session,
                )
                .unwrap();
                assert_eq!(got, oracle, "pattern {pattern:03b} under {:?}", session.ot_mode);
            }
        }
    }

    #[test]
    fn zero_update_batches_expose_the_noise_scale() {
        let f = DEFAULT_FRACTION_BITS;
        let sigma = 0.3;
        let len = 8;
        let zero = FixedVector::zeros(len, f);
        let flags: Vec<BTreeMap<u32, bool>> =
            vec![[(0u32, false), (1u32, true)].into_iter().collect()];
        let mut samples: Vec<f64> = Vec::new();
        for rep in 0..60 {
            let session = SessionConfig {
                hub_seed: 10_000 + rep,
                aggregator_seed: 20_000 + rep,
                ..SessionConfig::default()
            };
            let pairs = vec![
                CandidatePair { bank: 0, account: 0, u0: zero.clone(), u1: zero.clone() },
                CandidatePair { bank: 0, account: 1, u0: zero.clone(), u1: zero.clone() },
            ];
            let (got, _) =
                select_and_aggregate(pairs, flags.clone(), NoiseSpec::Gaussian { sigma }, &session)
                    .unwrap();
            samples.extend(got.decode());
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() < 0.25 * sigma,
            "sample std {std} too far from requested {sigma}"
        );
    }

    #[test]
    fn hub_view_is_one_aggregate_per_batch_under_defaults() {
        let t = tiny();
        let out =
            train_parties(hub_data(&t), t.flags.clone(), &tiny_cfg(), &SessionConfig::default())
                .unwrap();
        assert_eq!(out.hub_received.len(), 1, "hub saw message kinds: {:?}", out.hub_received);
        assert_eq!(out.hub_received.get("aggregate-share"), Some(&out.batches));
    }

    #[test]
    fn leakage_covers_banks_and_aggregator_but_not_accounts_at_aggregator() {
        let t = tiny();
        let out =
            train_parties(hub_data(&t), t.flags.clone(), &tiny_cfg(), &SessionConfig::default())
                .unwrap();
        // Reduction on: only the two anomalous receivers are ever touched,
        // once each for the key transfer plus once per row per epoch for
        // the sealed pair. Only the key transfers are true OTs.
        let total: u64 = out.leakage.total_bank_queries();
        assert_eq!(total, 6);
        assert_eq!(out.ot_invocations, 2);
        // Sealed pairs still flow through banks to the aggregator each
        // epoch, one share per anomalous row.
        assert_eq!(out.leakage.total_aggregator_observations(), 4);
        assert!(out.leakage.bank_queries[&0].contains_key(&1));
        assert!(out.leakage.bank_queries[&1].contains_key(&3));
    }

    #[test]
    fn unknown_training_account_is_skipped_and_counted() {
        let t = tiny();
        let mut flags = t.flags.clone();
        // Bank 1 has never heard of account 3, an anomalous receiver.
        flags[1].remove(&3);
        for key_cache in [true, false] {
            let session = SessionConfig { key_cache, ..SessionConfig::default() };
            let out = train_parties(hub_data(&t), flags.clone(), &tiny_cfg(), &session).unwrap();
            // The row recurs once per epoch; every recurrence is skipped.
            assert_eq!(out.skipped_rows, 2, "key_cache={key_cache}");
            assert_eq!(out.leakage.skipped_rows, 2);
            assert!(out.model.params_flat().iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn unknown_inference_account_is_fatal() {
        let t = tiny();
        let mut flags = t.flags.clone();
        flags[0].remove(&2);
        let model = crate::model::Mlp::anomaly_detector(&mut crate::rng::labeled_rng(5, "model-init"));
        let err = infer_parties(
            hub_data(&t),
            flags,
            &model,
            InferStrategy::Direct,
            &SessionConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::UnknownAccount { account: 2 }));
    }

    #[test]
    fn inference_reconstructs_the_flag_side_score() {
        let t = tiny();
        let model = crate::model::Mlp::anomaly_detector(&mut crate::rng::labeled_rng(9, "model-init"));
        let session = SessionConfig::default();
        let quantum = (2.0f64).powi(-(session.fraction_bits as i32));

        let direct =
            infer_parties(hub_data(&t), t.flags.clone(), &model, InferStrategy::Direct, &session)
                .unwrap();
        let round =
            infer_parties(hub_data(&t), t.flags.clone(), &model, InferStrategy::Round, &session)
                .unwrap();
        assert!(direct.leakage.aggregator_banks.is_empty(), "no aggregator in inference");
        assert_eq!(direct.ot_invocations, t.rows.len() as u64);

        for (i, &row) in t.rows.iter().enumerate() {
            let want = model.forward(&detector_input(&t.features[row], t.flag_bits[row]));
            assert!(
                (direct.scores[i] - want).abs() <= quantum,
                "direct score {} vs {want}",
                direct.scores[i]
            );
            assert_eq!(round.scores[i], want, "round snaps to the true candidate");
        }

        // Under bank noise the rounded score still lands on a candidate.
        let noisy = SessionConfig {
            infer_noise: NoiseSpec::Gaussian { sigma: 0.01 },
            ..SessionConfig::default()
        };
        let snapped =
            infer_parties(hub_data(&t), t.flags.clone(), &model, InferStrategy::Round, &noisy)
                .unwrap();
        for (i, &row) in t.rows.iter().enumerate() {
            let s0 = model.forward(&detector_input(&t.features[row], false));
            let s1 = model.forward(&detector_input(&t.features[row], true));
            assert!(
                snapped.scores[i] == s0 || snapped.scores[i] == s1,
                "rounded score must be one of the candidates"
            );
        }
    }

    #[test]
    fn crypto_mode_hides_nothing_from_the_math_only_the_transport() {
        // Same scores whichever transfer implements the selection.
        let t = tiny();
        let model = crate::model::Mlp::anomaly_detector(&mut crate::rng::labeled_rng(9, "model-init"));
        let ideal = infer_parties(
            hub_data(&t),
            t.flags.clone(),
            &model,
            InferStrategy::Round,
            &SessionConfig::default(),
        )
        .unwrap();
        let crypto = infer_parties(
            hub_data(&t),
            t.flags.clone(),
            &model,
            InferStrategy::Round,
            &SessionConfig { ot_mode: OtMode::Crypto, ..SessionConfig::default() },
        )
        .unwrap();
        assert_eq!(ideal.scores, crypto.scores);
    }

    fn free_addresses(n: usize) -> BTreeMap<u32, SocketAddr> {
        // Bind ephemeral listeners to reserve distinct ports, then free
        // them for the parties to claim.
        let listeners: Vec<TcpListener> =
            (0..n).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        listeners.iter().enumerate().map(|(i, l)| (i as u32, l.local_addr().unwrap())).collect()
    }

    #[test]
    fn tcp_session_reproduces_the_sim_checkpoint_exactly() {
        let t = tiny();
        let cfg = tiny_cfg();
        let session = SessionConfig { ot_mode: OtMode::Crypto, ..SessionConfig::default() };
        let sim = train_parties(hub_data(&t), t.flags.clone(), &cfg, &session).unwrap();

        let parties = [PartyId::Hub, PartyId::Aggregator, PartyId::Bank(0), PartyId::Bank(1)];
        let addresses = free_addresses(4);
        let deadline = Duration::from_secs(10);
        let timeout = Duration::from_secs(10);

        let (model, sent) = std::thread::scope(|scope| {
            let peers_of = |me: PartyId| -> Vec<PartyId> {
                parties.iter().copied().filter(|p| *p != me).collect()
            };
            let addr_ref = &addresses;
            let flags = t.flags.clone();
            let agg = scope.spawn({
                let machine = AggregatorMachine::new(
                    session.session_id,
                    cfg.noise,
                    session.aggregator_seed,
                );
                move || {
                    run_party_over_tcp(
                        machine,
                        addr_ref,
                        &peers_of(PartyId::Aggregator),
                        deadline,
                        timeout,
                    )
                    .unwrap()
                }
            });
            let bank_handles: Vec<_> = flags
                .into_iter()
                .enumerate()
                .map(|(i, table)| {
                    let machine = BankMachine::new(
                        session.session_id,
                        i as u32,
                        table,
                        session.infer_noise,
                        session.fraction_bits,
                        session.bank_seed_base + i as u64,
                    );
                    scope.spawn(move || {
                        run_party_over_tcp(
                            machine,
                            addr_ref,
                            &peers_of(PartyId::Bank(i as u32)),
                            deadline,
                            timeout,
                        )
                        .unwrap()
                    })
                })
                .collect();

            let hub = HubTrainer::new(hub_data(&t), cfg.clone(), session.hub_options(2)).unwrap();
            let (hub, hub_sent) =
                run_party_over_tcp(hub, addr_ref, &peers_of(PartyId::Hub), deadline, timeout)
                    .unwrap();

            let mut total = hub_sent;
            let (_, agg_sent) = agg.join().unwrap();
            total.merge(&agg_sent);
            for h in bank_handles {
                let (_, bank_sent) = h.join().unwrap();
                total.merge(&bank_sent);
            }
            let (model, _) = hub.into_parts();
            (model, total)
        });

        let sim_params = sim.model.params_flat();
        let tcp_params = model.params_flat();
        let identical =
            sim_params.iter().zip(&tcp_params).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(identical, "TCP and sim checkpoints must match bit for bit");

        let tcp = sent.report();
        assert_eq!(tcp.total_messages, sim.comms.total_messages);
        assert_eq!(tcp.total_bytes, sim.comms.total_bytes);
    }
}

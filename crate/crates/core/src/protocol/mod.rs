//! Three-party training and inference protocol.
//!
//! A hub holds the transactions and the model, each bank holds the flag
//! bits of its own accounts, and an aggregator sums masked per-row shares
//! and adds calibrated noise before anything reaches the hub. Flags never
//! leave a bank in the clear: candidate updates travel through oblivious
//! transfer (or sealed pairs under cached per-account keys), so every
//! byte a bank emits is a uniformly masked ring vector.
//!
//! The machines in [`hub`], [`bank`] and [`aggregator`] are single-threaded
//! state machines over an ordered inbox. They run unchanged over the
//! in-memory simulator and over TCP; see [`session`].

pub mod aggregator;
pub mod bank;
pub mod hub;
pub mod noise;
pub mod session;
pub mod wire;

pub use aggregator::AggregatorMachine;
pub use bank::BankMachine;
pub use hub::{BatchSelectHub, CandidatePair, HubData, HubOptions, HubStats, HubTrainer, InferHub};
pub use noise::{noise_default, sample_noise, NoiseSpec, NoiseSpecParseError};
pub use session::{
    bank_flag_tables, infer_in_sim, infer_parties, run_party_over_tcp, select_and_aggregate,
    train_in_sim, train_parties, InferOutcome, SessionConfig, TrainOutcome,
};
pub use wire::{Payload, Purpose};

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::ot::OtError;
use crate::party::PartyId;
use crate::ring::RingError;
use crate::sharing::SharingError;
use crate::transport::{MsgType, ProtocolMessage, TransportError};

/// Anything that can go wrong while running the protocol.
#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed {what} payload: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("{party} got unexpected {got:?} while {state}")]
    UnexpectedMessage { party: PartyId, got: MsgType, state: &'static str },
    #[error("message for a different session")]
    SessionMismatch,
    #[error("replayed or non-monotone id {sid}")]
    Replay { sid: u64 },
    #[error("receiver account {account} unknown at the bank")]
    UnknownAccount { account: u32 },
    #[error("network quiescent but the session is unfinished: {0}")]
    Stalled(String),
    #[error("bad session configuration: {0}")]
    Config(String),
}

/// How the hub turns a reconstructed noisy inference score into an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InferStrategy {
    /// Return the noisy score as reconstructed.
    #[default]
    Direct,
    /// Snap to the nearer of the two candidate scores; ties pick the
    /// unflagged candidate.
    Round,
}

impl FromStr for InferStrategy {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(InferStrategy::Direct),
            "round" => Ok(InferStrategy::Round),
            other => Err(ProtocolError::Config(format!(
                "unknown inference strategy {other:?}, expected direct or round"
            ))),
        }
    }
}

/// Messages a machine wants delivered, paired with their destinations.
#[derive(Debug, Default)]
pub struct Outbox {
    msgs: Vec<(PartyId, ProtocolMessage)>,
}

impl Outbox {
    pub fn push(&mut self, to: PartyId, msg: ProtocolMessage) {
        self.msgs.push((to, msg));
    }

    pub fn drain(&mut self) -> Vec<(PartyId, ProtocolMessage)> {
        std::mem::take(&mut self.msgs)
    }

    pub fn is_empty(&self) -> bool {
        self.msgs.is_empty()
    }
}

/// A single-threaded protocol party. The same implementation runs over the
/// simulator and over TCP; only the pump loop differs.
pub trait PartyMachine {
    fn party(&self) -> PartyId;

    /// Called once before any message is delivered. Only the hub emits
    /// anything here.
    fn start(&mut self, _out: &mut Outbox) -> Result<(), ProtocolError> {
        Ok(())
    }

    fn handle(&mut self, msg: &ProtocolMessage, out: &mut Outbox) -> Result<(), ProtocolError>;

    /// True once the party has nothing left to do in this session.
    fn finished(&self) -> bool;
}

/// What each party could observe about the data while the session ran.
///
/// Banks learn which of their accounts were queried and how often; the
/// aggregator learns only (receiver bank, count), never accounts or
/// amounts. These counters are the protocol's admitted leakage and are
/// reported, not hidden.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// bank index -> account index -> times that account was queried.
    pub bank_queries: BTreeMap<u32, BTreeMap<u32, u64>>,
    /// bank index -> masked shares the aggregator saw from that bank.
    pub aggregator_banks: BTreeMap<u32, u64>,
    /// Rows dropped because the receiving bank did not know the account.
    pub skipped_rows: u64,
}

impl LeakageReport {
    pub fn total_bank_queries(&self) -> u64 {
        self.bank_queries.values().flat_map(|m| m.values()).sum()
    }

    pub fn total_aggregator_observations(&self) -> u64 {
        self.aggregator_banks.values().sum()
    }
}

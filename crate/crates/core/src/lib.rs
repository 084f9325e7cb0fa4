//! Privacy-preserving federated anomaly detection for interbank payments.
//!
//! A payment hub trains a flag-aware anomaly detector without ever learning
//! the account flags held by its member banks. The hub prepares, for every
//! transaction, one gradient update per flag hypothesis; the receiving bank
//! picks the right one through 1-out-of-2 oblivious transfer of additively
//! masked updates, and a separate aggregator reconstructs only the noisy
//! batch sum. Inference runs the same selection two-party between hub and
//! bank, with the bank noising the confidence it releases.
//!
//! The crate bundles:
//!
//! * [`ring`] / [`sharing`]: fixed-point arithmetic in Z_2^64 and 2-of-2
//!   additive secret sharing, the algebra that makes masks cancel exactly;
//! * [`ot`]: the transfer itself, in an ideal (trusted-dealer) mode for
//!   deterministic simulation and a Diffie-Hellman mode over ristretto255,
//!   plus the per-account key cache that makes OT cost epoch-independent;
//! * [`data`]: a synthetic transaction generator, velocity feature
//!   extraction, upsampling and normalization;
//! * [`model`]: the per-sample-gradient MLP, AUPRC, and checkpoint I/O;
//! * [`transport`]: one message framing shared by a deterministic in-memory
//!   simulator and blocking TCP endpoints;
//! * [`protocol`]: hub, bank and aggregator as message-driven state
//!   machines, with communication and leakage accounting;
//! * [`privacy`]: the membership-inference attack harness and the
//!   noise/utility sweep that prices the privacy of the whole pipeline.

/// Library crate version, for embedding in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod data;
pub mod model;
pub mod ot;
pub mod party;
pub mod privacy;
pub mod protocol;
pub mod ring;
pub mod rng;
pub mod sharing;
pub mod transport;

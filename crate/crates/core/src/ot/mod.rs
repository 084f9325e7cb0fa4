//! 1-out-of-2 oblivious transfer.
//!
//! The receiver holds a choice bit b and learns exactly one of the sender's
//! two equal-length messages; the sender learns nothing about b. Two modes
//! share one interface:
//!
//! * `Ideal`: an in-process dealer that hands the receiver its selection
//!   directly. Deterministic, fast, and used by the simulator and the test
//!   oracles; it hides nothing from a transcript observer and says so.
//! * `Crypto`: Diffie-Hellman OT over ristretto255. The sender publishes
//!   A = aG; the receiver answers B = bA + xG; both derive the shared key
//!   H(axG) while the off-choice key stays unknowable to the receiver.
//!
//! [`ot_masked_select`] layers additive masking on top: the sender's two
//! messages are u_0 - r and u_1 - r for a uniform ring mask r it keeps as
//! its own share, so the bytes the receiver later forwards are uniform
//! noise no matter which update was chosen.

mod cache;
mod group;
mod simplest;

pub use cache::{key_ot_setup, open, seal, AccountKeyPair, CachedKey, SymKey, KEY_LEN};
pub use group::{OtGroup, Ristretto};
pub use simplest::{CryptoOtReceiver, CryptoOtSender};

use serde::{Deserialize, Serialize};

use crate::ring::{FixedVector, RingError};
use crate::rng::SeedRng;
use crate::sharing::random_mask;

/// Transfer-layer errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OtError {
    #[error("sender messages differ in length: {v0} vs {v1} bytes")]
    UnequalLengths { v0: usize, v1: usize },
    #[error("transcript carries an invalid group element")]
    InvalidPoint,
    #[error("ciphertext shorter than its authentication tag")]
    TranscriptTruncated,
    #[error("decryption authentication failed")]
    AuthFailure,
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Which transfer construction a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtMode {
    /// Trusted in-process dealer; for simulation and tests only.
    Ideal,
    /// Diffie-Hellman OT over ristretto255.
    Crypto,
}

impl std::str::FromStr for OtMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal" => Ok(OtMode::Ideal),
            "crypto" => Ok(OtMode::Crypto),
            other => Err(format!("unknown ot mode {other:?}, expected ideal|crypto")),
        }
    }
}

/// The sender's two candidate messages. Always equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct OtSenderInput {
    v0: Vec<u8>,
    v1: Vec<u8>,
}

impl OtSenderInput {
    pub fn new(v0: Vec<u8>, v1: Vec<u8>) -> Result<Self, OtError> {
        if v0.len() != v1.len() {
            return Err(OtError::UnequalLengths { v0: v0.len(), v1: v1.len() });
        }
        Ok(OtSenderInput { v0, v1 })
    }

    pub fn v0(&self) -> &[u8] {
        &self.v0
    }

    pub fn v1(&self) -> &[u8] {
        &self.v1
    }

    pub fn len(&self) -> usize {
        self.v0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v0.is_empty()
    }
}

/// The receiver's choice bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtChoice(pub bool);

/// Runs one complete transfer in process, both roles back to back.
///
/// Exercises the same primitives the message-driven protocol uses, so tests
/// and benchmarks of this function speak for the wire flow as well. The
/// receiver obtains `v_b` bit-exact; the sender learns nothing it did not
/// already hold.
pub fn ot_transfer(
    mode: OtMode,
    input: &OtSenderInput,
    choice: OtChoice,
    sender_rng: &mut SeedRng,
    receiver_rng: &mut SeedRng,
) -> Result<Vec<u8>, OtError> {
    match mode {
        OtMode::Ideal => {
            // The dealer hands over the selection; nothing travels that
            // could fail to decode.
            let _ = (sender_rng, receiver_rng);
            Ok(if choice.0 { input.v1.clone() } else { input.v0.clone() })
        }
        OtMode::Crypto => {
            let sid = 0u64;
            let sender = CryptoOtSender::new(sender_rng);
            let receiver = CryptoOtReceiver::new(choice.0, &sender.public_msg(), receiver_rng)?;
            let (c0, c1) = sender.encrypt(&receiver.public_msg(), input, sid)?;
            receiver.decrypt(&c0, &c1, sid)
        }
    }
}

/// Obliviously selects one of two fixed-point vectors into additive shares.
///
/// The sender keeps a uniform mask r as its share and offers u_0 - r and
/// u_1 - r; the receiver's share is whichever it picked. The pair
/// reconstructs to exactly u_b, and the receiver-side bytes are uniform
/// regardless of b or the updates.
pub fn ot_masked_select(
    mode: OtMode,
    u0: &FixedVector,
    u1: &FixedVector,
    flag_bit: bool,
    sender_rng: &mut SeedRng,
    receiver_rng: &mut SeedRng,
) -> Result<(FixedVector, FixedVector), OtError> {
    let mask = random_mask(u0.len(), u0.fraction_bits(), sender_rng);
    let m0 = u0.sub(&mask)?;
    let m1 = u1.sub(&mask)?;
    let input = OtSenderInput::new(m0.to_le_bytes(), m1.to_le_bytes())?;
    let picked = ot_transfer(mode, &input, OtChoice(flag_bit), sender_rng, receiver_rng)?;
    let receiver_share = FixedVector::from_le_bytes(&picked, u0.fraction_bits())?;
    Ok((mask, receiver_share))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labeled_rng;
    use rand::{Rng, RngCore};

    #[test]
    fn both_modes_return_the_chosen_message() {
        let mut srng = labeled_rng(1, "ot-sender");
        let mut rrng = labeled_rng(1, "ot-receiver");
        let mut data = labeled_rng(1, "ot-data");
        for trial in 0..200 {
            let len = 1 + (trial % 67);
            let mut v0 = vec![0u8; len];
            let mut v1 = vec![0u8; len];
            data.fill_bytes(&mut v0);
            data.fill_bytes(&mut v1);
            let b = data.gen::<bool>();
            let input = OtSenderInput::new(v0.clone(), v1.clone()).unwrap();
            let want = if b { &v1 } else { &v0 };
            for mode in [OtMode::Ideal, OtMode::Crypto] {
                let got = ot_transfer(mode, &input, OtChoice(b), &mut srng, &mut rrng).unwrap();
                assert_eq!(&got, want, "mode {mode:?} trial {trial}");
            }
        }
    }

    #[test]
    fn unequal_message_lengths_are_rejected() {
        assert!(matches!(
            OtSenderInput::new(vec![1, 2], vec![1, 2, 3]),
            Err(OtError::UnequalLengths { v0: 2, v1: 3 })
        ));
    }

    #[test]
    fn masked_select_reconstructs_the_picked_update() {
        let mut srng = labeled_rng(2, "ot-sender");
        let mut rrng = labeled_rng(2, "ot-receiver");
        let u0 = FixedVector::encode(&[1.0, -2.0, 0.25], 24).unwrap();
        let u1 = FixedVector::encode(&[5.5, 0.0, -9.75], 24).unwrap();
        for (mode, bit) in [
            (OtMode::Ideal, false),
            (OtMode::Ideal, true),
            (OtMode::Crypto, false),
            (OtMode::Crypto, true),
        ] {
            let (s, r) = ot_masked_select(mode, &u0, &u1, bit, &mut srng, &mut rrng).unwrap();
            let got = s.add(&r).unwrap();
            let want = if bit { &u1 } else { &u0 };
            assert_eq!(&got, want, "mode {mode:?} bit {bit}");
        }
    }

    #[test]
    fn masked_select_checks_shapes() {
        let mut srng = labeled_rng(3, "ot-sender");
        let mut rrng = labeled_rng(3, "ot-receiver");
        let u0 = FixedVector::zeros(3, 24);
        let u1 = FixedVector::zeros(4, 24);
        assert!(ot_masked_select(OtMode::Ideal, &u0, &u1, false, &mut srng, &mut rrng).is_err());
    }
}

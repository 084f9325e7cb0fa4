//! Diffie-Hellman 1-out-of-2 transfer over an abstract prime-order group.
//!
//! Three moves. Sender publishes A = aG. Receiver with bit b answers
//! B = bA + xG. Sender derives k0 = H(aB), k1 = H(a(B - A)) and sends both
//! messages encrypted under the respective keys; the receiver can compute
//! only k_b = H(xA) and opens exactly one. Keys are bound to a caller
//! session id so transcripts cannot be spliced across selections.

use sha2::{Digest, Sha256};

use super::group::{OtGroup, Ristretto};
use super::{OtError, OtSenderInput};
use crate::rng::SeedRng;

type Point = <Ristretto as OtGroup>::Point;
type Scalar = <Ristretto as OtGroup>::Scalar;

fn derive_key(shared: &Point, sid: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ot-key");
    h.update(Ristretto::to_bytes(shared));
    h.update(sid.to_le_bytes());
    h.finalize().into()
}

/// XOR stream from SHA-256 expansion of `key`.
fn xor_stream(key: &[u8; 32], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut counter = 0u64;
    for chunk in data.chunks(32) {
        let mut h = Sha256::new();
        h.update(b"ot-pad");
        h.update(key);
        h.update(counter.to_le_bytes());
        let block = h.finalize();
        out.extend(chunk.iter().zip(block.iter()).map(|(d, k)| d ^ k));
        counter += 1;
    }
    out
}

/// Sender side. One instance per transfer.
pub struct CryptoOtSender {
    a: Scalar,
    pub_a: Point,
}

impl CryptoOtSender {
    pub fn new(rng: &mut SeedRng) -> Self {
        let a = Ristretto::random_scalar(rng);
        let pub_a = Ristretto::basepoint_mul(&a);
        CryptoOtSender { a, pub_a }
    }

    /// First move: the sender's public point A.
    pub fn public_msg(&self) -> [u8; 32] {
        Ristretto::to_bytes(&self.pub_a)
    }

    /// Third move: both messages, each under the key only one side of the
    /// receiver's choice can reproduce.
    pub fn encrypt(
        &self,
        receiver_msg: &[u8; 32],
        input: &OtSenderInput,
        sid: u64,
    ) -> Result<(Vec<u8>, Vec<u8>), OtError> {
        let b_point = Ristretto::from_bytes(receiver_msg)?;
        let k0 = derive_key(&Ristretto::mul(&b_point, &self.a), sid);
        let k1 = derive_key(&Ristretto::mul(&Ristretto::sub(&b_point, &self.pub_a), &self.a), sid);
        Ok((xor_stream(&k0, input.v0()), xor_stream(&k1, input.v1())))
    }
}

/// Receiver side. One instance per transfer.
pub struct CryptoOtReceiver {
    x: Scalar,
    choice: bool,
    sender_pub: Point,
}

impl CryptoOtReceiver {
    pub fn new(choice: bool, sender_msg: &[u8; 32], rng: &mut SeedRng) -> Result<Self, OtError> {
        let sender_pub = Ristretto::from_bytes(sender_msg)?;
        let x = Ristretto::random_scalar(rng);
        Ok(CryptoOtReceiver { x, choice, sender_pub })
    }

    /// Second move: B = bA + xG.
    pub fn public_msg(&self) -> [u8; 32] {
        let blind = Ristretto::basepoint_mul(&self.x);
        let b_point =
            if self.choice { Ristretto::add(&self.sender_pub, &blind) } else { blind };
        Ristretto::to_bytes(&b_point)
    }

    /// Opens the ciphertext matching the choice bit.
    pub fn decrypt(&self, c0: &[u8], c1: &[u8], sid: u64) -> Result<Vec<u8>, OtError> {
        let key = derive_key(&Ristretto::mul(&self.sender_pub, &self.x), sid);
        Ok(xor_stream(&key, if self.choice { c1 } else { c0 }))
    }
}

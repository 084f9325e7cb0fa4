//! Per-account key transfer, run once, reused every epoch.
//!
//! Training revisits the same flagged accounts epoch after epoch. Instead
//! of one transfer per (transaction, epoch), the sender draws a key pair
//! (k0, k1) per account and transfers k_b a single time; afterwards each
//! masked update pair travels as two authenticated stream-cipher
//! ciphertexts and the bank opens the one its cached key fits. Transfer
//! count therefore scales with distinct accounts, not epochs.
//!
//! Nonces must never repeat per key: every sealing gets a fresh one and the
//! keystream binds to it.

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{ot_transfer, OtChoice, OtError, OtMode, OtSenderInput};
use crate::rng::SeedRng;

/// Symmetric key length in bytes.
pub const KEY_LEN: usize = 32;
/// Authentication tag length in bytes.
const TAG_LEN: usize = 16;

/// Stream-cipher key.
pub type SymKey = [u8; KEY_LEN];

/// Sender-side pair: one key per flag hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountKeyPair {
    pub k0: SymKey,
    pub k1: SymKey,
}

impl AccountKeyPair {
    pub fn fresh(rng: &mut SeedRng) -> Self {
        let mut k0 = [0u8; KEY_LEN];
        let mut k1 = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k0);
        rng.fill_bytes(&mut k1);
        AccountKeyPair { k0, k1 }
    }
}

/// Receiver-side cache entry: the key matching the account's flag bit.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedKey {
    pub key: SymKey,
    pub choice: bool,
}

/// One oblivious transfer of k_b; the single transfer this account will
/// ever need.
pub fn key_ot_setup(
    mode: OtMode,
    pair: &AccountKeyPair,
    flag_bit: bool,
    sender_rng: &mut SeedRng,
    receiver_rng: &mut SeedRng,
) -> Result<CachedKey, OtError> {
    let input = OtSenderInput::new(pair.k0.to_vec(), pair.k1.to_vec())?;
    let got = ot_transfer(mode, &input, OtChoice(flag_bit), sender_rng, receiver_rng)?;
    let key: SymKey = got.try_into().expect("key transfer preserves length");
    Ok(CachedKey { key, choice: flag_bit })
}

fn keystream_xor(key: &SymKey, nonce: u64, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut counter = 0u64;
    for chunk in data.chunks(32) {
        let mut h = Sha256::new();
        h.update(b"cache-pad");
        h.update(key);
        h.update(nonce.to_le_bytes());
        h.update(counter.to_le_bytes());
        let block = h.finalize();
        out.extend(chunk.iter().zip(block.iter()).map(|(d, k)| d ^ k));
        counter += 1;
    }
    out
}

fn tag(key: &SymKey, nonce: u64, ciphertext: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(b"cache-tag");
    h.update(key);
    h.update(nonce.to_le_bytes());
    h.update((ciphertext.len() as u64).to_le_bytes());
    h.update(ciphertext);
    let digest = h.finalize();
    digest[..TAG_LEN].try_into().expect("tag fits")
}

/// Encrypts and authenticates `plaintext` under (`key`, `nonce`).
pub fn seal(key: &SymKey, nonce: u64, plaintext: &[u8]) -> Vec<u8> {
    let mut ct = keystream_xor(key, nonce, plaintext);
    let t = tag(key, nonce, &ct);
    ct.extend_from_slice(&t);
    ct
}

/// Inverse of [`seal`]; fails when key, nonce or ciphertext do not match.
pub fn open(key: &SymKey, nonce: u64, sealed: &[u8]) -> Result<Vec<u8>, OtError> {
    if sealed.len() < TAG_LEN {
        return Err(OtError::TranscriptTruncated);
    }
    let (ct, got_tag) = sealed.split_at(sealed.len() - TAG_LEN);
    if tag(key, nonce, ct) != got_tag {
        return Err(OtError::AuthFailure);
    }
    Ok(keystream_xor(key, nonce, ct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labeled_rng;

    #[test]
    fn setup_caches_the_flag_side_key() {
        let mut srng = labeled_rng(31, "cache-s");
        let mut rrng = labeled_rng(31, "cache-r");
        for mode in [OtMode::Ideal, OtMode::Crypto] {
            let pair = AccountKeyPair::fresh(&mut srng);
            let c0 = key_ot_setup(mode, &pair, false, &mut srng, &mut rrng).unwrap();
            assert_eq!(c0.key, pair.k0);
            let c1 = key_ot_setup(mode, &pair, true, &mut srng, &mut rrng).unwrap();
            assert_eq!(c1.key, pair.k1);
        }
    }

    #[test]
    fn seal_open_round_trips() {
        let mut rng = labeled_rng(32, "cache");
        let pair = AccountKeyPair::fresh(&mut rng);
        let msg = b"some masked update bytes of odd length.".to_vec();
        let sealed = seal(&pair.k0, 7, &msg);
        assert_eq!(open(&pair.k0, 7, &sealed).unwrap(), msg);
    }

    #[test]
    fn wrong_key_nonce_or_bytes_fail_authentication() {
        let mut rng = labeled_rng(33, "cache");
        let pair = AccountKeyPair::fresh(&mut rng);
        let sealed = seal(&pair.k0, 1, b"payload");
        assert_eq!(open(&pair.k1, 1, &sealed), Err(OtError::AuthFailure));
        assert_eq!(open(&pair.k0, 2, &sealed), Err(OtError::AuthFailure));
        let mut flipped = sealed.clone();
        flipped[0] ^= 1;
        assert_eq!(open(&pair.k0, 1, &flipped), Err(OtError::AuthFailure));
        assert_eq!(open(&pair.k0, 1, &sealed[..8]), Err(OtError::TranscriptTruncated));
    }

    #[test]
    fn nonces_rotate_the_keystream() {
        let mut rng = labeled_rng(34, "cache");
        let pair = AccountKeyPair::fresh(&mut rng);
        let a = seal(&pair.k0, 1, &[0u8; 64]);
        let b = seal(&pair.k0, 2, &[0u8; 64]);
        assert_ne!(a[..64], b[..64]);
    }
}

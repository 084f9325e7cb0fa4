//! A bank: holds the flag bits of its own accounts and answers selection
//! queries without revealing them.
//!
//! For each queried row the bank obtains exactly one of the two masked
//! candidates (by transfer or by opening the sealed pair matching its
//! cached key) and forwards it. The forwarded bytes are uniformly masked,
//! so downstream parties learn nothing about the flag. The bank itself
//! learns which account was queried; that is counted, not hidden.
//!
//! Transfer session ids must be strictly increasing within a session;
//! replays are rejected.

use std::collections::BTreeMap;

use crate::ot::{open, CachedKey, CryptoOtReceiver, KEY_LEN};
use crate::party::PartyId;
use crate::ring::{encode, FixedVector};
use crate::rng::{labeled_rng, SeedRng};
use crate::transport::ProtocolMessage;

use super::noise::{sample_noise, NoiseSpec};
use super::wire::{
    parse_for, ControlPayload, InferSharePayload, OtBody, OtMsg2Payload, Payload,
    ShareForwardPayload,
};
use super::{Outbox, PartyMachine, ProtocolError, Purpose};

struct PendingReceive {
    receiver: CryptoOtReceiver,
    purpose: Purpose,
    account: u32,
    batch_id: u32,
}

pub struct BankMachine {
    session: [u8; 16],
    me: PartyId,
    /// account index -> flag bit, for accounts this bank owns.
    flags: BTreeMap<u32, bool>,
    infer_noise: NoiseSpec,
    fraction_bits: u32,
    ot_rng: SeedRng,
    noise_rng: SeedRng,
    cached_keys: BTreeMap<u32, CachedKey>,
    pending: BTreeMap<u64, PendingReceive>,
    last_sid: Option<u64>,
    queries: BTreeMap<u32, u64>,
    skipped: u64,
    done: bool,
}

impl BankMachine {
    pub fn new(
        session: [u8; 16],
        bank_index: u32,
        flags: BTreeMap<u32, bool>,
        infer_noise: NoiseSpec,
        fraction_bits: u32,
        seed: u64,
    ) -> Self {
        BankMachine {
            session,
            me: PartyId::Bank(bank_index),
            flags,
            infer_noise,
            fraction_bits,
            ot_rng: labeled_rng(seed, "bank-ot"),
            noise_rng: labeled_rng(seed, "bank-noise"),
            cached_keys: BTreeMap::new(),
            pending: BTreeMap::new(),
            last_sid: None,
            queries: BTreeMap::new(),
            skipped: 0,
            done: false,
        }
    }

    /// account index -> how many times it was queried this session.
    pub fn query_counts(&self) -> &BTreeMap<u32, u64> {
        &self.queries
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn bump_sid(&mut self, sid: u64) -> Result<(), ProtocolError> {
        if self.last_sid.is_some_and(|last| sid <= last) {
            return Err(ProtocolError::Replay { sid });
        }
        self.last_sid = Some(sid);
        Ok(())
    }

    /// Query bookkeeping plus the flag lookup; `None` means the account is
    /// unknown here and the row must be aborted.
    fn look_up(&mut self, account: u32) -> Option<bool> {
        *self.queries.entry(account).or_insert(0) += 1;
        let flag = self.flags.get(&account).copied();
        if flag.is_none() {
            self.skipped += 1;
        }
        flag
    }

    fn abort_row(
        &mut self,
        purpose: Purpose,
        ot_sid: u64,
        account: u32,
        batch_id: u32,
        out: &mut Outbox,
    ) {
        out.push(
            PartyId::Hub,
            Payload::Control(ControlPayload::MissingAccount { purpose, ot_sid, account, batch_id })
                .into_message(self.session, self.me),
        );
    }

    /// The bank's share of the selected candidate is in hand; route it.
    fn complete(
        &mut self,
        purpose: Purpose,
        ot_sid: u64,
        account: u32,
        batch_id: u32,
        flag: bool,
        bytes: Vec<u8>,
        out: &mut Outbox,
    ) -> Result<(), ProtocolError> {
        match purpose {
            Purpose::KeySetup => {
                let key: [u8; KEY_LEN] = bytes.try_into().map_err(|_| ProtocolError::Malformed {
                    what: "OtMsg1",
                    detail: "key transfer of wrong length".into(),
                })?;
                self.cached_keys.insert(account, CachedKey { key, choice: flag });
                Ok(())
            }
            Purpose::Train => {
                let share = FixedVector::from_le_bytes(&bytes, self.fraction_bits)?;
                out.push(
                    PartyId::Aggregator,
                    Payload::Share(ShareForwardPayload { batch_id, share })
                        .into_message(self.session, self.me),
                );
                Ok(())
            }
            Purpose::Infer => {
                let mut share = FixedVector::from_le_bytes(&bytes, self.fraction_bits)?;
                if !self.infer_noise.is_none() {
                    let mut noisy = Vec::with_capacity(share.len());
                    for _ in 0..share.len() {
                        noisy.push(encode(
                            sample_noise(self.infer_noise, &mut self.noise_rng),
                            self.fraction_bits,
                        )?);
                    }
                    share.add_assign(&FixedVector::from_elems(noisy, self.fraction_bits))?;
                }
                out.push(
                    PartyId::Hub,
                    Payload::InferShare(InferSharePayload { ot_sid, share })
                        .into_message(self.session, self.me),
                );
                Ok(())
            }
        }
    }

    /// Opening move of a transfer (training/key setup via OtMsg1, inference
    /// via InferRequest; both reduce to this).
    fn on_opener(
        &mut self,
        purpose: Purpose,
        ot_sid: u64,
        account: u32,
        batch_id: u32,
        body: OtBody,
        out: &mut Outbox,
    ) -> Result<(), ProtocolError> {
        self.bump_sid(ot_sid)?;
        let Some(flag) = self.look_up(account) else {
            self.abort_row(purpose, ot_sid, account, batch_id, out);
            return Ok(());
        };
        match body {
            OtBody::Ideal { m0, m1 } => {
                let picked = if flag { m1 } else { m0 };
                self.complete(purpose, ot_sid, account, batch_id, flag, picked, out)
            }
            OtBody::Crypto { point } => {
                let receiver = CryptoOtReceiver::new(flag, &point, &mut self.ot_rng)?;
                out.push(
                    PartyId::Hub,
                    Payload::Ot2(OtMsg2Payload { ot_sid, point: receiver.public_msg() })
                        .into_message(self.session, self.me),
                );
                self.pending.insert(ot_sid, PendingReceive { receiver, purpose, account, batch_id });
                Ok(())
            }
        }
    }
}

impl PartyMachine for BankMachine {
    fn party(&self) -> PartyId {
        self.me
    }

    fn handle(&mut self, msg: &ProtocolMessage, out: &mut Outbox) -> Result<(), ProtocolError> {
        match parse_for(self.session, msg)? {
            Payload::Ot1(p) => self.on_opener(p.purpose, p.ot_sid, p.account, p.batch_id, p.body, out),
            Payload::InferRequest(p) => {
                self.on_opener(Purpose::Infer, p.ot_sid, p.account, 0, p.body, out)
            }
            Payload::Ot3(p) => {
                let pending = self.pending.remove(&p.ot_sid).ok_or(ProtocolError::UnexpectedMessage {
                    party: self.me,
                    got: msg.msg_type,
                    state: "no transfer open under that sid",
                })?;
                let bytes = pending.receiver.decrypt(&p.c0, &p.c1, p.ot_sid)?;
                let flag = self.flags.get(&pending.account).copied().unwrap_or(false);
                self.complete(pending.purpose, p.ot_sid, pending.account, pending.batch_id, flag, bytes, out)
            }
            Payload::Masked(p) => {
                self.bump_sid(p.ot_sid)?;
                let Some(flag) = self.look_up(p.account) else {
                    self.abort_row(p.purpose, p.ot_sid, p.account, p.batch_id, out);
                    return Ok(());
                };
                let Some(cached) = self.cached_keys.get(&p.account) else {
                    return Err(ProtocolError::UnexpectedMessage {
                        party: self.me,
                        got: msg.msg_type,
                        state: "sealed pair for an account with no cached key",
                    });
                };
                let sealed = if cached.choice { &p.c1 } else { &p.c0 };
                let bytes = open(&cached.key, p.ot_sid, sealed)?;
                self.complete(p.purpose, p.ot_sid, p.account, p.batch_id, flag, bytes, out)
            }
            Payload::Control(ControlPayload::Shutdown) => {
                self.done = true;
                Ok(())
            }
            other => Err(ProtocolError::UnexpectedMessage {
                party: self.me,
                got: other.msg_type(),
                state: "serving selection queries",
            }),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{seal, AccountKeyPair};
    use crate::ring::DEFAULT_FRACTION_BITS;
    use crate::sharing::random_mask;
    use super::super::wire::{MaskedPairPayload, OtMsg1Payload};

    const F: u32 = DEFAULT_FRACTION_BITS;
    const SID: [u8; 16] = [7; 16];

    fn bank_with(pairs: &[(u32, bool)]) -> BankMachine {
        BankMachine::new(SID, 0, pairs.iter().copied().collect(), NoiseSpec::None, F, 99)
    }

    fn ideal_train_msg(sid: u64, account: u32, m0: &FixedVector, m1: &FixedVector) -> ProtocolMessage {
        Payload::Ot1(OtMsg1Payload {
            purpose: Purpose::Train,
            ot_sid: sid,
            account,
            batch_id: 4,
            body: OtBody::Ideal { m0: m0.to_le_bytes(), m1: m1.to_le_bytes() },
        })
        .into_message(SID, PartyId::Hub)
    }

    fn forwarded_share(out: &mut Outbox) -> (PartyId, ShareForwardPayload) {
        let msgs = out.drain();
        assert_eq!(msgs.len(), 1);
        let (to, msg) = &msgs[0];
        match Payload::decode(msg.msg_type, &msg.payload).unwrap() {
            Payload::Share(p) => (*to, p),
            other => panic!("expected share forward, got {:?}", other.msg_type()),
        }
    }

    #[test]
    fn ideal_transfer_forwards_the_flag_side() {
        let mut rng = labeled_rng(1, "masks");
        let m0 = random_mask(3, F, &mut rng);
        let m1 = random_mask(3, F, &mut rng);
        let mut out = Outbox::default();

        let mut bank = bank_with(&[(5, false), (6, true)]);
        bank.handle(&ideal_train_msg(1, 5, &m0, &m1), &mut out).unwrap();
        let (to, got) = forwarded_share(&mut out);
        assert_eq!(to, PartyId::Aggregator);
        assert_eq!(got.batch_id, 4);
        assert_eq!(got.share, m0);

        bank.handle(&ideal_train_msg(2, 6, &m0, &m1), &mut out).unwrap();
        let (_, got) = forwarded_share(&mut out);
        assert_eq!(got.share, m1);
        assert_eq!(bank.query_counts()[&5], 1);
        assert_eq!(bank.query_counts()[&6], 1);
    }

    #[test]
    fn replayed_and_rewound_sids_are_rejected() {
        let mut rng = labeled_rng(2, "masks");
        let m = random_mask(1, F, &mut rng);
        let mut out = Outbox::default();
        let mut bank = bank_with(&[(5, false)]);
        bank.handle(&ideal_train_msg(10, 5, &m, &m), &mut out).unwrap();
        out.drain();
        for sid in [10, 9] {
            assert!(matches!(
                bank.handle(&ideal_train_msg(sid, 5, &m, &m), &mut out),
                Err(ProtocolError::Replay { .. })
            ));
        }
        bank.handle(&ideal_train_msg(11, 5, &m, &m), &mut out).unwrap();
    }

    #[test]
    fn unknown_account_aborts_the_row_and_counts() {
        let mut rng = labeled_rng(3, "masks");
        let m = random_mask(1, F, &mut rng);
        let mut out = Outbox::default();
        let mut bank = bank_with(&[(5, false)]);
        bank.handle(&ideal_train_msg(1, 42, &m, &m), &mut out).unwrap();
        let msgs = out.drain();
        assert_eq!(msgs.len(), 1);
        let (to, msg) = &msgs[0];
        assert_eq!(*to, PartyId::Hub);
        match Payload::decode(msg.msg_type, &msg.payload).unwrap() {
            Payload::Control(ControlPayload::MissingAccount { account, ot_sid, batch_id, .. }) => {
                assert_eq!(account, 42);
                assert_eq!(ot_sid, 1);
                assert_eq!(batch_id, 4);
            }
            other => panic!("expected missing-account control, got {:?}", other.msg_type()),
        }
        assert_eq!(bank.skipped(), 1);
        assert_eq!(bank.query_counts()[&42], 1);
    }

    #[test]
    fn sealed_pairs_open_with_the_cached_key() {
        let mut rng = labeled_rng(4, "keys");
        let pair = AccountKeyPair::fresh(&mut rng);
        let m0 = random_mask(2, F, &mut rng);
        let m1 = random_mask(2, F, &mut rng);
        let mut out = Outbox::default();
        let mut bank = bank_with(&[(8, true)]);
        bank.cached_keys.insert(8, CachedKey { key: pair.k1, choice: true });

        let msg = Payload::Masked(MaskedPairPayload {
            purpose: Purpose::Train,
            ot_sid: 3,
            account: 8,
            batch_id: 1,
            c0: seal(&pair.k0, 3, &m0.to_le_bytes()),
            c1: seal(&pair.k1, 3, &m1.to_le_bytes()),
        })
        .into_message(SID, PartyId::Hub);
        bank.handle(&msg, &mut out).unwrap();
        let (_, got) = forwarded_share(&mut out);
        assert_eq!(got.share, m1);

        // Without a cached key the sealed pair is a protocol violation.
        let stray = Payload::Masked(MaskedPairPayload {
            purpose: Purpose::Train,
            ot_sid: 9,
            account: 8,
            batch_id: 1,
            c0: vec![0; 20],
            c1: vec![0; 20],
        })
        .into_message(SID, PartyId::Hub);
        bank.cached_keys.clear();
        assert!(bank.handle(&stray, &mut out).is_err());
    }

    #[test]
    fn inference_share_carries_noise_when_configured() {
        let mut bank = BankMachine::new(
            SID,
            0,
            [(5, true)].into_iter().collect(),
            NoiseSpec::Gaussian { sigma: 0.5 },
            F,
            123,
        );
        let s0 = FixedVector::encode(&[0.25], F).unwrap();
        let s1 = FixedVector::encode(&[0.75], F).unwrap();
        let mut out = Outbox::default();
        let msg = Payload::InferRequest(super::super::wire::InferRequestPayload {
            ot_sid: 1,
            account: 5,
            body: OtBody::Ideal { m0: s0.to_le_bytes(), m1: s1.to_le_bytes() },
        })
        .into_message(SID, PartyId::Hub);
        bank.handle(&msg, &mut out).unwrap();
        let msgs = out.drain();
        let (to, reply) = &msgs[0];
        assert_eq!(*to, PartyId::Hub);
        let Payload::InferShare(p) = Payload::decode(reply.msg_type, &reply.payload).unwrap() else {
            panic!("expected infer share");
        };
        let got = p.share.decode()[0];
        assert_ne!(got, 0.75, "noise must move the share");
        assert!((got - 0.75).abs() < 5.0, "noise should be moderate: {got}");
    }

    #[test]
    fn session_mismatch_is_fatal() {
        let mut bank = bank_with(&[(5, false)]);
        let mut out = Outbox::default();
        let alien = Payload::Control(ControlPayload::Shutdown).into_message([1; 16], PartyId::Hub);
        assert!(matches!(bank.handle(&alien, &mut out), Err(ProtocolError::SessionMismatch)));
    }
}

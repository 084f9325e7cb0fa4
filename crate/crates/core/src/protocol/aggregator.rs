//! The aggregator: sums masked bank shares per batch and adds noise.
//!
//! It sees only uniformly masked ring vectors and which bank each came
//! from. Shares may arrive before the hub's batch announcement (different
//! sender, no cross-pair ordering), so each batch buffers until both the
//! expected count and that many shares are in. The fold is fixed-order:
//! per-bank running subtotals in arrival order (per-pair FIFO makes that
//! deterministic), then subtotals combined in bank order, so the result
//! does not depend on how the transport interleaved the banks.

use std::collections::BTreeMap;

use crate::party::PartyId;
use crate::ring::{encode, FixedVector};
use crate::rng::{labeled_rng, SeedRng};
use crate::transport::ProtocolMessage;

use super::noise::{sample_noise, NoiseSpec};
use super::wire::{parse_for, AggregateSharePayload, ControlPayload, Payload};
use super::{Outbox, PartyMachine, ProtocolError};

struct BatchAcc {
    /// Known once BatchBegin arrives; adjusted down on aborted rows.
    expected: Option<u32>,
    vec_len: usize,
    fraction_bits: u32,
    received: u32,
    adjustments: u32,
    per_bank: BTreeMap<u32, FixedVector>,
}

impl BatchAcc {
    fn ready(&self) -> bool {
        match self.expected {
            Some(e) => e.saturating_sub(self.adjustments) == self.received,
            None => false,
        }
    }
}

pub struct AggregatorMachine {
    session: [u8; 16],
    noise: NoiseSpec,
    noise_rng: SeedRng,
    batches: BTreeMap<u32, BatchAcc>,
    last_finalized: Option<u32>,
    bank_share_counts: BTreeMap<u32, u64>,
    done: bool,
}

impl AggregatorMachine {
    pub fn new(session: [u8; 16], noise: NoiseSpec, seed: u64) -> Self {
        AggregatorMachine {
            session,
            noise,
            noise_rng: labeled_rng(seed, "aggregator-noise"),
            batches: BTreeMap::new(),
            last_finalized: None,
            bank_share_counts: BTreeMap::new(),
            done: false,
        }
    }

    /// bank index -> number of masked shares observed from that bank.
    pub fn bank_share_counts(&self) -> &BTreeMap<u32, u64> {
        &self.bank_share_counts
    }

    fn entry(&mut self, batch_id: u32, vec_len: usize, fraction_bits: u32) -> Result<&mut BatchAcc, ProtocolError> {
        if self.last_finalized.is_some_and(|last| batch_id <= last) {
            return Err(ProtocolError::Replay { sid: batch_id as u64 });
        }
        Ok(self.batches.entry(batch_id).or_insert(BatchAcc {
            expected: None,
            vec_len,
            fraction_bits,
            received: 0,
            adjustments: 0,
            per_bank: BTreeMap::new(),
        }))
    }

    fn try_finalize(&mut self, batch_id: u32, out: &mut Outbox) -> Result<(), ProtocolError> {
        let Some(acc) = self.batches.get(&batch_id) else { return Ok(()) };
        if !acc.ready() {
            return Ok(());
        }
        let acc = self.batches.remove(&batch_id).expect("checked present");
        let mut sum = FixedVector::zeros(acc.vec_len, acc.fraction_bits);
        for subtotal in acc.per_bank.values() {
            sum.add_assign(subtotal)?;
        }
        if !self.noise.is_none() {
            let mut noisy = Vec::with_capacity(acc.vec_len);
            for _ in 0..acc.vec_len {
                noisy.push(encode(sample_noise(self.noise, &mut self.noise_rng), acc.fraction_bits)?);
            }
            sum.add_assign(&FixedVector::from_elems(noisy, acc.fraction_bits))?;
        }
        self.last_finalized = Some(batch_id);
        out.push(
            PartyId::Hub,
            Payload::Aggregate(AggregateSharePayload {
                batch_id,
                contributions: acc.received,
                share: sum,
            })
            .into_message(self.session, PartyId::Aggregator),
        );
        Ok(())
    }
}

impl PartyMachine for AggregatorMachine {
    fn party(&self) -> PartyId {
        PartyId::Aggregator
    }

    fn handle(&mut self, msg: &ProtocolMessage, out: &mut Outbox) -> Result<(), ProtocolError> {
        match parse_for(self.session, msg)? {
            Payload::Share(p) => {
                let PartyId::Bank(bank) = msg.sender else {
                    return Err(ProtocolError::UnexpectedMessage {
                        party: PartyId::Aggregator,
                        got: msg.msg_type,
                        state: "expecting shares only from banks",
                    });
                };
                let batch_id = p.batch_id;
                let acc = self.entry(batch_id, p.share.len(), p.share.fraction_bits())?;
                if acc.received == 0 && acc.expected.is_none() {
                    acc.vec_len = p.share.len();
                    acc.fraction_bits = p.share.fraction_bits();
                }
                if p.share.len() != acc.vec_len {
                    return Err(ProtocolError::Malformed {
                        what: "ShareForward",
                        detail: format!("share length {} where batch holds {}", p.share.len(), acc.vec_len),
                    });
                }
                match acc.per_bank.get_mut(&bank) {
                    Some(sub) => sub.add_assign(&p.share)?,
                    None => {
                        acc.per_bank.insert(bank, p.share);
                    }
                }
                acc.received += 1;
                *self.bank_share_counts.entry(bank).or_insert(0) += 1;
                self.try_finalize(batch_id, out)
            }
            Payload::Control(ControlPayload::BatchBegin { batch_id, expected, vec_len, fraction_bits }) => {
                let acc = self.entry(batch_id, vec_len as usize, fraction_bits)?;
                if acc.expected.is_some() {
                    return Err(ProtocolError::Replay { sid: batch_id as u64 });
                }
                acc.expected = Some(expected);
                acc.vec_len = vec_len as usize;
                acc.fraction_bits = fraction_bits;
                self.try_finalize(batch_id, out)
            }
            Payload::Control(ControlPayload::BatchAdjust { batch_id }) => {
                let acc = self.entry(batch_id, 0, 0)?;
                acc.adjustments += 1;
                self.try_finalize(batch_id, out)
            }
            Payload::Control(ControlPayload::Shutdown) => {
                self.done = true;
                Ok(())
            }
            other => Err(ProtocolError::UnexpectedMessage {
                party: PartyId::Aggregator,
                got: other.msg_type(),
                state: "aggregating batches",
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
    use crate::ring::DEFAULT_FRACTION_BITS;

    const F: u32 = DEFAULT_FRACTION_BITS;

    fn share_msg(bank: u32, batch_id: u32, xs: &[f64]) -> ProtocolMessage {
        Payload::Share(super::super::wire::ShareForwardPayload {
            batch_id,
            share: FixedVector::encode(xs, F).unwrap(),
        })
        .into_message([0; 16], PartyId::Bank(bank))
    }

    fn begin_msg(batch_id: u32, expected: u32, vec_len: u32) -> ProtocolMessage {
        Payload::Control(ControlPayload::BatchBegin { batch_id, expected, vec_len, fraction_bits: F })
            .into_message([0; 16], PartyId::Hub)
    }

    fn take_aggregate(out: &mut Outbox) -> AggregateSharePayload {
        let msgs = out.drain();
        assert_eq!(msgs.len(), 1);
        let (to, msg) = &msgs[0];
        assert_eq!(*to, PartyId::Hub);
        match Payload::decode(msg.msg_type, &msg.payload).unwrap() {
            Payload::Aggregate(p) => p,
            other => panic!("expected aggregate, got {:?}", other.msg_type()),
        }
    }

    #[test]
    fn sums_are_order_independent() {
        let mut out = Outbox::default();
        let deliveries: [&[usize]; 2] = [&[0, 1, 2, 3], &[2, 3, 0, 1]];
        let mut results = vec![];
        for order in deliveries {
            let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::None, 5);
            let msgs = [
                begin_msg(0, 3, 2),
                share_msg(0, 0, &[1.0, 2.0]),
                share_msg(1, 0, &[0.5, -1.0]),
                share_msg(2, 0, &[0.25, 0.25]),
            ];
            for &i in order {
                agg.handle(&msgs[i], &mut out).unwrap();
            }
            let got = take_aggregate(&mut out);
            assert_eq!(got.contributions, 3);
            results.push(got.share);
        }
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0].decode(), vec![1.75, 1.25]);
    }

    #[test]
    fn zero_expected_batches_finalize_immediately() {
        let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::None, 5);
        let mut out = Outbox::default();
        agg.handle(&begin_msg(0, 0, 3), &mut out).unwrap();
        let got = take_aggregate(&mut out);
        assert_eq!(got.contributions, 0);
        assert_eq!(got.share.decode(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn adjustment_lowers_the_bar() {
        let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::None, 5);
        let mut out = Outbox::default();
        agg.handle(&begin_msg(0, 2, 1), &mut out).unwrap();
        agg.handle(&share_msg(0, 0, &[4.0]), &mut out).unwrap();
        assert!(out.is_empty());
        let adjust = Payload::Control(ControlPayload::BatchAdjust { batch_id: 0 })
            .into_message([0; 16], PartyId::Hub);
        agg.handle(&adjust, &mut out).unwrap();
        let got = take_aggregate(&mut out);
        assert_eq!(got.contributions, 1);
        assert_eq!(got.share.decode(), vec![4.0]);
    }

    #[test]
    fn replayed_batch_ids_are_rejected() {
        let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::None, 5);
        let mut out = Outbox::default();
        agg.handle(&begin_msg(3, 0, 1), &mut out).unwrap();
        out.drain();
        assert!(matches!(
            agg.handle(&begin_msg(3, 0, 1), &mut out),
            Err(ProtocolError::Replay { sid: 3 })
        ));
        assert!(matches!(
            agg.handle(&share_msg(0, 2, &[1.0]), &mut out),
            Err(ProtocolError::Replay { sid: 2 })
        ));
    }

    #[test]
    fn noise_lands_on_every_coordinate() {
        // With all-zero inputs the aggregate is exactly the encoded noise.
        let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::Gaussian { sigma: 1.0 }, 9);
        let mut out = Outbox::default();
        agg.handle(&begin_msg(0, 1, 4), &mut out).unwrap();
        agg.handle(&share_msg(0, 0, &[0.0; 4]), &mut out).unwrap();
        let got = take_aggregate(&mut out);
        let decoded = got.share.decode();
        assert!(decoded.iter().all(|&x| x != 0.0), "noise missing: {decoded:?}");

        // Same seed, same draws.
        let mut agg2 = AggregatorMachine::new([0; 16], NoiseSpec::Gaussian { sigma: 1.0 }, 9);
        agg2.handle(&begin_msg(0, 1, 4), &mut out).unwrap();
        agg2.handle(&share_msg(0, 0, &[0.0; 4]), &mut out).unwrap();
        assert_eq!(take_aggregate(&mut out).share, got.share);
    }

    #[test]
    fn share_before_begin_is_buffered() {
        let mut agg = AggregatorMachine::new([0; 16], NoiseSpec::None, 5);
        let mut out = Outbox::default();
        agg.handle(&share_msg(1, 0, &[2.0]), &mut out).unwrap();
        assert!(out.is_empty());
        agg.handle(&begin_msg(0, 1, 1), &mut out).unwrap();
        let got = take_aggregate(&mut out);
        assert_eq!(got.share.decode(), vec![2.0]);
        assert_eq!(agg.bank_share_counts()[&1], 1);
    }
}

//! Deterministic in-memory network.
//!
//! Frames are encoded exactly as on TCP, counted, and queued per directed
//! pair. Delivery order across pairs is a scheduler policy: round-robin for
//! plain deterministic runs, or seeded-random pair picking to stress
//! protocol machines against cross-pair reordering. Within a pair, FIFO
//! always holds; no machine may assume more than that.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::{decode_frame, encode_frame, CommsCounters, ProtocolMessage, TransportError};
use crate::party::PartyId;
use crate::rng::{labeled_rng, SeedRng};

/// Cross-pair scheduling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOrder {
    /// Cycle through non-empty pairs in wire-tag order.
    RoundRobin,
    /// Pick a random non-empty pair each step, seeded.
    Shuffled(u64),
}

/// In-memory network of framed FIFO queues.
pub struct SimNet {
    queues: BTreeMap<(u32, u32), VecDeque<Vec<u8>>>,
    counters: CommsCounters,
    cursor: (u32, u32),
    rng: Option<SeedRng>,
    max_frame: usize,
    pending: usize,
}

impl SimNet {
    pub fn new(order: DeliveryOrder, max_frame: usize) -> Self {
        let rng = match order {
            DeliveryOrder::RoundRobin => None,
            DeliveryOrder::Shuffled(seed) => Some(labeled_rng(seed, "sim-delivery")),
        };
        SimNet {
            queues: BTreeMap::new(),
            counters: CommsCounters::default(),
            cursor: (0, 0),
            rng,
            max_frame,
            pending: 0,
        }
    }

    /// Frames, counts and enqueues one message.
    pub fn send(
        &mut self,
        from: PartyId,
        to: PartyId,
        msg: &ProtocolMessage,
    ) -> Result<(), TransportError> {
        let frame = encode_frame(msg);
        if frame.len() - 4 > self.max_frame {
            return Err(TransportError::FrameTooLarge { len: frame.len() - 4, max: self.max_frame });
        }
        self.counters.record(from, to, frame.len());
        self.queues.entry((from.wire_tag(), to.wire_tag())).or_default().push_back(frame);
        self.pending += 1;
        Ok(())
    }

    /// Picks the next frame per policy and decodes it.
    ///
    /// Returns `None` when the network is quiescent.
    pub fn deliver_next(
        &mut self,
    ) -> Result<Option<(PartyId, PartyId, ProtocolMessage)>, TransportError> {
        if self.pending == 0 {
            return Ok(None);
        }
        let nonempty: Vec<(u32, u32)> = self
            .queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(&k, _)| k)
            .collect();
        debug_assert!(!nonempty.is_empty());
        let key = match &mut self.rng {
            Some(rng) => nonempty[rng.gen_range(0..nonempty.len())],
            None => {
                // First non-empty pair strictly after the cursor, cyclically.
                *nonempty.iter().find(|&&k| k > self.cursor).unwrap_or(&nonempty[0])
            }
        };
        self.cursor = key;
        let frame = self.queues.get_mut(&key).expect("picked key exists").pop_front().expect("non-empty");
        self.pending -= 1;
        let (msg, used) = decode_frame(&frame, self.max_frame)?;
        debug_assert_eq!(used, frame.len());
        Ok(Some((PartyId::from_wire_tag(key.0), PartyId::from_wire_tag(key.1), msg)))
    }

    /// Messages still queued.
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn counters(&self) -> &CommsCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MsgType;

    fn msg(sender: PartyId, tag: u8) -> ProtocolMessage {
        ProtocolMessage::new([1; 16], sender, MsgType::Control, vec![tag])
    }

    #[test]
    fn per_pair_fifo_holds_under_both_policies() {
        for order in [DeliveryOrder::RoundRobin, DeliveryOrder::Shuffled(5)] {
            let mut net = SimNet::new(order, 1 << 20);
            for i in 0..10u8 {
                net.send(PartyId::Hub, PartyId::Bank(0), &msg(PartyId::Hub, i)).unwrap();
                net.send(PartyId::Hub, PartyId::Bank(1), &msg(PartyId::Hub, 100 + i)).unwrap();
            }
            let mut per_dest: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
            while let Some((_, to, m)) = net.deliver_next().unwrap() {
                per_dest.entry(to.wire_tag()).or_default().push(m.payload[0]);
            }
            assert_eq!(per_dest[&2], (0..10).collect::<Vec<u8>>());
            assert_eq!(per_dest[&3], (100..110).collect::<Vec<u8>>());
        }
    }

    #[test]
    fn byte_counters_match_frame_lengths() {
        let mut net = SimNet::new(DeliveryOrder::RoundRobin, 1 << 20);
        let m = msg(PartyId::Hub, 0);
        let frame_len = encode_frame(&m).len() as u64;
        net.send(PartyId::Hub, PartyId::Aggregator, &m).unwrap();
        net.send(PartyId::Hub, PartyId::Aggregator, &m).unwrap();
        assert_eq!(net.counters().total_bytes(), 2 * frame_len);
        assert_eq!(net.counters().total_messages(), 2);
    }

    #[test]
    fn shuffled_delivery_is_seed_deterministic() {
        let run = |seed| {
            let mut net = SimNet::new(DeliveryOrder::Shuffled(seed), 1 << 20);
            for i in 0..8u8 {
                net.send(PartyId::Hub, PartyId::Bank(i as u32 % 3), &msg(PartyId::Hub, i)).unwrap();
            }
            let mut order = Vec::new();
            while let Some((_, to, m)) = net.deliver_next().unwrap() {
                order.push((to.wire_tag(), m.payload[0]));
            }
            order
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}

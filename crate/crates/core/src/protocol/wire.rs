//! Typed payloads carried inside [`ProtocolMessage`] envelopes.
//!
//! Every payload has a fixed little-endian layout written and parsed by
//! hand; decoding never panics and rejects trailing bytes. The envelope
//! (version, session id, sender, msg type) is the transport's business,
//! this module only covers the bytes inside.

use crate::party::PartyId;
use crate::ring::FixedVector;
use crate::transport::{MsgType, ProtocolMessage};

use super::ProtocolError;

fn malformed(what: &'static str, detail: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed { what, detail: detail.into() }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    fn point(&mut self, v: &[u8; 32]) {
        self.buf.extend_from_slice(v);
    }

    fn fixed(&mut self, v: &FixedVector) {
        self.u32(v.fraction_bits());
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn finish(self) -> Vec<u8> {
        self.buf
    }
}

struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, buf: &'a [u8]) -> Self {
        Reader { what, buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.at < n {
            return Err(malformed(self.what, format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let len = self.u32()? as usize;
        if len > self.buf.len() {
            return Err(malformed(self.what, format!("length prefix {len} exceeds payload")));
        }
        Ok(self.take(len)?.to_vec())
    }

    fn point(&mut self) -> Result<[u8; 32], ProtocolError> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }

    fn fixed(&mut self) -> Result<FixedVector, ProtocolError> {
        let fraction_bits = self.u32()?;
        if fraction_bits >= 64 {
            return Err(malformed(self.what, format!("fraction bits {fraction_bits} out of range")));
        }
        let len = self.u32()? as usize;
        if len.checked_mul(8).is_none_or(|b| b > self.buf.len()) {
            return Err(malformed(self.what, format!("vector length {len} exceeds payload")));
        }
        let raw = self.take(len * 8)?;
        FixedVector::from_le_bytes(raw, fraction_bits)
            .map_err(|e| malformed(self.what, e.to_string()))
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.at != self.buf.len() {
            return Err(malformed(self.what, format!("{} trailing bytes", self.buf.len() - self.at)));
        }
        Ok(())
    }
}

/// Why an oblivious transfer is being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Delivering one of an account's two symmetric keys for later sealed
    /// pairs.
    KeySetup,
    /// Selecting a per-row candidate model update during training.
    Train,
    /// Selecting one of two candidate scores during inference.
    Infer,
}

impl Purpose {
    fn to_byte(self) -> u8 {
        match self {
            Purpose::KeySetup => 0,
            Purpose::Train => 1,
            Purpose::Infer => 2,
        }
    }

    fn from_byte(what: &'static str, b: u8) -> Result<Purpose, ProtocolError> {
        match b {
            0 => Ok(Purpose::KeySetup),
            1 => Ok(Purpose::Train),
            2 => Ok(Purpose::Infer),
            other => Err(malformed(what, format!("unknown purpose {other}"))),
        }
    }
}

/// Mode-dependent body of a transfer's opening move.
///
/// The ideal dealer ships both candidate messages and lets the receiver
/// pick locally; the cryptographic mode opens with the sender's group
/// element and the candidates follow sealed in the third move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OtBody {
    Ideal { m0: Vec<u8>, m1: Vec<u8> },
    Crypto { point: [u8; 32] },
}

impl OtBody {
    fn write(&self, w: &mut Writer) {
        match self {
            OtBody::Ideal { m0, m1 } => {
                w.u8(0);
                w.bytes(m0);
                w.bytes(m1);
            }
            OtBody::Crypto { point } => {
                w.u8(1);
                w.point(point);
            }
        }
    }

    fn read(what: &'static str, r: &mut Reader) -> Result<OtBody, ProtocolError> {
        match r.u8()? {
            0 => Ok(OtBody::Ideal { m0: r.bytes()?, m1: r.bytes()? }),
            1 => Ok(OtBody::Crypto { point: r.point()? }),
            other => Err(malformed(what, format!("unknown transfer body kind {other}"))),
        }
    }
}

/// Opening move of a transfer, hub to bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtMsg1Payload {
    pub purpose: Purpose,
    pub ot_sid: u64,
    pub account: u32,
    pub batch_id: u32,
    pub body: OtBody,
}

/// Receiver's reply in the cryptographic mode, bank to hub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtMsg2Payload {
    pub ot_sid: u64,
    pub point: [u8; 32],
}

/// Both candidates sealed under the choice-dependent keys, hub to bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtMsg3Payload {
    pub ot_sid: u64,
    pub c0: Vec<u8>,
    pub c1: Vec<u8>,
}

/// Both candidates sealed under an account's cached key pair; replaces a
/// full transfer once key setup has run. The nonce is the sid itself,
/// unique per session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedPairPayload {
    pub purpose: Purpose,
    pub ot_sid: u64,
    pub account: u32,
    pub batch_id: u32,
    pub c0: Vec<u8>,
    pub c1: Vec<u8>,
}

/// A bank's masked share of one selected row update, bank to aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareForwardPayload {
    pub batch_id: u32,
    pub share: FixedVector,
}

/// The aggregator's summed, noise-bearing share of a batch, to the hub.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSharePayload {
    pub batch_id: u32,
    pub contributions: u32,
    pub share: FixedVector,
}

/// Opens one two-party inference selection, hub to receiver bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferRequestPayload {
    pub ot_sid: u64,
    pub account: u32,
    pub body: OtBody,
}

/// The bank's noisy share of the selected score, back to the hub.
#[derive(Debug, Clone, PartialEq)]
pub struct InferSharePayload {
    pub ot_sid: u64,
    pub share: FixedVector,
}

/// Session control traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlPayload {
    /// Announces a batch to the aggregator: how many bank shares to expect
    /// and the share geometry.
    BatchBegin { batch_id: u32, expected: u32, vec_len: u32, fraction_bits: u32 },
    /// One expected share will never arrive (row aborted); lowers the bar.
    BatchAdjust { batch_id: u32 },
    /// A bank did not know the queried account; the row is aborted.
    MissingAccount { purpose: Purpose, ot_sid: u64, account: u32, batch_id: u32 },
    /// Session over, party may stop.
    Shutdown,
}

/// Every payload the protocol speaks, tagged by envelope msg type.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Ot1(OtMsg1Payload),
    Ot2(OtMsg2Payload),
    Ot3(OtMsg3Payload),
    Masked(MaskedPairPayload),
    Share(ShareForwardPayload),
    Aggregate(AggregateSharePayload),
    InferRequest(InferRequestPayload),
    InferShare(InferSharePayload),
    Control(ControlPayload),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Ot1(_) => MsgType::OtMsg1,
            Payload::Ot2(_) => MsgType::OtMsg2,
            Payload::Ot3(_) => MsgType::OtMsg3,
            Payload::Masked(_) => MsgType::MaskedPair,
            Payload::Share(_) => MsgType::ShareForward,
            Payload::Aggregate(_) => MsgType::AggregateShare,
            Payload::InferRequest(_) => MsgType::InferRequest,
            Payload::InferShare(_) => MsgType::InferShare,
            Payload::Control(_) => MsgType::Control,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Payload::Ot1(p) => {
                w.u8(p.purpose.to_byte());
                w.u64(p.ot_sid);
                w.u32(p.account);
                w.u32(p.batch_id);
                p.body.write(&mut w);
            }
            Payload::Ot2(p) => {
                w.u64(p.ot_sid);
                w.point(&p.point);
            }
            Payload::Ot3(p) => {
                w.u64(p.ot_sid);
                w.bytes(&p.c0);
                w.bytes(&p.c1);
            }
            Payload::Masked(p) => {
                w.u8(p.purpose.to_byte());
                w.u64(p.ot_sid);
                w.u32(p.account);
                w.u32(p.batch_id);
                w.bytes(&p.c0);
                w.bytes(&p.c1);
            }
            Payload::Share(p) => {
                w.u32(p.batch_id);
                w.fixed(&p.share);
            }
            Payload::Aggregate(p) => {
                w.u32(p.batch_id);
                w.u32(p.contributions);
                w.fixed(&p.share);
            }
            Payload::InferRequest(p) => {
                w.u64(p.ot_sid);
                w.u32(p.account);
                p.body.write(&mut w);
            }
            Payload::InferShare(p) => {
                w.u64(p.ot_sid);
                w.fixed(&p.share);
            }
            Payload::Control(c) => match c {
                ControlPayload::BatchBegin { batch_id, expected, vec_len, fraction_bits } => {
                    w.u8(0);
                    w.u32(*batch_id);
                    w.u32(*expected);
                    w.u32(*vec_len);
                    w.u32(*fraction_bits);
                }
                ControlPayload::BatchAdjust { batch_id } => {
                    w.u8(1);
                    w.u32(*batch_id);
                }
                ControlPayload::MissingAccount { purpose, ot_sid, account, batch_id } => {
                    w.u8(2);
                    w.u8(purpose.to_byte());
                    w.u64(*ot_sid);
                    w.u32(*account);
                    w.u32(*batch_id);
                }
                ControlPayload::Shutdown => w.u8(3),
            },
        }
        w.finish()
    }

    pub fn decode(msg_type: MsgType, bytes: &[u8]) -> Result<Payload, ProtocolError> {
        match msg_type {
            MsgType::OtMsg1 => {
                let mut r = Reader::new("OtMsg1", bytes);
                let p = OtMsg1Payload {
                    purpose: Purpose::from_byte("OtMsg1", r.u8()?)?,
                    ot_sid: r.u64()?,
                    account: r.u32()?,
                    batch_id: r.u32()?,
                    body: OtBody::read("OtMsg1", &mut r)?,
                };
                r.finish()?;
                Ok(Payload::Ot1(p))
            }
            MsgType::OtMsg2 => {
                let mut r = Reader::new("OtMsg2", bytes);
                let p = OtMsg2Payload { ot_sid: r.u64()?, point: r.point()? };
                r.finish()?;
                Ok(Payload::Ot2(p))
            }
            MsgType::OtMsg3 => {
                let mut r = Reader::new("OtMsg3", bytes);
                let p = OtMsg3Payload { ot_sid: r.u64()?, c0: r.bytes()?, c1: r.bytes()? };
                r.finish()?;
                Ok(Payload::Ot3(p))
            }
            MsgType::MaskedPair => {
                let mut r = Reader::new("MaskedPair", bytes);
                let p = MaskedPairPayload {
                    purpose: Purpose::from_byte("MaskedPair", r.u8()?)?,
                    ot_sid: r.u64()?,
                    account: r.u32()?,
                    batch_id: r.u32()?,
                    c0: r.bytes()?,
                    c1: r.bytes()?,
                };
                r.finish()?;
                Ok(Payload::Masked(p))
            }
            MsgType::ShareForward => {
                let mut r = Reader::new("ShareForward", bytes);
                let p = ShareForwardPayload { batch_id: r.u32()?, share: r.fixed()? };
                r.finish()?;
                Ok(Payload::Share(p))
            }
            MsgType::AggregateShare => {
                let mut r = Reader::new("AggregateShare", bytes);
                let p = AggregateSharePayload {
                    batch_id: r.u32()?,
                    contributions: r.u32()?,
                    share: r.fixed()?,
                };
                r.finish()?;
                Ok(Payload::Aggregate(p))
            }
            MsgType::InferRequest => {
                let mut r = Reader::new("InferRequest", bytes);
                let p = InferRequestPayload {
                    ot_sid: r.u64()?,
                    account: r.u32()?,
                    body: OtBody::read("InferRequest", &mut r)?,
                };
                r.finish()?;
                Ok(Payload::InferRequest(p))
            }
            MsgType::InferShare => {
                let mut r = Reader::new("InferShare", bytes);
                let p = InferSharePayload { ot_sid: r.u64()?, share: r.fixed()? };
                r.finish()?;
                Ok(Payload::InferShare(p))
            }
            MsgType::Control => {
                let mut r = Reader::new("Control", bytes);
                let c = match r.u8()? {
                    0 => ControlPayload::BatchBegin {
                        batch_id: r.u32()?,
                        expected: r.u32()?,
                        vec_len: r.u32()?,
                        fraction_bits: r.u32()?,
                    },
                    1 => ControlPayload::BatchAdjust { batch_id: r.u32()? },
                    2 => ControlPayload::MissingAccount {
                        purpose: Purpose::from_byte("Control", r.u8()?)?,
                        ot_sid: r.u64()?,
                        account: r.u32()?,
                        batch_id: r.u32()?,
                    },
                    3 => ControlPayload::Shutdown,
                    other => return Err(malformed("Control", format!("unknown control kind {other}"))),
                };
                r.finish()?;
                Ok(Payload::Control(c))
            }
        }
    }

    /// Wraps the payload in a framed envelope ready to send.
    pub fn into_message(self, session_id: [u8; 16], sender: PartyId) -> ProtocolMessage {
        let msg_type = self.msg_type();
        ProtocolMessage::new(session_id, sender, msg_type, self.encode())
    }
}

/// Parses an incoming envelope, checking the session id first.
pub fn parse_for(session_id: [u8; 16], msg: &ProtocolMessage) -> Result<Payload, ProtocolError> {
    if msg.session_id != session_id {
        return Err(ProtocolError::SessionMismatch);
    }
    Payload::decode(msg.msg_type, &msg.payload)
}

//! Message envelope and framing shared by every transport.
//!
//! One frame on the wire, integers big-endian:
//!
//! ```text
//! total length   u32    bytes after this field
//! version        u16
//! session id     16 bytes
//! sender         u32    party wire tag
//! message type   u8
//! payload        remaining bytes
//! ```
//!
//! Payload bytes are opaque here; ring-element payloads keep their
//! little-endian order inside. The in-memory simulator and the TCP
//! endpoints frame identically, which is what makes their byte counters
//! and, downstream, whole training runs comparable to the bit.

mod sim;
mod tcp;

pub use sim::{DeliveryOrder, SimNet};
pub use tcp::{read_frame, TcpEndpoint};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::party::PartyId;

/// Wire format version this build speaks.
pub const WIRE_VERSION: u16 = 1;
/// Default ceiling on one frame's length field.
pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;
/// Envelope bytes that follow the length field before the payload.
const HEADER_LEN: usize = 2 + 16 + 4 + 1;

/// Kinds of protocol messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum MsgType {
    /// Transfer move 1 (sender opening).
    OtMsg1,
    /// Transfer move 2 (receiver response).
    OtMsg2,
    /// Transfer move 3 (ciphertext pair).
    OtMsg3,
    /// Key-cached masked update pair.
    MaskedPair,
    /// Bank share forwarded to the aggregator.
    ShareForward,
    /// Aggregated noisy batch share for the hub.
    AggregateShare,
    /// Hub-to-bank inference selection opening.
    InferRequest,
    /// Bank's noised inference share.
    InferShare,
    /// Session control (batch bounds, shutdown).
    Control,
}

impl MsgType {
    pub fn to_byte(self) -> u8 {
        match self {
            MsgType::OtMsg1 => 1,
            MsgType::OtMsg2 => 2,
            MsgType::OtMsg3 => 3,
            MsgType::MaskedPair => 4,
            MsgType::ShareForward => 5,
            MsgType::AggregateShare => 6,
            MsgType::InferRequest => 7,
            MsgType::InferShare => 8,
            MsgType::Control => 9,
        }
    }

    pub fn from_byte(b: u8) -> Option<MsgType> {
        Some(match b {
            1 => MsgType::OtMsg1,
            2 => MsgType::OtMsg2,
            3 => MsgType::OtMsg3,
            4 => MsgType::MaskedPair,
            5 => MsgType::ShareForward,
            6 => MsgType::AggregateShare,
            7 => MsgType::InferRequest,
            8 => MsgType::InferShare,
            9 => MsgType::Control,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::OtMsg1 => "ot-msg1",
            MsgType::OtMsg2 => "ot-msg2",
            MsgType::OtMsg3 => "ot-msg3",
            MsgType::MaskedPair => "masked-pair",
            MsgType::ShareForward => "share-forward",
            MsgType::AggregateShare => "aggregate-share",
            MsgType::InferRequest => "infer-request",
            MsgType::InferShare => "infer-share",
            MsgType::Control => "control",
        }
    }
}

/// One framed protocol message.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub version: u16,
    pub session_id: [u8; 16],
    pub sender: PartyId,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl ProtocolMessage {
    pub fn new(session_id: [u8; 16], sender: PartyId, msg_type: MsgType, payload: Vec<u8>) -> Self {
        ProtocolMessage { version: WIRE_VERSION, session_id, sender, msg_type, payload }
    }
}

/// Transport-layer errors.
#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("frame truncated: wanted {wanted} bytes, had {have}")]
    Truncated { wanted: usize, have: usize },
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    FrameTooLarge { len: usize, max: usize },
    #[error("frame shorter than its envelope ({len} bytes)")]
    Malformed { len: usize },
    #[error("unknown wire version {0}")]
    UnknownVersion(u16),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("receive timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("all peers disconnected")]
    AllPeersClosed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encodes a message into one wire frame.
pub fn encode_frame(msg: &ProtocolMessage) -> Vec<u8> {
    let body_len = HEADER_LEN + msg.payload.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.extend_from_slice(&msg.version.to_be_bytes());
    out.extend_from_slice(&msg.session_id);
    out.extend_from_slice(&msg.sender.wire_tag().to_be_bytes());
    out.push(msg.msg_type.to_byte());
    out.extend_from_slice(&msg.payload);
    out
}

/// Decodes one frame from the front of `bytes`.
///
/// Returns the message and the total bytes consumed. Never panics on
/// arbitrary input; every malformation maps to a typed error.
pub fn decode_frame(bytes: &[u8], max_frame: usize) -> Result<(ProtocolMessage, usize), TransportError> {
    if bytes.len() < 4 {
        return Err(TransportError::Truncated { wanted: 4, have: bytes.len() });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if len > max_frame {
        return Err(TransportError::FrameTooLarge { len, max: max_frame });
    }
    if len < HEADER_LEN {
        return Err(TransportError::Malformed { len });
    }
    if bytes.len() < 4 + len {
        return Err(TransportError::Truncated { wanted: 4 + len, have: bytes.len() });
    }
    let msg = decode_body(&bytes[4..4 + len])?;
    Ok((msg, 4 + len))
}

/// Decodes the envelope and payload after the length field.
fn decode_body(body: &[u8]) -> Result<ProtocolMessage, TransportError> {
    debug_assert!(body.len() >= HEADER_LEN);
    let version = u16::from_be_bytes(body[..2].try_into().expect("2 bytes"));
    if version != WIRE_VERSION {
        return Err(TransportError::UnknownVersion(version));
    }
    let mut session_id = [0u8; 16];
    session_id.copy_from_slice(&body[2..18]);
    let sender_tag = u32::from_be_bytes(body[18..22].try_into().expect("4 bytes"));
    let type_byte = body[22];
    let msg_type =
        MsgType::from_byte(type_byte).ok_or(TransportError::UnknownMsgType(type_byte))?;
    Ok(ProtocolMessage {
        version,
        session_id,
        sender: PartyId::from_wire_tag(sender_tag),
        msg_type,
        payload: body[HEADER_LEN..].to_vec(),
    })
}

/// Per-directed-pair traffic counters, counting full frames as sent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommsCounters {
    pairs: BTreeMap<(u32, u32), (u64, u64)>,
}

impl CommsCounters {
    pub fn record(&mut self, from: PartyId, to: PartyId, frame_len: usize) {
        let e = self.pairs.entry((from.wire_tag(), to.wire_tag())).or_insert((0, 0));
        e.0 += 1;
        e.1 += frame_len as u64;
    }

    pub fn total_messages(&self) -> u64 {
        self.pairs.values().map(|v| v.0).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.pairs.values().map(|v| v.1).sum()
    }

    pub fn merge(&mut self, other: &CommsCounters) {
        for (k, v) in &other.pairs {
            let e = self.pairs.entry(*k).or_insert((0, 0));
            e.0 += v.0;
            e.1 += v.1;
        }
    }

    pub fn report(&self) -> CommsReport {
        let pairs = self
            .pairs
            .iter()
            .map(|(&(f, t), &(messages, bytes))| PairTraffic {
                from: PartyId::from_wire_tag(f).to_string(),
                to: PartyId::from_wire_tag(t).to_string(),
                messages,
                bytes,
            })
            .collect();
        CommsReport {
            total_messages: self.total_messages(),
            total_bytes: self.total_bytes(),
            pairs,
        }
    }
}

/// Serializable traffic summary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CommsReport {
    pub total_messages: u64,
    pub total_bytes: u64,
    pub pairs: Vec<PairTraffic>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairTraffic {
    pub from: String,
    pub to: String,
    pub messages: u64,
    pub bytes: u64,
}

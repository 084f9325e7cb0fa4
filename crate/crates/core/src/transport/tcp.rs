//! Blocking TCP endpoints speaking the shared frame format.
//!
//! Connection rule: each unordered party pair gets exactly one stream,
//! dialed by the lower wire tag. A dialer announces itself with a 4-byte
//! big-endian tag preamble; frames follow. One reader thread per stream
//! feeds a common inbox, so `recv` is a single blocking pull with timeout,
//! and a mesh with every peer gone surfaces as a typed error, not a hang.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{decode_frame, encode_frame, CommsCounters, ProtocolMessage, TransportError};
use crate::party::PartyId;

enum InboxItem {
    Msg(PartyId, ProtocolMessage),
    Closed,
    Broken(TransportError),
}

/// One party's view of the TCP mesh.
pub struct TcpEndpoint {
    me: PartyId,
    writers: HashMap<u32, TcpStream>,
    inbox: Receiver<InboxItem>,
    sent: CommsCounters,
    received: CommsCounters,
    open_peers: usize,
    max_frame: usize,
    readers: Vec<JoinHandle<()>>,
}

impl TcpEndpoint {
    /// Binds, dials and accepts until the full mesh with `peers` stands.
    ///
    /// Dials peers with a greater wire tag, accepts the rest. Retries dials
    /// until `deadline` so start order does not matter.
    pub fn establish(
        me: PartyId,
        addresses: &BTreeMap<u32, SocketAddr>,
        peers: &[PartyId],
        deadline: Duration,
    ) -> Result<TcpEndpoint, TransportError> {
        let listener = TcpListener::bind(addresses[&me.wire_tag()])?;
        let started = Instant::now();
        let mut streams: HashMap<u32, TcpStream> = HashMap::new();

        let to_dial: Vec<PartyId> =
            peers.iter().copied().filter(|p| p.wire_tag() > me.wire_tag()).collect();
        let expect_accepts = peers.len() - to_dial.len();

        for peer in &to_dial {
            let addr = addresses[&peer.wire_tag()];
            loop {
                match TcpStream::connect(addr) {
                    Ok(mut s) => {
                        s.write_all(&me.wire_tag().to_be_bytes())?;
                        s.set_nodelay(true)?;
                        streams.insert(peer.wire_tag(), s);
                        break;
                    }
                    Err(e) => {
                        if started.elapsed() > deadline {
                            return Err(TransportError::Io(e));
                        }
                        std::thread::sleep(Duration::from_millis(20));
                    }
                }
            }
        }
        for _ in 0..expect_accepts {
            let (mut s, _) = listener.accept()?;
            let mut tag_bytes = [0u8; 4];
            s.read_exact(&mut tag_bytes)?;
            s.set_nodelay(true)?;
            streams.insert(u32::from_be_bytes(tag_bytes), s);
        }

        let (tx, inbox) = mpsc::channel();
        let mut writers = HashMap::new();
        let mut readers = Vec::new();
        let max_frame = super::DEFAULT_MAX_FRAME;
        for (tag, stream) in streams {
            writers.insert(tag, stream.try_clone()?);
            readers.push(spawn_reader(
                PartyId::from_wire_tag(tag),
                stream,
                tx.clone(),
                max_frame,
            ));
        }
        Ok(TcpEndpoint {
            me,
            open_peers: writers.len(),
            writers,
            inbox,
            sent: CommsCounters::default(),
            received: CommsCounters::default(),
            max_frame,
            readers,
        })
    }

    /// Frames, counts and writes one message.
    pub fn send(&mut self, to: PartyId, msg: &ProtocolMessage) -> Result<(), TransportError> {
        let frame = encode_frame(msg);
        if frame.len() - 4 > self.max_frame {
            return Err(TransportError::FrameTooLarge { len: frame.len() - 4, max: self.max_frame });
        }
        let stream = self
            .writers
            .get_mut(&to.wire_tag())
            .unwrap_or_else(|| panic!("{} has no stream to {to}", self.me));
        stream.write_all(&frame)?;
        self.sent.record(self.me, to, frame.len());
        Ok(())
    }

    /// Blocks for the next message from any peer.
    ///
    /// A single peer hanging up is not an error: sessions tear down in
    /// stages and the messages this party still expects come from peers
    /// that are still open. Only a fully closed mesh fails the call.
    pub fn recv(&mut self, timeout: Duration) -> Result<(PartyId, ProtocolMessage), TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if self.open_peers == 0 {
                return Err(TransportError::AllPeersClosed);
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(remaining) {
                Ok(InboxItem::Msg(from, msg)) => {
                    self.received.record(from, self.me, 4 + super::HEADER_LEN + msg.payload.len());
                    return Ok((from, msg));
                }
                Ok(InboxItem::Closed) => self.open_peers -= 1,
                Ok(InboxItem::Broken(e)) => return Err(e),
                Err(RecvTimeoutError::Timeout) => return Err(TransportError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::AllPeersClosed),
            }
        }
    }

    /// Frames this endpoint has written, by destination.
    pub fn sent_counters(&self) -> &CommsCounters {
        &self.sent
    }

    /// Frames this endpoint has consumed, by origin.
    pub fn received_counters(&self) -> &CommsCounters {
        &self.received
    }

    /// Closes write sides and joins reader threads.
    pub fn shutdown(mut self) {
        for (_, w) in self.writers.drain() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        for h in self.readers.drain(..) {
            let _ = h.join();
        }
    }
}

fn spawn_reader(
    peer: PartyId,
    mut stream: TcpStream,
    tx: Sender<InboxItem>,
    max_frame: usize,
) -> JoinHandle<()> {
    std::thread::spawn(move || loop {
        match read_frame(&mut stream, max_frame) {
            Ok(msg) => {
                if tx.send(InboxItem::Msg(peer, msg)).is_err() {
                    return;
                }
            }
            Err(TransportError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                let _ = tx.send(InboxItem::Closed);
                return;
            }
            Err(e) => {
                let _ = tx.send(InboxItem::Broken(e));
                return;
            }
        }
    })
}

/// Reads exactly one frame from a stream.
pub fn read_frame(stream: &mut impl Read, max_frame: usize) -> Result<ProtocolMessage, TransportError> {
    let mut len_bytes = [0u8; 4];
    stream.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes) as usize;
    if len > max_frame {
        return Err(TransportError::FrameTooLarge { len, max: max_frame });
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    let mut whole = Vec::with_capacity(4 + len);
    whole.extend_from_slice(&len_bytes);
    whole.extend_from_slice(&body);
    let (msg, _) = decode_frame(&whole, max_frame)?;
    Ok(msg)
}

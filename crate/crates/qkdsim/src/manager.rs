//! The QKD manager: binds the two endpoints of a link to their shared
//! pair of key buffers, reserves keys on both sides in lockstep, invokes
//! the crypto pipeline, and dispatches delivered frames by magic.
//!
//! Cross-node buffer access inside the send path is a deliberate
//! simulation shortcut: reservation is modeled as synchronous and
//! mirrored rather than as a signaling protocol.

use std::fmt;

use thiserror::Error;

use crate::capture::{OccupancyEvent, OccupancySample, Recorder, TraceEvent};
use crate::charging::{self, ProtocolError, ADDKEY_MAGIC};
use crate::crypto::{
    process_incoming, process_outgoing, AlgSelection, AppPacket, CryptoError, QkdHeader,
    ReservedKeys, QKD_MAGIC, TRANSPORT_HEADER_LEN,
};
use crate::engine::SimTime;
use crate::keybuffer::{BufferParams, KeyBuffer, KeyBufferError, KeyId};

/// Identifier of one protected link (a node pair with shared buffers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Propagation model of the classical channel carrying both ADDKEY and
/// QKD1 frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalChannel {
    pub delay: SimTime,
    pub drop_probability: f64,
}

/// Frame classification by leading magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Qkd,
    AddKey,
    Unknown,
}

pub fn classify_frame(frame: &[u8]) -> FrameKind {
    if frame.starts_with(&QKD_MAGIC) {
        FrameKind::Qkd
    } else if frame.starts_with(&ADDKEY_MAGIC) {
        FrameKind::AddKey
    } else {
        FrameKind::Unknown
    }
}

/// Per-link transmission counters, split by frame kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub qkd_sent: u64,
    pub qkd_dropped: u64,
    pub addkey_sent: u64,
    pub addkey_dropped: u64,
    pub unknown_frames: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SendError {
    #[error("insufficient key material at node {node}: requested {requested} bytes, {available} available")]
    Insufficient { node: usize, requested: u64, available: u64 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Outcome of delivering one frame to its receiving endpoint.
#[derive(Debug, PartialEq, Eq)]
pub enum Delivered {
    Packet { header: QkdHeader, packet: AppPacket },
    KeyMaterial { accepted: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeliverError {
    #[error("frame with unknown magic")]
    UnknownFrame,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

enum KeyUse {
    Encryption,
    Authentication,
}

/// One link's association: endpoints, channel model, algorithms, the two
/// mirrored buffers, and the MessageID counter for QKD1 frames.
pub struct LinkState {
    pub id: LinkId,
    pub channel: ClassicalChannel,
    pub algs: AlgSelection,
    endpoints: [usize; 2],
    buffers: [KeyBuffer; 2],
    next_message_id: u32,
    pub stats: LinkStats,
}

impl LinkState {
    pub fn new(
        id: LinkId,
        channel: ClassicalChannel,
        algs: AlgSelection,
        endpoints: [usize; 2],
        params: BufferParams,
    ) -> Self {
        LinkState {
            id,
            channel,
            algs,
            endpoints,
            buffers: [KeyBuffer::new(params), KeyBuffer::new(params)],
            next_message_id: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn endpoints(&self) -> [usize; 2] {
        self.endpoints
    }

    pub fn peer_of(&self, node: usize) -> usize {
        self.endpoints[1 - self.side(node)]
    }

    fn side(&self, node: usize) -> usize {
        if node == self.endpoints[0] {
            0
        } else if node == self.endpoints[1] {
            1
        } else {
            panic!("node {node} is not an endpoint of link {}", self.id);
        }
    }

    pub fn buffer(&self, node: usize) -> &KeyBuffer {
        &self.buffers[self.side(node)]
    }

    pub fn buffer_mut(&mut self, node: usize) -> &mut KeyBuffer {
        let side = self.side(node);
        &mut self.buffers[side]
    }

    /// Both buffers at once, in endpoint order. Needed when a single
    /// operation (the shared initial fill) must touch the two ends together.
    pub fn buffers_mut(&mut self) -> (&mut KeyBuffer, &mut KeyBuffer) {
        let [a, b] = &mut self.buffers;
        (a, b)
    }

    pub fn next_message_id(&self) -> u32 {
        self.next_message_id
    }

    /// Sends one application packet: mirrored reservation on both buffers
    /// (encryption key first, then authentication key), then the crypto
    /// pipeline against the sender's buffer. Returns the wire frame; the
    /// caller models the channel (delay, drops).
    ///
    /// Reservation is atomic across the two buffers: if any of the up to
    /// four reservations fails, the ones already made are rolled back in
    /// reverse order and nothing is emitted.
    pub fn send_packet(
        &mut self,
        now: SimTime,
        sender: usize,
        packet: &AppPacket,
        recorder: &mut Recorder,
    ) -> Result<Vec<u8>, SendError> {
        let local = self.side(sender);
        let peer = 1 - local;
        let plaintext_len = TRANSPORT_HEADER_LEN + packet.payload.len();

        recorder.trace(
            now,
            sender as i64,
            TraceEvent::EncryptionMode { mode: self.algs.encryption.wire_id() },
        );
        recorder.trace(
            now,
            sender as i64,
            TraceEvent::AuthenticationMode { mode: self.algs.authentication.wire_id() },
        );

        let mut wants: Vec<(KeyUse, u64)> = Vec::new();
        match self.algs.encryption.key_len(plaintext_len) {
            0 => {}
            n => wants.push((KeyUse::Encryption, n as u64)),
        }
        match self.algs.authentication.key_len() {
            0 => {}
            n => wants.push((KeyUse::Authentication, n as u64)),
        }

        // Reserve local-then-peer per key; undo everything on failure.
        let mut done: Vec<(usize, KeyId, u64)> = Vec::new();
        let mut keys = ReservedKeys { enc: None, auth: None };
        for (usage, size) in &wants {
            let mut pair = [KeyId(0), KeyId(0)];
            for &side in &[local, peer] {
                match self.buffers[side].reserve_key(*size) {
                    Ok(id) => {
                        pair[if side == local { 0 } else { 1 }] = id;
                        done.push((side, id, *size));
                    }
                    Err(KeyBufferError::InsufficientMaterial { requested, available }) => {
                        recorder.trace(
                            now,
                            self.endpoints[side] as i64,
                            TraceEvent::ReserveFailed { requested, available },
                        );
                        for (s, id, _) in done.into_iter().rev() {
                            self.buffers[s].unreserve(id).expect("rollback in reverse order");
                        }
                        return Err(SendError::Insufficient {
                            node: self.endpoints[side],
                            requested,
                            available,
                        });
                    }
                    Err(other) => unreachable!("reserve_key: {other}"),
                }
            }
            debug_assert_eq!(pair[0], pair[1], "mirrored buffers assign equal ids");
            match usage {
                KeyUse::Encryption => keys.enc = Some(pair[0]),
                KeyUse::Authentication => keys.auth = Some(pair[0]),
            }
        }

        // All reservations committed: emit their trace lines and samples,
        // reconstructing each intermediate occupancy.
        let mut remaining = [0u64; 2];
        for (side, _, size) in &done {
            remaining[*side] += size;
        }
        for (side, id, size) in &done {
            remaining[*side] -= size;
            recorder.trace(
                now,
                self.endpoints[*side] as i64,
                TraceEvent::ReserveKey { id: *id, size: *size },
            );
            recorder.occupancy(OccupancySample {
                time: now,
                node: self.endpoints[*side],
                link: self.id,
                m_current: self.buffers[*side].m_current() + remaining[*side],
                event: OccupancyEvent::Reserve,
            });
        }
        for side in [local, peer] {
            if self.buffers[side].below_min() {
                recorder.trace(
                    now,
                    self.endpoints[side] as i64,
                    TraceEvent::BelowMin {
                        m_current: self.buffers[side].m_current(),
                        min: self.buffers[side].params().min_bytes,
                    },
                );
            }
        }

        let message_id = self.next_message_id;
        let frame = process_outgoing(
            packet,
            self.algs,
            message_id,
            keys,
            &mut self.buffers[local],
            recorder,
            now,
            sender as i64,
        )?;
        self.next_message_id += 1;
        Ok(frame)
    }

    /// Dispatches one delivered frame by magic: QKD1 frames go through
    /// verification and decryption, ADDKEY frames feed the receiving
    /// buffer. The caller records the frame in the capture and turns
    /// errors into run incidents.
    pub fn deliver(
        &mut self,
        now: SimTime,
        receiver: usize,
        frame: &[u8],
        recorder: &mut Recorder,
    ) -> Result<Delivered, DeliverError> {
        recorder.trace(
            now,
            receiver as i64,
            TraceEvent::FrameDelivered { size: frame.len() as u64 },
        );
        let side = self.side(receiver);
        match classify_frame(frame) {
            FrameKind::Qkd => {
                let (header, packet) = process_incoming(
                    frame,
                    &mut self.buffers[side],
                    recorder,
                    now,
                    receiver as i64,
                )?;
                Ok(Delivered::Packet { header, packet })
            }
            FrameKind::AddKey => {
                let accepted = charging::handle_addkey(
                    frame,
                    now,
                    receiver,
                    self.id,
                    &mut self.buffers[side],
                    recorder,
                )?;
                Ok(Delivered::KeyMaterial { accepted })
            }
            FrameKind::Unknown => Err(DeliverError::UnknownFrame),
        }
    }
}

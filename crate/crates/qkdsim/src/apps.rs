//! Send/Receive applications: deterministic synthetic traffic and
//! end-to-end integrity accounting. Payloads are a pure function of
//! (pattern, packet_id), so the receiver verifies deliveries without any
//! side channel to the sender.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::AppPacket;
use crate::engine::SimTime;
use crate::entropy::{derive_seed, EntropySource};

/// How payload bytes are derived from the packet id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PayloadFill {
    #[default]
    Sequential,
    FromSeed(u64),
}

/// Declarative traffic description for one sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficPattern {
    pub packet_count: u32,
    pub payload_size: u64,
    pub interval: SimTime,
    pub start_time: SimTime,
    #[serde(default)]
    pub payload_fill: PayloadFill,
}

/// The payload of packet `packet_id` under this pattern.
pub fn payload_for(pattern: &TrafficPattern, packet_id: u32) -> Vec<u8> {
    let size = pattern.payload_size as usize;
    if size == 0 {
        return Vec::new();
    }
    match pattern.payload_fill {
        PayloadFill::Sequential => {
            (0..size).map(|i| ((packet_id as usize + i) % 256) as u8).collect()
        }
        PayloadFill::FromSeed(seed) => {
            let mut source = EntropySource::deterministic(derive_seed(seed, packet_id as u64));
            source.generate_stream(size).expect("deterministic source never exhausts")
        }
    }
}

pub fn payload_digest(payload: &[u8]) -> [u8; 32] {
    Sha256::digest(payload).into()
}

/// Sender state: the next packet id advances only on successful sends, so
/// a blocked packet is retried under the same id at the next tick.
pub struct SendApp {
    pattern: TrafficPattern,
    src_addr: [u8; 4],
    dst_addr: [u8; 4],
    src_port: u16,
    dst_port: u16,
    next_packet_id: u32,
    sent: u32,
    blocked_attempts: u64,
    digests: BTreeMap<u32, [u8; 32]>,
}

impl SendApp {
    pub fn new(
        pattern: TrafficPattern,
        src_addr: [u8; 4],
        dst_addr: [u8; 4],
        src_port: u16,
        dst_port: u16,
    ) -> Self {
        SendApp {
            pattern,
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            next_packet_id: 0,
            sent: 0,
            blocked_attempts: 0,
            digests: BTreeMap::new(),
        }
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }

    pub fn packets_remaining(&self) -> bool {
        self.sent < self.pattern.packet_count
    }

    /// The packet for the current id. Does not advance state; call
    /// [`SendApp::record_sent`] once the manager accepted it.
    pub fn next_packet(&self) -> AppPacket {
        AppPacket {
            src_addr: self.src_addr,
            dst_addr: self.dst_addr,
            src_port: self.src_port,
            dst_port: self.dst_port,
            packet_id: self.next_packet_id,
            payload: payload_for(&self.pattern, self.next_packet_id),
        }
    }

    pub fn record_sent(&mut self, packet: &AppPacket) {
        debug_assert_eq!(packet.packet_id, self.next_packet_id);
        self.digests.insert(packet.packet_id, payload_digest(&packet.payload));
        self.next_packet_id += 1;
        self.sent += 1;
    }

    pub fn record_blocked(&mut self) {
        self.blocked_attempts += 1;
    }

    pub fn sent(&self) -> u32 {
        self.sent
    }

    pub fn blocked_attempts(&self) -> u64 {
        self.blocked_attempts
    }

    /// Digests of every payload handed to the manager, by packet id.
    pub fn digests(&self) -> &BTreeMap<u32, [u8; 32]> {
        &self.digests
    }
}

/// Receiver state: verifies each delivery against the generator output
/// for its packet id and keeps the three outcome counters.
pub struct RecvApp {
    pattern: TrafficPattern,
    delivered: u64,
    corrupted: u64,
    reordered: u64,
    next_expected: u32,
}

impl RecvApp {
    pub fn new(pattern: TrafficPattern) -> Self {
        RecvApp { pattern, delivered: 0, corrupted: 0, reordered: 0, next_expected: 0 }
    }

    /// Accounts for one delivered packet; returns whether the payload was
    /// intact. Mismatches are counted, never thrown.
    pub fn handle(&mut self, packet: &AppPacket) -> bool {
        let expected = payload_digest(&payload_for(&self.pattern, packet.packet_id));
        let intact = payload_digest(&packet.payload) == expected;
        if intact {
            self.delivered += 1;
        } else {
            self.corrupted += 1;
        }
        if packet.packet_id != self.next_expected {
            self.reordered += 1;
        }
        self.next_expected = self.next_expected.max(packet.packet_id + 1);
        intact
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn corrupted(&self) -> u64 {
        self.corrupted
    }

    pub fn reordered(&self) -> u64 {
        self.reordered
    }
}

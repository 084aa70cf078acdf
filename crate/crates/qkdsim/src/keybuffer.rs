//! Two-tier key store shared by the endpoints of one protected link.
//!
//! Tier one is a bounded FIFO queue of raw key bytes; its length is the
//! occupancy `m_current`. Tier two is the key database: reservation moves
//! a FIFO prefix out of the queue under a fresh `KeyId`, and consumers
//! later fetch and delete by id. Single-use hygiene is enforced by
//! deletion, not by access counting.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sizing parameters of one buffer, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferParams {
    pub min_bytes: u64,
    pub max_bytes: u64,
    pub threshold_bytes: u64,
    /// Material present at scenario start, before any charging runs.
    #[serde(default)]
    pub initial_bytes: u64,
}

impl BufferParams {
    /// Field-order invariant: `min <= threshold <= max`, `initial <= max`.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.min_bytes > self.threshold_bytes {
            problems.push(format!(
                "min_bytes ({}) exceeds threshold_bytes ({})",
                self.min_bytes, self.threshold_bytes
            ));
        }
        if self.threshold_bytes > self.max_bytes {
            problems.push(format!(
                "threshold_bytes ({}) exceeds max_bytes ({})",
                self.threshold_bytes, self.max_bytes
            ));
        }
        if self.initial_bytes > self.max_bytes {
            problems.push(format!(
                "initial_bytes ({}) exceeds max_bytes ({})",
                self.initial_bytes, self.max_bytes
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Identifier of a reserved key. Ids are assigned from a per-buffer
/// counter starting at 0 and are never reassigned to later reservations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyBufferError {
    #[error("insufficient key material: requested {requested} bytes, {available} available")]
    InsufficientMaterial { requested: u64, available: u64 },
    #[error("no key with id {0} in the key database")]
    MissingKey(KeyId),
    #[error("key {0} is not the most recent reservation")]
    NotLastReservation(KeyId),
    #[error("cannot unreserve key {0}: buffer was modified after the reservation")]
    RollbackWindowClosed(KeyId),
}

/// One endpoint's view of a link's key material.
#[derive(Debug, Clone)]
pub struct KeyBuffer {
    params: BufferParams,
    raw: VecDeque<u8>,
    key_db: BTreeMap<KeyId, Vec<u8>>,
    next_key_id: u64,
    total_accepted: u64,
    deleted_bytes: u64,
    /// Only reservations with id >= this are rollback-eligible: adds and
    /// deletes advance the floor to the current id counter. Guarantees
    /// that an unreserve can never push occupancy past `max_bytes`.
    rollback_floor: u64,
}

impl KeyBuffer {
    /// Creates an empty buffer; initial material is added by the charging
    /// fill so that every byte enters through `add_key_material`.
    pub fn new(params: BufferParams) -> Self {
        KeyBuffer {
            params,
            raw: VecDeque::new(),
            key_db: BTreeMap::new(),
            next_key_id: 0,
            total_accepted: 0,
            deleted_bytes: 0,
            rollback_floor: 0,
        }
    }

    pub fn params(&self) -> &BufferParams {
        &self.params
    }

    /// Occupancy of the raw queue in bytes. Reserved keys no longer count.
    pub fn m_current(&self) -> u64 {
        self.raw.len() as u64
    }

    /// `(m_current, below_threshold)`; the threshold comparison is strict,
    /// so being exactly at the threshold does not trigger charging.
    pub fn occupancy(&self) -> (u64, bool) {
        let current = self.m_current();
        (current, current < self.params.threshold_bytes)
    }

    pub fn below_min(&self) -> bool {
        self.m_current() < self.params.min_bytes
    }

    /// Appends material to the queue, truncating at `max_bytes`. Returns
    /// the number of bytes accepted.
    pub fn add_key_material(&mut self, material: &[u8]) -> u64 {
        let room = (self.params.max_bytes - self.m_current()) as usize;
        let accepted = material.len().min(room);
        self.raw.extend(&material[..accepted]);
        self.total_accepted += accepted as u64;
        self.rollback_floor = self.next_key_id;
        accepted as u64
    }

    /// Moves the oldest `length` bytes into the key database under a new
    /// id. The prefix order of the queue is what keeps both endpoints'
    /// reservations byte-identical.
    pub fn reserve_key(&mut self, length: u64) -> Result<KeyId, KeyBufferError> {
        debug_assert!(length >= 1, "reservations are at least one byte");
        if length > self.m_current() {
            return Err(KeyBufferError::InsufficientMaterial {
                requested: length,
                available: self.m_current(),
            });
        }
        let bytes: Vec<u8> = self.raw.drain(..length as usize).collect();
        let id = KeyId(self.next_key_id);
        self.next_key_id += 1;
        self.key_db.insert(id, bytes);
        Ok(id)
    }

    /// Reverses the most recent reservation: the bytes return to the front
    /// of the queue and the id counter steps back, leaving no trace of the
    /// attempt. Valid only while `id` is the newest reservation and no add
    /// or delete has run since it was made; consecutive unreserves may
    /// peel back several reservations within that window.
    pub fn unreserve(&mut self, id: KeyId) -> Result<(), KeyBufferError> {
        if id.0 + 1 != self.next_key_id {
            return Err(KeyBufferError::NotLastReservation(id));
        }
        if id.0 < self.rollback_floor {
            return Err(KeyBufferError::RollbackWindowClosed(id));
        }
        let bytes = self.key_db.remove(&id).ok_or(KeyBufferError::MissingKey(id))?;
        for b in bytes.into_iter().rev() {
            self.raw.push_front(b);
        }
        self.next_key_id -= 1;
        debug_assert!(self.m_current() <= self.params.max_bytes);
        Ok(())
    }

    pub fn fetch_key(&self, id: KeyId) -> Result<&[u8], KeyBufferError> {
        self.key_db
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(KeyBufferError::MissingKey(id))
    }

    /// Removes a consumed key. Material never returns to the queue from
    /// here; deletion is what makes keys single-use.
    pub fn delete_key(&mut self, id: KeyId) -> Result<(), KeyBufferError> {
        let bytes = self.key_db.remove(&id).ok_or(KeyBufferError::MissingKey(id))?;
        self.deleted_bytes += bytes.len() as u64;
        self.rollback_floor = self.next_key_id;
        Ok(())
    }

    /// Bytes currently held by reservations in the key database.
    pub fn reserved_bytes(&self) -> u64 {
        self.key_db.values().map(|k| k.len() as u64).sum()
    }

    pub fn key_count(&self) -> usize {
        self.key_db.len()
    }

    pub fn next_key_id(&self) -> u64 {
        self.next_key_id
    }

    /// Lifetime total of bytes accepted by `add_key_material`.
    pub fn total_accepted(&self) -> u64 {
        self.total_accepted
    }

    /// Lifetime total of bytes removed through `delete_key`.
    pub fn deleted_bytes(&self) -> u64 {
        self.deleted_bytes
    }

    /// Copy of the oldest `count` queued bytes, for inspection.
    pub fn peek_raw(&self, count: usize) -> Vec<u8> {
        self.raw.iter().take(count).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> BufferParams {
        BufferParams {
            min_bytes: 10_000,
            max_bytes: 100_000,
            threshold_bytes: 51_200,
            initial_bytes: 51_000,
        }
    }

    fn filled(n: u64) -> KeyBuffer {
        let mut buf = KeyBuffer::new(params());
        let material: Vec<u8> = (0..n).map(|i| (i % 251) as u8).collect();
        assert_eq!(buf.add_key_material(&material), n);
        buf
    }

    #[test]
    fn params_ordering_is_validated() {
        assert!(params().validate().is_ok());
        let bad = BufferParams {
            min_bytes: 60_000,
            max_bytes: 50_000,
            threshold_bytes: 55_000,
            initial_bytes: 70_000,
        };
        let problems = bad.validate().unwrap_err();
        assert_eq!(problems.len(), 3);
    }

    #[test]
    fn add_truncates_at_max() {
        let mut buf = KeyBuffer::new(BufferParams {
            min_bytes: 0,
            max_bytes: 100,
            threshold_bytes: 50,
            initial_bytes: 0,
        });
        assert_eq!(buf.add_key_material(&[7; 80]), 80);
        assert_eq!(buf.add_key_material(&[9; 80]), 20);
        assert_eq!(buf.m_current(), 100);
        // The accepted prefix is the oldest part of the second block.
        assert_eq!(buf.peek_raw(100)[80..], [9; 20]);
    }

    #[test]
    fn reserve_assigns_sequential_ids_and_drains_fifo() {
        let mut buf = filled(51_000);
        let a = buf.reserve_key(720).unwrap();
        let b = buf.reserve_key(32).unwrap();
        assert_eq!((a, b), (KeyId(0), KeyId(1)));
        assert_eq!(buf.m_current(), 51_000 - 752);
        // First reservation holds the oldest bytes.
        let expected: Vec<u8> = (0..720).map(|i| (i % 251) as u8).collect();
        assert_eq!(buf.fetch_key(a).unwrap(), expected);
    }

    #[test]
    fn reserve_beyond_occupancy_fails_without_side_effects() {
        let mut buf = filled(100);
        let err = buf.reserve_key(101).unwrap_err();
        assert_eq!(
            err,
            KeyBufferError::InsufficientMaterial { requested: 101, available: 100 }
        );
        assert_eq!(buf.m_current(), 100);
        assert_eq!(buf.next_key_id(), 0);
    }

    #[test]
    fn fetch_is_repeatable_until_delete() {
        let mut buf = filled(100);
        let id = buf.reserve_key(16).unwrap();
        let first = buf.fetch_key(id).unwrap().to_vec();
        assert_eq!(buf.fetch_key(id).unwrap(), first);
        buf.delete_key(id).unwrap();
        assert_eq!(buf.fetch_key(id), Err(KeyBufferError::MissingKey(id)));
        assert_eq!(buf.delete_key(id), Err(KeyBufferError::MissingKey(id)));
    }

    #[test]
    fn unreserve_restores_queue_and_id_counter() {
        let mut buf = filled(100);
        let before = buf.peek_raw(100);
        let id = buf.reserve_key(30).unwrap();
        buf.unreserve(id).unwrap();
        assert_eq!(buf.peek_raw(100), before);
        assert_eq!(buf.next_key_id(), 0);
        assert_eq!(buf.key_count(), 0);
        // The same bytes come back under the reissued id.
        let again = buf.reserve_key(30).unwrap();
        assert_eq!(again, id);
        assert_eq!(buf.fetch_key(again).unwrap(), &before[..30]);
    }

    #[test]
    fn unreserve_rejects_non_latest_reservation() {
        let mut buf = filled(100);
        let a = buf.reserve_key(10).unwrap();
        let _b = buf.reserve_key(10).unwrap();
        assert_eq!(buf.unreserve(a), Err(KeyBufferError::NotLastReservation(a)));
    }

    #[test]
    fn unreserve_rejects_once_buffer_moved_on() {
        // An add may fill the freed space; restoring afterwards would
        // overflow the cap, so the rollback window closes.
        let mut buf = filled(100);
        let id = buf.reserve_key(10).unwrap();
        buf.add_key_material(&[1; 4]);
        assert_eq!(buf.unreserve(id), Err(KeyBufferError::RollbackWindowClosed(id)));

        // Deleting the newest key closes the window for it and everything
        // older.
        let mut buf = filled(100);
        let a = buf.reserve_key(10).unwrap();
        let b = buf.reserve_key(10).unwrap();
        buf.delete_key(b).unwrap();
        assert_eq!(buf.unreserve(a), Err(KeyBufferError::NotLastReservation(a)));
        let c = buf.reserve_key(10).unwrap();
        buf.delete_key(c).unwrap();
        assert_eq!(buf.unreserve(c), Err(KeyBufferError::RollbackWindowClosed(c)));

        // An add between reservations splits the window: the newer one
        // rolls back, the older one is sealed.
        let mut buf = filled(50);
        let a = buf.reserve_key(10).unwrap();
        buf.add_key_material(&[1; 60]);
        let b = buf.reserve_key(10).unwrap();
        buf.unreserve(b).unwrap();
        assert_eq!(buf.unreserve(a), Err(KeyBufferError::RollbackWindowClosed(a)));
        assert!(buf.m_current() <= buf.params().max_bytes);

        // Consecutive unreserves stay within one window.
        let mut buf = filled(100);
        let a = buf.reserve_key(10).unwrap();
        let b = buf.reserve_key(10).unwrap();
        buf.unreserve(b).unwrap();
        buf.unreserve(a).unwrap();
        assert_eq!(buf.m_current(), 100);
    }

    #[test]
    fn threshold_comparison_is_strict() {
        let p = BufferParams {
            min_bytes: 0,
            max_bytes: 1_000,
            threshold_bytes: 500,
            initial_bytes: 0,
        };
        let mut buf = KeyBuffer::new(p);
        buf.add_key_material(&vec![0; 500]);
        assert_eq!(buf.occupancy(), (500, false));
        let id = buf.reserve_key(1).unwrap();
        assert_eq!(buf.occupancy(), (499, true));
        buf.delete_key(id).unwrap();
    }

    proptest! {
        /// Conservation: every accepted byte is queued, reserved, or deleted.
        #[test]
        fn accepted_bytes_are_conserved(ops in proptest::collection::vec(0u8..4, 1..200)) {
            let mut buf = KeyBuffer::new(BufferParams {
                min_bytes: 0,
                max_bytes: 4_096,
                threshold_bytes: 2_048,
                initial_bytes: 0,
            });
            let mut live: Vec<KeyId> = Vec::new();
            let mut floor = 0u64;
            let mut rng = crate::entropy::SplitMix64::new(99);
            for op in ops {
                match op {
                    0 => {
                        let n = (rng.next_u64() % 512 + 1) as usize;
                        let material: Vec<u8> = (0..n).map(|_| rng.next_u64() as u8).collect();
                        buf.add_key_material(&material);
                        floor = buf.next_key_id();
                    }
                    1 => {
                        let want = rng.next_u64() % 128 + 1;
                        if let Ok(id) = buf.reserve_key(want) {
                            live.push(id);
                        }
                    }
                    2 => {
                        if !live.is_empty() {
                            let idx = (rng.next_u64() as usize) % live.len();
                            let id = live.swap_remove(idx);
                            buf.delete_key(id).unwrap();
                            floor = buf.next_key_id();
                        }
                    }
                    _ => {
                        if let Some(&id) = live.last() {
                            if id.0 + 1 == buf.next_key_id() {
                                let eligible = id.0 >= floor;
                                let undone = buf.unreserve(id);
                                prop_assert_eq!(undone.is_ok(), eligible);
                                if eligible {
                                    live.pop();
                                }
                            }
                        }
                    }
                }
                prop_assert!(buf.m_current() <= buf.params().max_bytes);
                prop_assert_eq!(
                    buf.total_accepted(),
                    buf.m_current() + buf.reserved_bytes() + buf.deleted_bytes()
                );
            }
        }

        /// Mirroring: two buffers fed identical material and reservation
        /// sizes hold byte-identical keys under identical ids.
        #[test]
        fn lockstep_buffers_stay_identical(
            seed in any::<u64>(),
            sizes in proptest::collection::vec(1u64..64, 1..40),
        ) {
            let p = BufferParams {
                min_bytes: 0,
                max_bytes: 16_384,
                threshold_bytes: 8_192,
                initial_bytes: 0,
            };
            let mut local = KeyBuffer::new(p);
            let mut peer = KeyBuffer::new(p);
            let mut source = crate::entropy::EntropySource::deterministic(seed);
            let material = source.generate_stream(8_192).unwrap();
            local.add_key_material(&material);
            peer.add_key_material(&material);

            for len in sizes {
                let a = local.reserve_key(len).unwrap();
                let b = peer.reserve_key(len).unwrap();
                prop_assert_eq!(a, b);
                prop_assert_eq!(local.fetch_key(a).unwrap(), peer.fetch_key(b).unwrap());
            }
            prop_assert_eq!(local.m_current(), peer.m_current());
        }

        /// Reservations drain the queue strictly front-first.
        #[test]
        fn reservations_consume_fifo_prefixes(sizes in proptest::collection::vec(1u64..50, 1..20)) {
            let total: u64 = sizes.iter().sum();
            let material: Vec<u8> = (0..total).map(|i| (i % 256) as u8).collect();
            let mut buf = KeyBuffer::new(BufferParams {
                min_bytes: 0,
                max_bytes: total,
                threshold_bytes: 0,
                initial_bytes: 0,
            });
            buf.add_key_material(&material);
            let mut offset = 0usize;
            for len in sizes {
                let id = buf.reserve_key(len).unwrap();
                prop_assert_eq!(
                    buf.fetch_key(id).unwrap(),
                    &material[offset..offset + len as usize]
                );
                offset += len as usize;
            }
        }
    }
}

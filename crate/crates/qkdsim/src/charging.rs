//! The simulated quantum channel: a Primary/Secondary charging pair. The
//! Primary polls its buffer, generates key material when occupancy falls
//! below the threshold, installs it locally, and replicates it to the
//! Secondary in ADDKEY messages over the classical link.

use thiserror::Error;

use crate::capture::{OccupancyEvent, OccupancySample, Recorder, TraceEvent, GLOBAL_NODE};
use crate::engine::SimTime;
use crate::entropy::{EntropyError, EntropySource};
use crate::keybuffer::KeyBuffer;
use crate::manager::LinkId;

/// Leading bytes of every key-replication message.
pub const ADDKEY_MAGIC: [u8; 6] = *b"ADDKEY";

/// Framing bytes around an ADDKEY payload (magic + length field).
pub const ADDKEY_OVERHEAD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Primary,
    Secondary,
}

/// Charging parameters for one end of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChargingConfig {
    pub role: Role,
    /// Bytes generated per ADDKEY, before capping at buffer free space.
    pub block_size: u64,
    /// Period of the Primary's threshold poll.
    pub check_interval: SimTime,
    pub link: LinkId,
}

/// Wire message replicating raw key material: 6-byte magic `ADDKEY`,
/// 4-byte big-endian payload length, payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddKeyMessage {
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("frame of {0} bytes is too short for an ADDKEY message")]
    TooShort(usize),
    #[error("bad ADDKEY magic {0:02X?}")]
    BadMagic([u8; 6]),
    #[error("ADDKEY declares {declared} payload bytes but carries {actual}")]
    PayloadLengthMismatch { declared: u32, actual: usize },
}

impl AddKeyMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ADDKEY_OVERHEAD + self.payload.len());
        out.extend_from_slice(&ADDKEY_MAGIC);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<AddKeyMessage, ProtocolError> {
        if frame.len() < ADDKEY_OVERHEAD {
            return Err(ProtocolError::TooShort(frame.len()));
        }
        let magic: [u8; 6] = frame[0..6].try_into().expect("sized slice");
        if magic != ADDKEY_MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        let declared = u32::from_be_bytes(frame[6..10].try_into().expect("sized slice"));
        let actual = frame.len() - ADDKEY_OVERHEAD;
        if declared as usize != actual {
            return Err(ProtocolError::PayloadLengthMismatch { declared, actual });
        }
        Ok(AddKeyMessage { payload: frame[ADDKEY_OVERHEAD..].to_vec() })
    }

    pub fn wire_len(&self) -> usize {
        ADDKEY_OVERHEAD + self.payload.len()
    }
}

/// Primary-side charging state: the poll configuration plus the entropy
/// source that stands in for the quantum channel.
pub struct ChargingApp {
    config: ChargingConfig,
    entropy: EntropySource,
}

impl ChargingApp {
    pub fn new(config: ChargingConfig, entropy: EntropySource) -> Self {
        ChargingApp { config, entropy }
    }

    pub fn config(&self) -> &ChargingConfig {
        &self.config
    }

    pub fn bytes_served(&self) -> u64 {
        self.entropy.bytes_served()
    }

    /// One threshold poll. When occupancy is strictly below the threshold,
    /// generates `min(block_size, max - m_current)` bytes, installs them
    /// locally, and returns the ADDKEY frame to transmit; otherwise `None`.
    /// The caller owns timer rescheduling.
    pub fn check(
        &mut self,
        now: SimTime,
        node: usize,
        buffer: &mut KeyBuffer,
        recorder: &mut Recorder,
    ) -> Result<Option<Vec<u8>>, EntropyError> {
        debug_assert_eq!(self.config.role, Role::Primary, "only the Primary polls");
        let (current, below) = buffer.occupancy();
        if !below {
            return Ok(None);
        }
        let block = self.config.block_size.min(buffer.params().max_bytes - current);
        recorder.trace(now, node as i64, TraceEvent::GenerateStream { requested: block });
        let material = self.entropy.generate_stream(block as usize)?;
        let accepted = buffer.add_key_material(&material);
        debug_assert_eq!(accepted, block, "block was capped at free space");
        recorder.trace(
            now,
            node as i64,
            TraceEvent::AddKeyMaterial { size: block, accepted, m_current: buffer.m_current() },
        );
        recorder.occupancy(OccupancySample {
            time: now,
            node,
            link: self.config.link,
            m_current: buffer.m_current(),
            event: OccupancyEvent::Add,
        });
        let message = AddKeyMessage { payload: material };
        recorder.trace(
            now,
            node as i64,
            TraceEvent::SendAddKey { wire_size: message.wire_len() as u64 },
        );
        Ok(Some(message.encode()))
    }

    /// Installs the pre-shared starting material: one entropy draw added
    /// to both buffers so their contents begin identical. Amount 0 is a
    /// configured no-op.
    pub fn initial_fill(
        &mut self,
        now: SimTime,
        amount: u64,
        primary: (usize, &mut KeyBuffer),
        secondary: (usize, &mut KeyBuffer),
        recorder: &mut Recorder,
    ) -> Result<(), EntropyError> {
        if amount == 0 {
            return Ok(());
        }
        recorder.trace(now, GLOBAL_NODE, TraceEvent::InitialFill { amount });
        recorder.trace(now, GLOBAL_NODE, TraceEvent::GenerateStream { requested: amount });
        let material = self.entropy.generate_stream(amount as usize)?;
        for (node, buffer) in [primary, secondary] {
            let accepted = buffer.add_key_material(&material);
            recorder.trace(
                now,
                node as i64,
                TraceEvent::AddKeyMaterial {
                    size: amount,
                    accepted,
                    m_current: buffer.m_current(),
                },
            );
            recorder.occupancy(OccupancySample {
                time: now,
                node,
                link: self.config.link,
                m_current: buffer.m_current(),
                event: OccupancyEvent::Init,
            });
        }
        Ok(())
    }
}

/// Secondary-side ingestion of one ADDKEY frame: decode and add the
/// payload to the receiving buffer. Returns the bytes accepted.
pub fn handle_addkey(
    frame: &[u8],
    now: SimTime,
    node: usize,
    link: LinkId,
    buffer: &mut KeyBuffer,
    recorder: &mut Recorder,
) -> Result<u64, ProtocolError> {
    let message = AddKeyMessage::decode(frame)?;
    let size = message.payload.len() as u64;
    recorder.trace(now, node as i64, TraceEvent::HandleAddKey { payload: size });
    let accepted = buffer.add_key_material(&message.payload);
    recorder.trace(
        now,
        node as i64,
        TraceEvent::AddKeyMaterial { size, accepted, m_current: buffer.m_current() },
    );
    recorder.occupancy(OccupancySample {
        time: now,
        node,
        link,
        m_current: buffer.m_current(),
        event: OccupancyEvent::Add,
    });
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keybuffer::BufferParams;

    fn app(block_size: u64) -> ChargingApp {
        ChargingApp::new(
            ChargingConfig {
                role: Role::Primary,
                block_size,
                check_interval: SimTime::from_millis(100),
                link: LinkId(0),
            },
            EntropySource::deterministic(42),
        )
    }

    fn buffer(initial: u64) -> KeyBuffer {
        let mut buf = KeyBuffer::new(BufferParams {
            min_bytes: 10_000,
            max_bytes: 100_000,
            threshold_bytes: 51_200,
            initial_bytes: initial,
        });
        if initial > 0 {
            let material: Vec<u8> = (0..initial).map(|i| (i % 199) as u8).collect();
            buf.add_key_material(&material);
        }
        buf
    }

    #[test]
    fn addkey_roundtrips_with_fixed_overhead() {
        let message = AddKeyMessage { payload: vec![0x5A; 500] };
        let wire = message.encode();
        assert_eq!(wire.len(), 510);
        assert_eq!(&wire[0..6], b"ADDKEY");
        assert_eq!(&wire[6..10], &500u32.to_be_bytes());
        assert_eq!(AddKeyMessage::decode(&wire).unwrap(), message);
    }

    #[test]
    fn decode_rejects_malformed_frames() {
        assert_eq!(AddKeyMessage::decode(b"ADDKE"), Err(ProtocolError::TooShort(5)));

        let mut bad = AddKeyMessage { payload: vec![1, 2, 3] }.encode();
        bad[2] = b'X';
        assert_eq!(
            AddKeyMessage::decode(&bad),
            Err(ProtocolError::BadMagic(*b"ADXKEY"))
        );

        let mut short = AddKeyMessage { payload: vec![0; 500] }.encode();
        short.pop();
        assert_eq!(
            AddKeyMessage::decode(&short),
            Err(ProtocolError::PayloadLengthMismatch { declared: 500, actual: 499 })
        );
    }

    #[test]
    fn check_below_threshold_charges_and_emits_addkey() {
        let mut app = app(500);
        let mut buf = buffer(50_960);
        let mut rec = Recorder::new();
        let frame = app
            .check(SimTime::from_secs(2), 0, &mut buf, &mut rec)
            .unwrap()
            .expect("below threshold generates a block");
        assert_eq!(buf.m_current(), 51_460);
        assert_eq!(frame.len(), 510);
        // The replicated payload equals the bytes just installed locally.
        let decoded = AddKeyMessage::decode(&frame).unwrap();
        let tail: Vec<u8> = buf.peek_raw(51_460)[50_960..].to_vec();
        assert_eq!(decoded.payload, tail);
    }

    #[test]
    fn check_at_or_above_threshold_is_idle() {
        let mut app = app(500);
        let mut rec = Recorder::new();
        let mut at = buffer(51_200);
        assert!(app.check(SimTime::ZERO, 0, &mut at, &mut rec).unwrap().is_none());
        assert_eq!(at.m_current(), 51_200);
        assert_eq!(app.bytes_served(), 0, "no entropy drawn while idle");
    }

    #[test]
    fn block_is_capped_at_free_space() {
        let mut app = app(500);
        let mut buf = KeyBuffer::new(BufferParams {
            min_bytes: 0,
            max_bytes: 100_000,
            threshold_bytes: 100_000,
            initial_bytes: 0,
        });
        buf.add_key_material(&vec![0; 99_900]);
        let mut rec = Recorder::new();
        let frame = app.check(SimTime::ZERO, 0, &mut buf, &mut rec).unwrap().unwrap();
        assert_eq!(buf.m_current(), 100_000);
        assert_eq!(AddKeyMessage::decode(&frame).unwrap().payload.len(), 100);
    }

    #[test]
    fn initial_fill_installs_identical_material_in_both_buffers() {
        let mut app = app(500);
        let mut a = buffer(0);
        let mut b = buffer(0);
        let mut rec = Recorder::new();
        app.initial_fill(SimTime::ZERO, 51_000, (0, &mut a), (1, &mut b), &mut rec).unwrap();
        assert_eq!(a.m_current(), 51_000);
        assert_eq!(b.m_current(), 51_000);
        assert_eq!(a.peek_raw(51_000), b.peek_raw(51_000));
        assert_eq!(rec.samples().len(), 2);
        assert!(rec.samples().iter().all(|s| s.event == OccupancyEvent::Init));
    }

    #[test]
    fn initial_fill_zero_is_skipped() {
        let mut app = app(500);
        let mut a = buffer(0);
        let mut b = buffer(0);
        let mut rec = Recorder::new();
        app.initial_fill(SimTime::ZERO, 0, (0, &mut a), (1, &mut b), &mut rec).unwrap();
        assert_eq!(a.m_current(), 0);
        assert!(rec.trace_records().is_empty());
    }

    #[test]
    fn initial_fill_truncates_at_max() {
        let mut app = app(500);
        let mut a = buffer(0);
        let mut b = buffer(0);
        let mut rec = Recorder::new();
        app.initial_fill(SimTime::ZERO, 200_000, (0, &mut a), (1, &mut b), &mut rec).unwrap();
        assert_eq!(a.m_current(), 100_000);
        assert_eq!(b.m_current(), 100_000);
    }

    #[test]
    fn handle_addkey_grows_the_receiving_buffer() {
        let mut buf = buffer(50_960);
        let mut rec = Recorder::new();
        let frame = AddKeyMessage { payload: vec![7; 500] }.encode();
        let accepted = handle_addkey(
            &frame,
            SimTime::from_secs(2),
            1,
            LinkId(0),
            &mut buf,
            &mut rec,
        )
        .unwrap();
        assert_eq!(accepted, 500);
        assert_eq!(buf.m_current(), 51_460);
    }

    #[test]
    fn handle_addkey_rejects_bad_frames_without_side_effects() {
        let mut buf = buffer(100);
        let mut rec = Recorder::new();
        let err = handle_addkey(
            b"ADKEYX____payload",
            SimTime::ZERO,
            1,
            LinkId(0),
            &mut buf,
            &mut rec,
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::BadMagic(_)));
        assert_eq!(buf.m_current(), 100);
    }
}

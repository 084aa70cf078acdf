//! Run observability: the event trace, buffer-occupancy CSV samples, and
//! a PCAP capture of every frame delivered over the classical channel.
//!
//! Records accumulate in memory during the run and are flushed to files
//! once at the end, so recording inside event handlers never performs
//! I/O and the in-memory log is directly inspectable by tests.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::engine::SimTime;
use crate::keybuffer::KeyId;
use crate::manager::LinkId;

/// Node index used in trace lines; `GLOBAL_NODE` marks lines that do not
/// belong to a single endpoint.
pub const GLOBAL_NODE: i64 = -1;

/// PCAP linktype for user-defined framing (USER0).
pub const LINKTYPE_USER0: u32 = 147;

const PCAP_MAGIC: u32 = 0xA1B2_C3D4;
const PCAP_SNAPLEN: u32 = 65_535;

/// Classic (non-ng) PCAP writer. Every field is written big-endian, so a
/// capture literally begins with the bytes `A1 B2 C3 D4` and readers
/// byte-swap as needed.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    /// Writes the 24-byte global header immediately; a capture closed with
    /// no records is exactly that header.
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(&PCAP_MAGIC.to_be_bytes())?;
        out.write_all(&2u16.to_be_bytes())?; // version major
        out.write_all(&4u16.to_be_bytes())?; // version minor
        out.write_all(&0i32.to_be_bytes())?; // thiszone
        out.write_all(&0u32.to_be_bytes())?; // sigfigs
        out.write_all(&PCAP_SNAPLEN.to_be_bytes())?;
        out.write_all(&LINKTYPE_USER0.to_be_bytes())?;
        Ok(PcapWriter { out })
    }

    /// Appends one record. The nanosecond clock is truncated to the
    /// microsecond resolution of the classic format.
    pub fn record(&mut self, time: SimTime, frame: &[u8]) -> io::Result<()> {
        let (secs, nanos) = time.split_secs();
        let included = frame.len().min(PCAP_SNAPLEN as usize);
        self.out.write_all(&(secs as u32).to_be_bytes())?;
        self.out.write_all(&(nanos / 1_000).to_be_bytes())?;
        self.out.write_all(&(included as u32).to_be_bytes())?;
        self.out.write_all(&(frame.len() as u32).to_be_bytes())?;
        self.out.write_all(&frame[..included])?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// What happened to an occupancy value, one of the three CSV event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyEvent {
    Init,
    Add,
    Reserve,
}

impl fmt::Display for OccupancyEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OccupancyEvent::Init => "Init",
            OccupancyEvent::Add => "Add",
            OccupancyEvent::Reserve => "Reserve",
        };
        f.write_str(s)
    }
}

/// One row of the occupancy CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancySample {
    pub time: SimTime,
    pub node: usize,
    pub link: LinkId,
    pub m_current: u64,
    pub event: OccupancyEvent,
}

/// Structured trace vocabulary. Each variant renders as
/// `Component:Operation detail...`, mirroring the key-management call it
/// records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    GenerateStream { requested: u64 },
    InitialFill { amount: u64 },
    AddKeyMaterial { size: u64, accepted: u64, m_current: u64 },
    ReserveKey { id: KeyId, size: u64 },
    ReserveFailed { requested: u64, available: u64 },
    BelowMin { m_current: u64, min: u64 },
    FetchKey { id: KeyId },
    DeleteKey { id: KeyId },
    EncryptionMode { mode: u16 },
    AuthenticationMode { mode: u16 },
    OutgoingFrame { packet_id: u32, message_id: u32, size: u64 },
    IncomingFrame { message_id: u32, size: u64 },
    DecryptionComplete { packet_id: u32 },
    SendAddKey { wire_size: u64 },
    HandleAddKey { payload: u64 },
    FrameDropped { size: u64 },
    FrameDelivered { size: u64 },
    UnknownFrame { size: u64 },
    AuthenticationFailed { message_id: u32 },
    MissingKey { id: KeyId },
    ProtocolError { detail: String },
    AppSend { packet_id: u32, payload: u64 },
    AppBlocked { packet_id: u32, requested: u64, available: u64 },
    AppReceived { packet_id: u32, intact: bool },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::GenerateStream { requested } => {
                write!(f, "QKDRandomGenerator:GenerateStream requesting {requested} bytes")
            }
            TraceEvent::InitialFill { amount } => {
                write!(f, "QKDCharging:InitialFill {amount} bytes")
            }
            TraceEvent::AddKeyMaterial { size, accepted, m_current } => {
                if size == accepted {
                    write!(
                        f,
                        "QKDBuffer:AddKeyMaterial size {size} -> m_current: {m_current}"
                    )
                } else {
                    write!(
                        f,
                        "QKDBuffer:AddKeyMaterial size {size} accepted {accepted} -> m_current: {m_current}"
                    )
                }
            }
            TraceEvent::ReserveKey { id, size } => {
                write!(f, "QKDBuffer:ReserveKeyMaterial KeyID {id} size {size}")
            }
            TraceEvent::ReserveFailed { requested, available } => {
                write!(
                    f,
                    "QKDBuffer:ReserveKeyMaterial failed: requested {requested} available {available}"
                )
            }
            TraceEvent::BelowMin { m_current, min } => {
                write!(f, "QKDBuffer:BelowMin m_current: {m_current} min: {min}")
            }
            TraceEvent::FetchKey { id } => write!(f, "QKDBuffer:FetchKeyByID KeyID {id}"),
            TraceEvent::DeleteKey { id } => write!(f, "QKDBuffer:DeleteKeyID KeyID {id}"),
            TraceEvent::EncryptionMode { mode } => {
                write!(f, "QKDCrypto:ProcessOutgoingPacket encryption mode {mode}")
            }
            TraceEvent::AuthenticationMode { mode } => {
                write!(f, "QKDCrypto:ProcessOutgoingPacket authentication mode {mode}")
            }
            TraceEvent::OutgoingFrame { packet_id, message_id, size } => {
                write!(
                    f,
                    "QKDCrypto:ProcessOutgoingPacket PacketID {packet_id} MessageID {message_id} frame {size} bytes"
                )
            }
            TraceEvent::IncomingFrame { message_id, size } => {
                write!(
                    f,
                    "QKDCrypto:ProcessIncomingPacket MessageID {message_id} frame {size} bytes"
                )
            }
            TraceEvent::DecryptionComplete { packet_id } => {
                write!(f, "QKDCrypto:ProcessIncomingPacket decryption completed PacketID {packet_id}")
            }
            TraceEvent::SendAddKey { wire_size } => {
                write!(f, "QKDCharging:SendAddKey wire size {wire_size} bytes")
            }
            TraceEvent::HandleAddKey { payload } => {
                write!(f, "QKDCharging:HandleAddKey payload {payload} bytes")
            }
            TraceEvent::FrameDropped { size } => {
                write!(f, "ClassicalChannel:Drop frame {size} bytes")
            }
            TraceEvent::FrameDelivered { size } => {
                write!(f, "QKDManager:Deliver frame {size} bytes")
            }
            TraceEvent::UnknownFrame { size } => {
                write!(f, "QKDManager:UnknownFrame {size} bytes discarded")
            }
            TraceEvent::AuthenticationFailed { message_id } => {
                write!(f, "QKDManager:AuthenticationFailure MessageID {message_id}")
            }
            TraceEvent::MissingKey { id } => write!(f, "QKDManager:MissingKey KeyID {id}"),
            TraceEvent::ProtocolError { detail } => {
                write!(f, "QKDCharging:ProtocolError {detail}")
            }
            TraceEvent::AppSend { packet_id, payload } => {
                write!(f, "SendApp:Send PacketID {packet_id} payload {payload} bytes")
            }
            TraceEvent::AppBlocked { packet_id, requested, available } => {
                write!(
                    f,
                    "SendApp:Blocked PacketID {packet_id} requested {requested} available {available}"
                )
            }
            TraceEvent::AppReceived { packet_id, intact } => {
                let status = if *intact { "intact" } else { "corrupted" };
                write!(f, "RecvApp:Received PacketID {packet_id} {status}")
            }
        }
    }
}

/// One rendered trace line: `+<secs>.<9-digit nanos>s <node> <event>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: i64,
    pub event: TraceEvent,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.node, self.event)
    }
}

/// A frame as it was delivered, for the PCAP capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub time: SimTime,
    pub link: LinkId,
    pub bytes: Vec<u8>,
}

/// Collects trace lines, occupancy samples, and delivered frames during a
/// run; [`Recorder::write_all`] flushes them to the three output files.
#[derive(Debug, Default)]
pub struct Recorder {
    trace: Vec<TraceRecord>,
    samples: Vec<OccupancySample>,
    frames: Vec<FrameRecord>,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder::default()
    }

    pub fn trace(&mut self, time: SimTime, node: i64, event: TraceEvent) {
        debug_assert!(self.trace.last().map_or(true, |r| r.time <= time));
        self.trace.push(TraceRecord { time, node, event });
    }

    pub fn occupancy(&mut self, sample: OccupancySample) {
        self.samples.push(sample);
    }

    /// Records a frame at its delivery time. Dropped frames are never
    /// offered, so they do not appear in the capture.
    pub fn frame(&mut self, time: SimTime, link: LinkId, bytes: Vec<u8>) {
        debug_assert!(self.frames.last().map_or(true, |r| r.time <= time));
        self.frames.push(FrameRecord { time, link, bytes });
    }

    pub fn trace_records(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_lines(&self) -> Vec<String> {
        self.trace.iter().map(|r| r.to_string()).collect()
    }

    pub fn samples(&self) -> &[OccupancySample] {
        &self.samples
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn write_trace(&self, mut out: impl Write) -> io::Result<()> {
        for record in &self.trace {
            writeln!(out, "{record}")?;
        }
        Ok(())
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "time_ns,node,link,m_current,event")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.time.as_nanos(),
                s.node,
                s.link,
                s.m_current,
                s.event
            )?;
        }
        Ok(())
    }

    pub fn write_pcap(&self, out: impl Write) -> io::Result<()> {
        let mut pcap = PcapWriter::new(out)?;
        for frame in &self.frames {
            pcap.record(frame.time, &frame.bytes)?;
        }
        pcap.finish()?;
        Ok(())
    }

    /// In-memory renderings, byte-identical to the files `write_all`
    /// produces. Used to compare runs without touching the filesystem.
    pub fn render_trace(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_trace(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn render_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn render_pcap(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_pcap(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Writes the three outputs, creating parent directories as needed.
    pub fn write_all(&self, trace: &Path, csv: &Path, pcap: &Path) -> io::Result<()> {
        for path in [trace, csv, pcap] {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
        }
        self.write_trace(BufWriter::new(File::create(trace)?))?;
        self.write_csv(BufWriter::new(File::create(csv)?))?;
        self.write_pcap(BufWriter::new(File::create(pcap)?))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_capture_is_exactly_the_global_header() {
        let mut buf = Vec::new();
        let writer = PcapWriter::new(&mut buf).unwrap();
        writer.finish().unwrap();
        assert_eq!(buf.len(), 24);
        assert_eq!(&buf[..4], &[0xA1, 0xB2, 0xC3, 0xD4]);
        assert_eq!(&buf[4..8], &[0, 2, 0, 4]); // version 2.4, big-endian
        assert_eq!(&buf[8..12], &[0; 4]); // thiszone
        assert_eq!(&buf[12..16], &[0; 4]); // sigfigs
        assert_eq!(&buf[16..20], &0xFFFFu32.to_be_bytes()); // snaplen
        assert_eq!(&buf[20..24], &147u32.to_be_bytes()); // linktype USER0
    }

    #[test]
    fn record_header_truncates_nanoseconds_to_microseconds() {
        let mut buf = Vec::new();
        let mut writer = PcapWriter::new(&mut buf).unwrap();
        let frame = [0xAB; 10];
        writer.record(SimTime::from_nanos(20_259_270_400), &frame).unwrap();
        writer.finish().unwrap();
        let rec = &buf[24..];
        assert_eq!(&rec[0..4], &20u32.to_be_bytes());
        assert_eq!(&rec[4..8], &259_270u32.to_be_bytes()); // 259270400 ns -> 259270 us
        assert_eq!(&rec[8..12], &10u32.to_be_bytes());
        assert_eq!(&rec[12..16], &10u32.to_be_bytes());
        assert_eq!(&rec[16..], &frame);
    }

    #[test]
    fn trace_lines_use_timestamp_node_event_layout() {
        let mut rec = Recorder::new();
        rec.trace(
            SimTime::from_nanos(20_256_000_000),
            0,
            TraceEvent::FetchKey { id: KeyId(19) },
        );
        rec.trace(
            SimTime::from_nanos(20_256_000_000),
            GLOBAL_NODE,
            TraceEvent::InitialFill { amount: 51_000 },
        );
        let lines = rec.trace_lines();
        assert_eq!(lines[0], "+20.256000000s 0 QKDBuffer:FetchKeyByID KeyID 19");
        assert_eq!(lines[1], "+20.256000000s -1 QKDCharging:InitialFill 51000 bytes");
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let mut rec = Recorder::new();
        rec.occupancy(OccupancySample {
            time: SimTime::from_secs(2),
            node: 1,
            link: LinkId(0),
            m_current: 51_460,
            event: OccupancyEvent::Add,
        });
        let mut out = Vec::new();
        rec.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "time_ns,node,link,m_current,event\n2000000000,1,0,51460,Add\n");
    }

    #[test]
    fn empty_recorder_outputs_are_headers_only() {
        let rec = Recorder::new();
        let mut trace = Vec::new();
        rec.write_trace(&mut trace).unwrap();
        assert!(trace.is_empty());

        let mut csv = Vec::new();
        rec.write_csv(&mut csv).unwrap();
        assert_eq!(csv, b"time_ns,node,link,m_current,event\n");

        let mut pcap = Vec::new();
        rec.write_pcap(&mut pcap).unwrap();
        assert_eq!(pcap.len(), 24);
    }
}

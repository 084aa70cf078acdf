//! Key-material sources: a seeded SplitMix64 generator for reproducible
//! runs, and a file-backed stream for replaying externally produced
//! randomness.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// SplitMix64 pseudo-random generator (Steele, Lea & Flood 2014).
///
/// Chosen for key-material synthesis because the entire stream is a pure
/// function of the 64-bit seed, so two endpoints configured with the same
/// seed derive identical material without exchanging it.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` using the top 53 bits of one output.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives an independent per-channel seed: one SplitMix64 step of
/// `master_seed ^ index`. Channels of one scenario never share a stream.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    SplitMix64::new(master_seed ^ index).next_u64()
}

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("external stream exhausted: requested {requested} bytes, {available} available")]
    Exhausted { requested: usize, available: usize },
    #[error("failed to read external entropy stream")]
    Io(#[from] io::Error),
}

enum Source {
    Deterministic {
        rng: SplitMix64,
        // Unconsumed tail of the last 64-bit word; pos == 8 means empty.
        buf: [u8; 8],
        pos: usize,
    },
    External {
        reader: BufReader<File>,
        path: PathBuf,
    },
}

/// Byte-stream source of key material.
///
/// The deterministic variant serializes each SplitMix64 output
/// little-endian and carries unconsumed bytes across calls, so the
/// concatenation of any sequence of requests equals one long stream:
/// request sizes never change the bytes produced.
pub struct EntropySource {
    source: Source,
    bytes_served: u64,
}

impl EntropySource {
    pub fn deterministic(seed: u64) -> Self {
        EntropySource {
            source: Source::Deterministic {
                rng: SplitMix64::new(seed),
                buf: [0; 8],
                pos: 8,
            },
            bytes_served: 0,
        }
    }

    /// Deterministic source for one channel of a scenario, seeded via
    /// [`derive_seed`].
    pub fn for_channel(master_seed: u64, channel: u64) -> Self {
        Self::deterministic(derive_seed(master_seed, channel))
    }

    /// Replays raw bytes from a file; exhausting the file is an error so
    /// a run never silently degrades to repeated or zero material.
    pub fn external(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        Ok(EntropySource {
            source: Source::External { reader: BufReader::new(file), path },
            bytes_served: 0,
        })
    }

    /// Produces exactly `count` bytes (`count >= 1`).
    pub fn generate_stream(&mut self, count: usize) -> Result<Vec<u8>, EntropyError> {
        debug_assert!(count >= 1, "entropy requests are at least one byte");
        let mut out = Vec::with_capacity(count);
        match &mut self.source {
            Source::Deterministic { rng, buf, pos } => {
                while out.len() < count {
                    if *pos == 8 {
                        *buf = rng.next_u64().to_le_bytes();
                        *pos = 0;
                    }
                    let take = (count - out.len()).min(8 - *pos);
                    out.extend_from_slice(&buf[*pos..*pos + take]);
                    *pos += take;
                }
            }
            Source::External { reader, .. } => {
                out.resize(count, 0);
                let mut filled = 0;
                while filled < count {
                    let n = reader.read(&mut out[filled..])?;
                    if n == 0 {
                        return Err(EntropyError::Exhausted {
                            requested: count,
                            available: filled,
                        });
                    }
                    filled += n;
                }
            }
        }
        self.bytes_served += count as u64;
        Ok(out)
    }

    /// Total bytes handed out over the source's lifetime.
    pub fn bytes_served(&self) -> u64 {
        self.bytes_served
    }

    /// Path of the backing file, for external sources.
    pub fn stream_path(&self) -> Option<&Path> {
        match &self.source {
            Source::Deterministic { .. } => None,
            Source::External { path, .. } => Some(path),
        }
    }
}

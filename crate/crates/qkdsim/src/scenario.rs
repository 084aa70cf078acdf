//! Declarative scenario files: strict TOML parsing, duration syntax,
//! and whole-file validation that reports every problem at once.

use std::fmt;
use std::fs;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::apps::TrafficPattern;
use crate::crypto::AlgSelection;
use crate::engine::SimTime;
use crate::keybuffer::BufferParams;

/// Parses a duration literal: an integer or decimal number with an `s`,
/// `ms`, `us`, or `ns` suffix. Decimals are evaluated exactly in integer
/// arithmetic; sub-nanosecond precision is rejected.
pub fn parse_duration(text: &str) -> Result<SimTime, String> {
    let text = text.trim();
    let (number, factor) = if let Some(n) = text.strip_suffix("ms") {
        (n, 1_000_000u64)
    } else if let Some(n) = text.strip_suffix("us") {
        (n, 1_000)
    } else if let Some(n) = text.strip_suffix("ns") {
        (n, 1)
    } else if let Some(n) = text.strip_suffix('s') {
        (n, 1_000_000_000)
    } else {
        return Err(format!("duration '{text}' is missing a unit suffix (s, ms, us, ns)"));
    };
    let number = number.trim();
    let (int_part, frac_part) = match number.split_once('.') {
        Some((i, f)) => (i, f),
        None => (number, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("duration '{text}' has no digits"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(format!("duration '{text}' is not a plain decimal number"));
    }
    let scale = 10u64.pow(frac_part.len() as u32);
    if frac_part.len() > 9 || factor % scale != 0 {
        return Err(format!("duration '{text}' is finer than one nanosecond"));
    }
    let int_val: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| format!("duration '{text}' is too large"))?
    };
    let frac_val: u64 = if frac_part.is_empty() { 0 } else { frac_part.parse().unwrap() };
    int_val
        .checked_mul(factor)
        .and_then(|ns| ns.checked_add(frac_val * (factor / scale)))
        .map(SimTime::from_nanos)
        .ok_or_else(|| format!("duration '{text}' overflows the nanosecond clock"))
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{}ns", self.as_nanos()))
    }
}

struct SimTimeVisitor;

impl Visitor<'_> for SimTimeVisitor {
    type Value = SimTime;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a duration string like \"30s\", \"3.2704ms\", or an integer nanosecond count")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<SimTime, E> {
        parse_duration(v).map_err(de::Error::custom)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<SimTime, E> {
        Ok(SimTime::from_nanos(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<SimTime, E> {
        u64::try_from(v)
            .map(SimTime::from_nanos)
            .map_err(|_| de::Error::custom("durations cannot be negative"))
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<SimTime, D::Error> {
        deserializer.deserialize_any(SimTimeVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    /// IPv4 dotted-quad used as the synthetic transport address.
    pub address: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub delay: SimTime,
    pub drop_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargingSpec {
    pub block_size: u64,
    pub check_interval: SimTime,
    /// Material pre-installed in both buffers at t=0. May exceed
    /// max_bytes; the excess is truncated like any other add.
    #[serde(default)]
    pub initial_fill: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub pcap: PathBuf,
    pub csv: PathBuf,
    pub trace: PathBuf,
}

/// A complete run description. Parsing is strict: unknown keys anywhere
/// in the document are errors, because a misspelled buffer bound would
/// silently invalidate an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration: SimTime,
    /// Byte-stream file standing in for a hardware QRNG. When absent,
    /// key material comes from the seeded deterministic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_stream: Option<PathBuf>,
    pub nodes: Vec<NodeSpec>,
    pub link: LinkSpec,
    pub buffer: BufferParams,
    pub charging: ChargingSpec,
    pub crypto: AlgSelection,
    pub traffic: TrafficPattern,
    pub outputs: OutputSpec,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:{}", .0.iter().map(|e| format!("\n  - {e}")).collect::<String>())]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate().map_err(ScenarioError::Invalid)?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks every cross-field rule, returning all violations rather
    /// than stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();

        if self.nodes.len() != 2 {
            errors.push(format!("scenario requires exactly two nodes, got {}", self.nodes.len()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.address.parse::<Ipv4Addr>().is_err() {
                errors.push(format!(
                    "node '{}' address '{}' is not a valid IPv4 address",
                    node.name, node.address
                ));
            }
            for other in &self.nodes[i + 1..] {
                if node.name == other.name {
                    errors.push(format!("duplicate node name '{}'", node.name));
                }
                if node.address == other.address {
                    errors.push(format!("duplicate node address '{}'", node.address));
                }
            }
        }

        if !(0.0..=1.0).contains(&self.link.drop_probability) {
            errors.push(format!(
                "link.drop_probability ({}) must lie in [0, 1]",
                self.link.drop_probability
            ));
        }

        if let Err(problems) = self.buffer.validate() {
            for p in problems {
                errors.push(format!("buffer: {p}"));
            }
        }
        if self.buffer.initial_bytes != 0
            && self.charging.initial_fill != 0
            && self.buffer.initial_bytes != self.charging.initial_fill
        {
            errors.push(format!(
                "buffer.initial_bytes ({}) conflicts with charging.initial_fill ({}); set one",
                self.buffer.initial_bytes, self.charging.initial_fill
            ));
        }

        if self.charging.block_size == 0 {
            errors.push("charging.block_size must be at least 1".into());
        }
        if self.charging.check_interval.is_zero() {
            errors.push("charging.check_interval must be positive".into());
        }

        if self.traffic.packet_count == 0 {
            errors.push("traffic.packet_count must be at least 1".into());
        }
        if self.traffic.interval.is_zero() {
            errors.push("traffic.interval must be positive (blocked sends retry each interval)".into());
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// The material installed at t=0: `charging.initial_fill`, with
    /// `buffer.initial_bytes` accepted as an alias when only it is set.
    pub fn initial_fill_amount(&self) -> u64 {
        if self.charging.initial_fill != 0 {
            self.charging.initial_fill
        } else {
            self.buffer.initial_bytes
        }
    }

    /// Redirects the three output files into `dir`, keeping file names.
    pub fn redirect_outputs(&mut self, dir: &Path) {
        for path in [&mut self.outputs.pcap, &mut self.outputs.csv, &mut self.outputs.trace] {
            let name = path.file_name().expect("output paths name files").to_os_string();
            *path = dir.join(name);
        }
    }
}

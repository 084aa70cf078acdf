//! Golden-output fixtures. A manifest lists scenarios together with
//! their checked-in output files and the SHA-256 of each; verification
//! reruns every scenario in memory and compares byte for byte.
//!
//! The digests guard the golden files themselves: a stale or hand-edited
//! golden fails before any simulation output is consulted, so a diff
//! always means behavior changed.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::Scenario;
use crate::sim::Simulation;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fixture: Vec<GoldenFixture>,
}

/// One pinned scenario. All paths are relative to the manifest file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenFixture {
    pub scenario: PathBuf,
    pub trace: PathBuf,
    pub csv: PathBuf,
    pub pcap: PathBuf,
    pub sha256: DigestSet,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigestSet {
    pub trace: String,
    pub csv: String,
    pub pcap: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Trace,
    Csv,
    Pcap,
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputKind::Trace => "trace",
            OutputKind::Csv => "csv",
            OutputKind::Pcap => "pcap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureDetail {
    /// The checked-in golden file is absent.
    MissingGolden { path: PathBuf },
    /// The golden file does not hash to the manifest digest, i.e. the
    /// fixture itself is corrupt; rerun output was not consulted.
    ManifestDigestMismatch { expected: String, actual: String },
    /// The rerun produced different bytes.
    Diverged { first_difference: usize, expected_len: usize, actual_len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFailure {
    pub output: OutputKind,
    pub detail: FailureDetail,
}

impl fmt::Display for OutputFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            FailureDetail::MissingGolden { path } => {
                write!(f, "{}: golden file {} is missing", self.output, path.display())
            }
            FailureDetail::ManifestDigestMismatch { expected, actual } => write!(
                f,
                "{}: golden file hashes to {actual}, manifest pins {expected}",
                self.output
            ),
            FailureDetail::Diverged { first_difference, expected_len, actual_len } => write!(
                f,
                "{}: output diverges from golden at byte {first_difference} \
                 (golden {expected_len} bytes, rerun {actual_len} bytes)",
                self.output
            ),
        }
    }
}

/// Verification outcome for one fixture entry.
#[derive(Debug, Clone)]
pub struct FixtureReport {
    pub scenario: PathBuf,
    pub failures: Vec<OutputFailure>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("fixture scenario {path} failed: {detail}")]
    Scenario { path: PathBuf, detail: String },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, FixtureError> {
    fs::read(path).map_err(|source| FixtureError::Io { path: path.to_path_buf(), source })
}

fn first_difference(expected: &[u8], actual: &[u8]) -> Option<usize> {
    if expected == actual {
        return None;
    }
    let offset = expected
        .iter()
        .zip(actual.iter())
        .position(|(e, a)| e != a)
        .unwrap_or_else(|| expected.len().min(actual.len()));
    Some(offset)
}

fn check_output(
    base: &Path,
    output: OutputKind,
    golden_rel: &Path,
    pinned_sha256: &str,
    actual: &[u8],
    failures: &mut Vec<OutputFailure>,
) {
    let golden_path = base.join(golden_rel);
    let golden = match fs::read(&golden_path) {
        Ok(bytes) => bytes,
        Err(_) => {
            failures.push(OutputFailure {
                output,
                detail: FailureDetail::MissingGolden { path: golden_path },
            });
            return;
        }
    };
    let golden_digest = sha256_hex(&golden);
    if golden_digest != pinned_sha256 {
        failures.push(OutputFailure {
            output,
            detail: FailureDetail::ManifestDigestMismatch {
                expected: pinned_sha256.to_string(),
                actual: golden_digest,
            },
        });
        return;
    }
    if let Some(first_difference) = first_difference(&golden, actual) {
        failures.push(OutputFailure {
            output,
            detail: FailureDetail::Diverged {
                first_difference,
                expected_len: golden.len(),
                actual_len: actual.len(),
            },
        });
    }
}

/// Reruns every fixture in `manifest_path` and reports per-output
/// results. I/O or scenario failures abort; divergences do not.
pub fn verify_manifest(manifest_path: &Path) -> Result<Vec<FixtureReport>, FixtureError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|source| FixtureError::Io { path: manifest_path.to_path_buf(), source })?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| FixtureError::Parse(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();

    let mut reports = Vec::new();
    for fixture in &manifest.fixture {
        let scenario_path = base.join(&fixture.scenario);
        let scenario_text = String::from_utf8(read_bytes(&scenario_path)?).map_err(|e| {
            FixtureError::Scenario { path: scenario_path.clone(), detail: e.to_string() }
        })?;
        let scenario = Scenario::from_toml(&scenario_text).map_err(|e| {
            FixtureError::Scenario { path: scenario_path.clone(), detail: e.to_string() }
        })?;
        let mut simulation = Simulation::from_scenario(&scenario).map_err(|e| {
            FixtureError::Scenario { path: scenario_path.clone(), detail: e.to_string() }
        })?;
        simulation.drive().map_err(|e| FixtureError::Scenario {
            path: scenario_path.clone(),
            detail: e.to_string(),
        })?;

        let recorder = simulation.recorder();
        let mut failures = Vec::new();
        check_output(
            &base,
            OutputKind::Trace,
            &fixture.trace,
            &fixture.sha256.trace,
            &recorder.render_trace(),
            &mut failures,
        );
        check_output(
            &base,
            OutputKind::Csv,
            &fixture.csv,
            &fixture.sha256.csv,
            &recorder.render_csv(),
            &mut failures,
        );
        check_output(
            &base,
            OutputKind::Pcap,
            &fixture.pcap,
            &fixture.sha256.pcap,
            &recorder.render_pcap(),
            &mut failures,
        );
        reports.push(FixtureReport { scenario: fixture.scenario.clone(), failures });
    }
    Ok(reports)
}

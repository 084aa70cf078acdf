//! Discrete-event simulator for QKD-secured links at the key-management
//! layer. Physical key exchange is abstracted into a deterministic
//! entropy source; what is modelled faithfully is everything downstream
//! of it: two-tier key buffers, threshold-driven charging over an ADDKEY
//! protocol, per-packet key reservation mirrored across both ends,
//! OTP/AES-CTR encryption with HMAC-SHA-256 authentication, lossy
//! classical channels, and the desynchronization failures that follow
//! from losing a key-synchronization message.
//!
//! The crate is a library first. `examples/` holds one runnable program
//! per capability, and the `qkdsim` binary wraps [`sim::run_scenario`]
//! for scripted use. Scenarios are TOML documents (see [`scenario`]);
//! every run emits a human-readable trace, a buffer-occupancy CSV, and a
//! PCAP capture of all delivered frames.
//!
//! Determinism is load-bearing: the same scenario and seed reproduce all
//! three outputs byte for byte. Key material, channel-loss draws, and
//! synthetic payloads each consume an independent stream derived from
//! the master seed, so changing one knob never perturbs the others.

pub mod apps;
pub mod capture;
pub mod charging;
pub mod crypto;
pub mod engine;
pub mod entropy;
pub mod fixtures;
pub mod keybuffer;
pub mod manager;
pub mod scenario;
pub mod sim;

pub use engine::{Engine, Event, EventId, RunSummary, SimTime, World};
pub use entropy::{derive_seed, EntropySource, SplitMix64};
pub use keybuffer::{BufferParams, KeyBuffer, KeyId};
pub use manager::{LinkId, LinkState, LinkStats};
pub use scenario::Scenario;
pub use sim::{run_scenario, ExitReport, Incident, IncidentKind, Simulation};

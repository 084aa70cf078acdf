//! Feeds the simulation from an external entropy file instead of the
//! seeded generator, the hook for replaying captured QRNG output. The
//! file is consumed byte for byte, so reruns against the same file are
//! identical, and exhausting it aborts the run instead of silently
//! recycling material.
//!
//!     cargo run --example external_entropy

use std::io::Write;

use qkdsim::entropy::SplitMix64;
use qkdsim::scenario::Scenario;
use qkdsim::sim::Simulation;

const SCENARIO: &str = r#"
    seed = 42
    duration = "5s"

    [[nodes]]
    name = "alice"
    address = "10.6.0.1"

    [[nodes]]
    name = "bob"
    address = "10.6.0.2"

    [link]
    delay = "1ms"
    drop_probability = 0.0

    [buffer]
    min_bytes = 100
    max_bytes = 50000
    threshold_bytes = 9000

    [charging]
    block_size = 1000
    check_interval = "250ms"
    initial_fill = 8000

    [crypto]
    encryption = "otp"
    authentication = "mac256"

    [traffic]
    packet_count = 3
    payload_size = 256
    interval = "1s"
    start_time = "1s"

    [outputs]
    pcap = "out/external.pcap"
    csv = "out/external.csv"
    trace = "out/external.trace"
"#;

fn run_with_stream(bytes: usize) -> Result<qkdsim::sim::ExitReport, Box<dyn std::error::Error>> {
    // Stand-in for a hardware QRNG dump; any byte file works.
    let mut stream = tempfile::NamedTempFile::new()?;
    let mut rng = SplitMix64::new(0xFEED);
    let material: Vec<u8> = (0..bytes).map(|_| rng.next_u64() as u8).collect();
    stream.write_all(&material)?;

    let dir = tempfile::tempdir()?;
    let mut scenario = Scenario::from_toml(SCENARIO)?;
    scenario.entropy_stream = Some(stream.path().to_path_buf());
    scenario.redirect_outputs(dir.path());

    let mut simulation = Simulation::from_scenario(&scenario)?;
    let report = simulation.run()?;
    Ok(report)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_with_stream(64 * 1024)?;
    println!("with a 64 KiB entropy file:");
    println!("{report}");
    println!();

    // 4 KiB cannot cover the 8000-byte initial fill: the run aborts with
    // the shortfall named rather than reusing bytes.
    match run_with_stream(4 * 1024) {
        Ok(_) => println!("unexpectedly succeeded with a short entropy file"),
        Err(err) => println!("with a 4 KiB entropy file: {err}"),
    }
    Ok(())
}

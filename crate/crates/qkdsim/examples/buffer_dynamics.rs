//! Shows the occupancy sawtooth a key buffer traces under sustained
//! traffic: reservations drain it below the threshold, the charging
//! loop tops it back up, and the cap is never crossed.
//!
//!     cargo run --example buffer_dynamics

use qkdsim::scenario::Scenario;
use qkdsim::sim::Simulation;

const SCENARIO: &str = r#"
    seed = 11
    duration = "60s"

    [[nodes]]
    name = "alice"
    address = "10.4.0.1"

    [[nodes]]
    name = "bob"
    address = "10.4.0.2"

    [link]
    delay = "2ms"
    drop_probability = 0.0

    [buffer]
    min_bytes = 1000
    max_bytes = 20000
    threshold_bytes = 12000

    [charging]
    block_size = 600
    check_interval = "100ms"
    initial_fill = 12000

    [crypto]
    encryption = "otp"
    authentication = "mac256"

    [traffic]
    packet_count = 55
    payload_size = 704
    interval = "1s"
    start_time = "1s"

    [outputs]
    pcap = "out/dynamics.pcap"
    csv = "out/dynamics.csv"
    trace = "out/dynamics.trace"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::from_toml(SCENARIO)?;
    let threshold = scenario.buffer.threshold_bytes;
    let max = scenario.buffer.max_bytes;

    let mut simulation = Simulation::from_scenario(&scenario)?;
    let report = simulation.drive()?;

    // Chart the sender-side occupancy: one row per sample, column scaled
    // to the buffer cap, with the threshold marked.
    println!("sender buffer occupancy over time (cap {max}, threshold {threshold}):");
    println!();
    const WIDTH: usize = 64;
    let scale = |value: u64| (value as usize * WIDTH) / max as usize;
    let threshold_col = scale(threshold);
    for sample in simulation.recorder().samples().iter().filter(|s| s.node == 0) {
        let col = scale(sample.m_current);
        let mut row: Vec<char> = std::iter::repeat('.').take(WIDTH + 1).collect();
        row[threshold_col] = '|';
        for cell in row.iter_mut().take(col) {
            *cell = '#';
        }
        println!(
            "{:>14}  {}  {:>6} {}",
            sample.time.to_string(),
            row.iter().collect::<String>(),
            sample.m_current,
            sample.event
        );
    }

    println!();
    println!("{report}");
    Ok(())
}

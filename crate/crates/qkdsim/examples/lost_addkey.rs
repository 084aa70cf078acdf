//! Demonstrates buffer desynchronization: one lost ADDKEY message makes
//! the two ends of a link diverge silently, and the divergence surfaces
//! later as authentication failures on innocent packets.
//!
//!     cargo run --example lost_addkey

use std::path::Path;

use qkdsim::manager::LinkId;
use qkdsim::scenario::Scenario;
use qkdsim::sim::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/lost_addkey.toml");
    let mut scenario = Scenario::from_path(&path)?;
    scenario.redirect_outputs(Path::new("out"));

    let mut simulation = Simulation::from_scenario(&scenario)?;
    let report = simulation.run()?;

    let link = simulation.link(LinkId(0)).expect("single link");
    println!(
        "key-sync messages: {} delivered, {} dropped",
        link.stats.addkey_sent, link.stats.addkey_dropped
    );
    println!(
        "protected frames:  {} delivered, {} dropped",
        link.stats.qkd_sent, link.stats.qkd_dropped
    );
    println!(
        "end occupancies:   {} vs {} (the missing block, forever)",
        link.buffer(0).m_current(),
        link.buffer(1).m_current()
    );
    println!();

    println!("what the wire saw around the loss:");
    for line in simulation
        .recorder()
        .trace_lines()
        .iter()
        .filter(|l| l.contains("ClassicalChannel:Drop") || l.contains("AuthenticationFailure"))
        .take(4)
    {
        println!("  {line}");
    }
    println!();
    println!("{report}");
    std::process::exit(report.exit_code());
}

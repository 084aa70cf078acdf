//! Runs the reference scenario end to end and prints the run report
//! plus the first lines of the trace.
//!
//!     cargo run --example run_reference

use std::path::Path;

use qkdsim::scenario::Scenario;
use qkdsim::sim::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference.toml");
    let mut scenario = Scenario::from_path(&path)?;
    scenario.redirect_outputs(Path::new("out"));

    let mut simulation = Simulation::from_scenario(&scenario)?;
    let report = simulation.run()?;

    println!("{report}");
    println!();
    println!("first trace lines:");
    for line in simulation.recorder().trace_lines().iter().take(12) {
        println!("  {line}");
    }
    println!();
    println!(
        "full outputs: {}, {}, {}",
        scenario.outputs.trace.display(),
        scenario.outputs.csv.display(),
        scenario.outputs.pcap.display()
    );
    std::process::exit(report.exit_code());
}

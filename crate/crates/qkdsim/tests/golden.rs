//! Every shipped fixture must reproduce byte-identically on a clean
//! checkout.

use std::path::Path;

use qkdsim::fixtures::verify_manifest;

#[test]
fn shipped_fixtures_reproduce_exactly() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/manifest.toml");
    let reports = verify_manifest(&manifest).expect("manifest loads and scenarios run");
    assert_eq!(reports.len(), 2);
    for report in &reports {
        assert!(
            report.passed(),
            "{} diverged: {}",
            report.scenario.display(),
            report
                .failures
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        );
    }
}

//! A small replicated simulation study, printed as CSV.
//!
//! cargo run --release --example simulation_study

use bifactor_alm::simlab::{run_study, BlockBoundary, StudyKind, StudySpec};
use bifactor_alm::AlmConfig;

fn main() -> bifactor_alm::Result<()> {
    let spec = StudySpec {
        kind: StudyKind::Study1,
        j: 15,
        g: 3,
        n: 500,
        candidates: None,
        boundary: BlockBoundary::Disjoint,
    };
    let config = AlmConfig { n_starts: 10, ..AlmConfig::default() };
    let report = run_study(&spec, 5, 2024, &config)?;
    print!("{}", report.to_csv());
    Ok(())
}

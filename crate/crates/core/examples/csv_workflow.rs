//! Read raw observations from CSV, fit, and write the result as JSON using
//! the same helpers as the command-line tool.
//!
//! cargo run --release --example csv_workflow

use std::fmt::Write as _;

use bifactor_alm::cli::{ingest, matrix_json, InputKind};
use bifactor_alm::simlab::generate_bifactor_truth;
use bifactor_alm::{bifactor_constraint_pairs, multi_start_fit, AlmConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> bifactor_alm::Result<()> {
    // write 800 observations of 9 items to a CSV file
    let truth = generate_bifactor_truth(9, 3, 5)?;
    let l = truth.sigma().cholesky().expect("truth is positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = DMatrix::<f64>::from_fn(800, 9, |_, _| StandardNormal.sample(&mut rng));
    let x = z * l.transpose();
    let mut text = (1..=9).map(|i| format!("item{i}")).collect::<Vec<_>>().join(",") + "\n";
    for row in x.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(text, "{}", cells.join(","));
    }
    let path = std::env::temp_dir().join("bifactor_example_items.csv");
    std::fs::write(&path, text)?;

    let data = ingest(&path, InputKind::Raw, None)?;
    println!("read {} items, N = {}", data.dim(), data.n());
    let fit = multi_start_fit(&data, &bifactor_constraint_pairs(3), &AlmConfig { n_starts: 10, ..AlmConfig::default() })?;
    println!("structure: {:?}", fit.structure.assignment);
    println!("{}", serde_json::to_string(&matrix_json(&fit.params.lambda)).expect("json"));
    std::fs::remove_file(&path)?;
    Ok(())
}

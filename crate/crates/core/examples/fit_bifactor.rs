//! Learn a bi-factor structure from simulated data and compare it with the
//! structure that generated the data.
//!
//! cargo run --release --example fit_bifactor

use bifactor_alm::simlab::{acc, emc, generate_bifactor_truth, mse_lambda, sample_covariance};
use bifactor_alm::{bifactor_constraint_pairs, multi_start_fit, AlmConfig};

fn main() -> bifactor_alm::Result<()> {
    let truth = generate_bifactor_truth(15, 3, 7)?;
    let data = sample_covariance(&truth, 2000, 11)?;

    let config = AlmConfig { n_starts: 20, seed: 1, ..AlmConfig::default() };
    let fit = multi_start_fit(&data, &bifactor_constraint_pairs(3), &config)?;

    println!("loss {:.4}, {} of {} starts converged", fit.loss, fit.starts_converged, config.n_starts);
    for (g, items) in fit.structure.groups.iter().enumerate() {
        let one_based: Vec<usize> = items.iter().map(|i| i + 1).collect();
        println!("group {}: items {:?}", g + 1, one_based);
    }
    println!(
        "EMC {}  ACC {:.3}  MSE {:.5}",
        emc(&fit.structure.groups, &truth.partition),
        acc(&fit.structure.groups, &truth.partition, 15),
        mse_lambda(&fit.params.lambda, &truth.lambda)?
    );
    println!("estimated factor correlations:{:.3}", fit.phi.as_matrix());
    Ok(())
}

//! Exploratory factor analysis with echelon zeros, used as a baseline for
//! choosing the number of factors.
//!
//! cargo run --release --example efa_baseline

use bifactor_alm::selection::{bic_efa, efa_fit, select_g_efa};
use bifactor_alm::simlab::{generate_bifactor_truth, sample_covariance};
use bifactor_alm::AlmConfig;

fn main() -> bifactor_alm::Result<()> {
    let truth = generate_bifactor_truth(15, 3, 21)?;
    let data = sample_covariance(&truth, 2000, 22)?;
    let config = AlmConfig { n_starts: 10, ..AlmConfig::default() };

    let four = efa_fit(&data, 4, &config)?;
    println!("K = 4: loss {:.3}, BIC {:.3}", four.loss, bic_efa(four.loss, 4, 15, data.n()));
    println!("loadings:{:.2}", four.lambda);

    let sweep = select_g_efa(&data, &[2, 3, 4], &config)?;
    println!("BIC picks {} group factors (K = {})", sweep.chosen, sweep.chosen + 1);
    Ok(())
}

//! Choose the number of group factors by BIC.
//!
//! cargo run --release --example select_groups

use bifactor_alm::selection::select_g;
use bifactor_alm::simlab::{generate_bifactor_truth, sample_covariance};
use bifactor_alm::AlmConfig;

fn main() -> bifactor_alm::Result<()> {
    let truth = generate_bifactor_truth(15, 3, 3)?;
    let data = sample_covariance(&truth, 1000, 4)?;

    let config = AlmConfig { n_starts: 20, ..AlmConfig::default() };
    let sweep = select_g(&data, &[2, 3, 4], &config)?;

    println!("{:>3} {:>12} {:>12}", "G", "loss", "BIC");
    for ((g, loss), bic) in sweep.candidates.iter().zip(&sweep.losses).zip(&sweep.bics) {
        match (loss, bic) {
            (Some(l), Some(b)) => println!("{g:>3} {l:>12.3} {b:>12.3}"),
            _ => println!("{g:>3} {:>12} {:>12}", "failed", "-"),
        }
    }
    println!("chosen G = {}", sweep.chosen);
    Ok(())
}

//! Check the identifiability conditions of a loading matrix.
//!
//! cargo run --release --example identifiability

use bifactor_alm::diagnostics::{check_conditions, RowTest, Tolerances};
use bifactor_alm::simlab::generate_bifactor_truth;

fn main() -> bifactor_alm::Result<()> {
    let truth = generate_bifactor_truth(15, 3, 2)?;
    let tol = Tolerances::default();
    let r = check_conditions(&truth.lambda, &truth.partition, Some(truth.phi.as_matrix()), &tol)?;
    println!("generated loadings: condition 2 {}, condition 3 {}, condition 5 {}", r.condition2, r.condition3, r.condition5);

    // shrink the first group to two nonzero loadings
    let mut lambda = truth.lambda.clone();
    for &i in &truth.partition[0][2..] {
        lambda[(i, 1)] = 0.0;
    }
    let r = check_conditions(&lambda, &truth.partition, Some(truth.phi.as_matrix()), &tol)?;
    let satisfied = r.anderson_rubin_rows.iter().filter(|&&x| x == RowTest::Satisfied).count();
    println!(
        "two-item group:     condition 2 {}, condition 3 {}, condition 5 {}, row test satisfied for {satisfied}/15 items",
        r.condition2, r.condition3, r.condition5
    );
    println!("Q sets: {:?}", r.q_sets);
    Ok(())
}

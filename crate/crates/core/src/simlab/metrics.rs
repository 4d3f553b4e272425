//! Recovery metrics that account for label and sign indeterminacy.

use nalgebra::DMatrix;

use super::assignment::{brute_force_assignment, min_cost_assignment};
use super::truth::TruthModel;
use crate::error::{Error, Result};

/// Largest group count solved by exhaustive permutation search in
/// [`mse_lambda`]; larger problems use the assignment solver.
pub const EXHAUSTIVE_MAX_GROUPS: usize = 8;

/// Cost of matching estimated group column `a` to true group column `b`
/// with the better of the two signs.
fn column_cost(hat: &DMatrix<f64>, star: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let (x, y) = (hat.column(a), star.column(b));
    x.norm_squared() + y.norm_squared() - 2.0 * x.dot(&y).abs()
}

/// `min_{P,D} ‖Λ̂ − Λ*PD‖²_F / (JK)` with the general column held in place.
pub fn mse_lambda(hat: &DMatrix<f64>, star: &DMatrix<f64>) -> Result<f64> {
    if hat.shape() != star.shape() {
        return Err(Error::DimensionMismatch {
            what: "loading matrices",
            expected: star.len(),
            actual: hat.len(),
        });
    }
    let (j, k) = hat.shape();
    if k == 0 {
        return Ok(0.0);
    }
    let g = k - 1;
    let general = column_cost(hat, star, 0, 0);
    let cost = DMatrix::from_fn(g, g, |a, b| column_cost(hat, star, a + 1, b + 1));
    let groups = if g <= EXHAUSTIVE_MAX_GROUPS {
        brute_force_assignment(&cost).1
    } else {
        min_cost_assignment(&cost).1
    };
    Ok(((general + groups) / (j * k) as f64).max(0.0))
}

fn same_set(a: &[usize], b: &[usize]) -> bool {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable();
    y.sort_unstable();
    x == y
}

/// `|B* ∩ B| + |Bᶜ ∩ B*ᶜ|` over the item universe `0..j`.
fn agreement(truth: &[usize], est: &[usize], j: usize) -> usize {
    let mut t = vec![false; j];
    let mut e = vec![false; j];
    truth.iter().for_each(|&i| t[i] = true);
    est.iter().filter(|&&i| i < j).for_each(|&i| e[i] = true);
    t.iter().zip(&e).filter(|(a, b)| a == b).count()
}

fn pad(groups: &[Vec<usize>], g: usize) -> Vec<Vec<usize>> {
    let mut out = groups.to_vec();
    out.resize(g.max(groups.len()), Vec::new());
    out
}

/// Exact-match criterion: 1 if some relabeling of the estimated groups
/// reproduces every true group, else 0.
pub fn emc(estimated: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    let g = truth.len().max(estimated.len());
    let est = pad(estimated, g);
    let tru = pad(truth, g);
    let cost = DMatrix::from_fn(g, g, |a, b| if same_set(&tru[a], &est[b]) { 0.0 } else { 1.0 });
    let (_, mismatches) = min_cost_assignment(&cost);
    if mismatches == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Average-correctness criterion, maximized over relabelings by assignment.
pub fn acc(estimated: &[Vec<usize>], truth: &[Vec<usize>], n_items: usize) -> f64 {
    let g = truth.len();
    if g == 0 {
        return 1.0;
    }
    let est = pad(estimated, g);
    let m = est.len();
    // rows: true groups (plus dummy rows scoring 0 when there are extra estimates)
    let score = DMatrix::from_fn(m, m, |a, b| {
        if a < g {
            agreement(&truth[a], &est[b], n_items) as f64
        } else {
            0.0
        }
    });
    let (_, neg) = min_cost_assignment(&(-score));
    -neg / (n_items * g) as f64
}

/// [`acc`] by exhaustive search over relabelings; test oracle.
pub fn acc_exhaustive(estimated: &[Vec<usize>], truth: &[Vec<usize>], n_items: usize) -> f64 {
    let g = truth.len();
    let est = pad(estimated, g);
    let score = DMatrix::from_fn(est.len(), est.len(), |a, b| {
        if a < g {
            -(agreement(&truth[a], &est[b], n_items) as f64)
        } else {
            0.0
        }
    });
    -brute_force_assignment(&score).1 / (n_items * g) as f64
}

/// EMC and ACC maximized over the automorphisms of the truth's hierarchy.
///
/// Items flagged by [`TruthModel::ambiguous_items`] are left out of both
/// comparisons (and of the ACC denominator).
pub fn hier_match_metrics(estimated: &[Vec<usize>], truth: &TruthModel) -> Result<(f64, f64)> {
    let tree = truth
        .hierarchy
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("truth has no hierarchy".into()))?;
    let g = truth.partition.len();
    if estimated.len() != g {
        return Err(Error::DimensionMismatch {
            what: "estimated factor sets",
            expected: g,
            actual: estimated.len(),
        });
    }
    let skip = truth.ambiguous_items();
    let keep = |set: &[usize]| -> Vec<usize> { set.iter().copied().filter(|i| !skip.contains(i)).collect() };
    let j = truth.n_items();
    let universe = j - skip.len();
    let tru: Vec<Vec<usize>> = truth.partition.iter().map(|s| keep(s)).collect();
    let est: Vec<Vec<usize>> = estimated.iter().map(|s| keep(s)).collect();

    let mut best_emc: f64 = 0.0;
    let mut best_acc: f64 = 0.0;
    for perm in tree.automorphisms() {
        // factor node n (1..=g) is matched to estimated node perm[n]
        let mut all = true;
        let mut agree = 0;
        for node in 1..=g {
            let t = &tru[node - 1];
            let e = &est[perm[node] - 1];
            all &= same_set(t, e);
            agree += agreement(t, e, j) - skip.len();
        }
        best_emc = best_emc.max(if all { 1.0 } else { 0.0 });
        best_acc = best_acc.max(agree as f64 / (universe * g) as f64);
    }
    Ok((best_emc, best_acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::truth::{generate_bifactor_truth, generate_hier_truth, BlockBoundary};
    use proptest::prelude::*;

    #[test]
    fn mse_zero_under_permutation_and_sign() {
        let t = generate_bifactor_truth(12, 3, 1).unwrap();
        assert_eq!(mse_lambda(&t.lambda, &t.lambda).unwrap(), 0.0);
        let mut moved = t.lambda.clone();
        moved.swap_columns(1, 3);
        moved.column_mut(2).neg_mut();
        moved.column_mut(0).neg_mut();
        assert!(mse_lambda(&moved, &t.lambda).unwrap() < 1e-15);
        assert!(mse_lambda(&DMatrix::zeros(3, 2), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn mse_matches_brute_force_over_p_and_d() {
        // 3×3: two permutations of the group columns times 2³ sign patterns
        let star = DMatrix::from_row_slice(3, 3, &[0.9, 0.5, 0.0, 0.4, 0.0, -0.7, 0.6, 1.2, 0.0]);
        let hat = DMatrix::from_row_slice(3, 3, &[-0.8, 0.1, -0.4, 0.5, 0.6, 0.0, 0.7, 0.0, 1.0]);
        let mut best = f64::INFINITY;
        for perm in [[0usize, 1, 2], [0, 2, 1]] {
            for signs in 0..8u32 {
                let mut m = DMatrix::zeros(3, 3);
                for c in 0..3 {
                    let s = if signs >> c & 1 == 1 { -1.0 } else { 1.0 };
                    m.set_column(c, &(star.column(perm[c]) * s));
                }
                best = best.min((&hat - m).norm_squared() / 9.0);
            }
        }
        assert!((mse_lambda(&hat, &star).unwrap() - best).abs() < 1e-14);
    }

    #[test]
    fn mse_assignment_path_for_many_groups() {
        let t = generate_bifactor_truth(20, 10, 2).unwrap();
        let mut hat = t.lambda.clone();
        hat.swap_columns(1, 9);
        hat[(0, 0)] += 0.1;
        let v = mse_lambda(&hat, &t.lambda).unwrap();
        assert!((v - 0.01 / 220.0).abs() < 1e-15);
    }

    #[test]
    fn emc_examples() {
        let truth = vec![vec![0, 2, 4], vec![1, 3, 5]];
        assert_eq!(emc(&[vec![1, 3, 5], vec![0, 2, 4]], &truth), 1.0);
        assert_eq!(emc(&[vec![1, 3], vec![0, 2, 4, 5]], &truth), 0.0);
        assert_eq!(acc(&[vec![1, 3, 5], vec![0, 2, 4]], &truth, 6), 1.0);
    }

    #[test]
    fn acc_everything_in_one_group() {
        let truth = vec![vec![0, 2, 4], vec![1, 3, 5]];
        let est = vec![(0..6).collect::<Vec<_>>(), vec![]];
        // both relabelings by hand: (3 + 3) / 12 either way
        let by_hand_a = (agreement(&truth[0], &est[0], 6) + agreement(&truth[1], &est[1], 6)) as f64 / 12.0;
        let by_hand_b = (agreement(&truth[0], &est[1], 6) + agreement(&truth[1], &est[0], 6)) as f64 / 12.0;
        let expected = by_hand_a.max(by_hand_b);
        assert_eq!(acc(&est, &truth, 6), expected);
        assert_eq!(expected, 0.5);
    }

    #[test]
    fn hierarchy_automorphism_is_exact_match() {
        let t = generate_hier_truth(20, 1, BlockBoundary::Disjoint).unwrap();
        // swap F2<->F3 and with it F4/F5 <-> F6/F7
        let p = &t.partition;
        let est = vec![p[1].clone(), p[0].clone(), p[4].clone(), p[5].clone(), p[3].clone(), p[2].clone()];
        assert_eq!(hier_match_metrics(&est, &t).unwrap(), (1.0, 1.0));
        // swapping leaves across different parents is not an automorphism
        let bad = vec![p[0].clone(), p[1].clone(), p[4].clone(), p[3].clone(), p[2].clone(), p[5].clone()];
        assert_eq!(hier_match_metrics(&bad, &t).unwrap().0, 0.0);
    }

    #[test]
    fn hierarchy_boundary_items_are_ignored() {
        let t = generate_hier_truth(20, 1, BlockBoundary::Inclusive).unwrap();
        let disjoint = generate_hier_truth(20, 1, BlockBoundary::Disjoint).unwrap();
        assert_eq!(hier_match_metrics(&disjoint.partition, &t).unwrap(), (1.0, 1.0));
    }

    fn random_partition(assign: &[usize], g: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); g];
        for (i, &a) in assign.iter().enumerate() {
            if a < g {
                out[a].push(i);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn acc_assignment_equals_exhaustive(
            g in 1usize..7,
            t in proptest::collection::vec(0usize..7, 12),
            e in proptest::collection::vec(0usize..8, 12),
        ) {
            let truth = random_partition(&t.iter().map(|v| v % g).collect::<Vec<_>>(), g);
            let est = random_partition(&e, g);
            let a = acc(&est, &truth, 12);
            let b = acc_exhaustive(&est, &truth, 12);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            if emc(&est, &truth) == 1.0 {
                prop_assert!((a - 1.0).abs() < 1e-12);
            }
            let mut relabeled = est.clone();
            relabeled.reverse();
            prop_assert_eq!(emc(&relabeled, &truth), emc(&est, &truth));
            prop_assert!((acc(&relabeled, &truth, 12) - a).abs() < 1e-12);
        }
    }
}

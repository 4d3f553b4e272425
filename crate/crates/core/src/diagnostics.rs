//! Checkable identifiability conditions for a bi-factor loading matrix.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Loadings with magnitude at or below this count as zero.
    pub zero_tol: f64,
    /// Relative threshold for the rank tests.
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            zero_tol: 1e-6,
            rank_tol: 1e-8,
        }
    }
}

/// Outcome of the row-deletion test for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowTest {
    /// Two disjoint full-column-rank submatrices were found.
    Satisfied,
    /// The search found none; this is not a proof that none exist.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// `Q_g`: items of group `g` with a nonzero group loading (0-based items).
    pub q_sets: Vec<Vec<usize>>,
    /// Groups (1-based) whose `[general, group]` block has rank 2.
    pub h_set: Vec<usize>,
    pub condition2: bool,
    /// Smallest group (1-based) witnessing condition 2.
    pub condition2_witness: Option<usize>,
    pub condition3: bool,
    pub condition5: bool,
    /// True when condition 5 was evaluated without a factor correlation
    /// matrix, requiring three nonzero loadings in every group.
    pub condition5_conservative: bool,
    pub anderson_rubin_rows: Vec<RowTest>,
    pub tolerances: Tolerances,
}

fn check_structure(lambda: &DMatrix<f64>, structure: &[Vec<usize>], tol: &Tolerances) -> Result<()> {
    let (j, k) = lambda.shape();
    if k != structure.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "groups in structure",
            expected: k.saturating_sub(1),
            actual: structure.len(),
        });
    }
    let mut owner = vec![None; j];
    for (g, items) in structure.iter().enumerate() {
        for &i in items {
            if i >= j {
                return Err(Error::InvalidArgument(format!("item {} out of range", i + 1)));
            }
            if owner[i].replace(g).is_some() {
                return Err(Error::InvalidArgument(format!("item {} is in two groups", i + 1)));
            }
        }
    }
    for i in 0..j {
        for c in 1..k {
            if owner[i] != Some(c - 1) && lambda[(i, c)].abs() > tol.zero_tol {
                return Err(Error::StructureMismatch { item: i + 1, column: c + 1 });
            }
        }
    }
    Ok(())
}

fn block(lambda: &DMatrix<f64>, items: &[usize], g: usize) -> DMatrix<f64> {
    DMatrix::from_fn(items.len(), 2, |r, c| lambda[(items[r], if c == 0 { 0 } else { g + 1 })])
}

fn has_rank_two(b: &DMatrix<f64>, rank_tol: f64) -> bool {
    if b.nrows() < 2 {
        return false;
    }
    let sv = b.clone().svd(false, false).singular_values;
    let (hi, lo) = (sv.max(), sv.min());
    hi > 0.0 && lo > rank_tol * hi
}

/// `Q_g` sets and the rank-2 group set `H` for a declared structure.
pub fn compute_q_h(lambda: &DMatrix<f64>, structure: &[Vec<usize>], tol: &Tolerances) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    check_structure(lambda, structure, tol)?;
    let q = structure
        .iter()
        .enumerate()
        .map(|(g, items)| {
            let mut v: Vec<usize> = items.iter().copied().filter(|&i| lambda[(i, g + 1)].abs() > tol.zero_tol).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let h = structure
        .iter()
        .enumerate()
        .filter(|(g, items)| has_rank_two(&block(lambda, items, *g), tol.rank_tol))
        .map(|(g, _)| g + 1)
        .collect();
    Ok((q, h))
}

fn pairwise_independent(b: &DMatrix<f64>, rank_tol: f64) -> bool {
    let rows: Vec<_> = b.row_iter().collect();
    rows.iter().enumerate().all(|(a, u)| {
        rows[a + 1..].iter().all(|v| (u[0] * v[1] - u[1] * v[0]).abs() > rank_tol * u.norm() * v.norm())
    })
}

/// Picks `k` rows from `pool` spanning all `k` columns, greedily by largest
/// residual after projecting out the rows already chosen. The first row is
/// `first` when given.
fn greedy_basis(lambda: &DMatrix<f64>, pool: &[usize], first: Option<usize>, scale: f64, rank_tol: f64) -> Option<Vec<usize>> {
    let k = lambda.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut chosen = Vec::with_capacity(k);
    let residual = |i: usize, basis: &[DVector<f64>]| {
        let mut r = lambda.row(i).transpose();
        for q in basis {
            let d = r.dot(q);
            r.axpy(-d, q, 1.0);
        }
        r
    };
    while chosen.len() < k {
        let pick = if let (Some(f), true) = (first, chosen.is_empty()) {
            Some((f, residual(f, &basis)))
        } else {
            pool.iter()
                .filter(|i| !chosen.contains(*i))
                .map(|&i| (i, residual(i, &basis)))
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
        };
        let (i, r) = pick?;
        let n = r.norm();
        if n <= rank_tol * scale {
            return None;
        }
        basis.push(r / n);
        chosen.push(i);
    }
    Some(chosen)
}

const AR_RESTARTS: usize = 32;

fn row_deletion_test(lambda: &DMatrix<f64>, row: usize, rank_tol: f64, rng: &mut ChaCha8Rng) -> RowTest {
    let rest: Vec<usize> = (0..lambda.nrows()).filter(|&i| i != row).collect();
    let scale = rest.iter().map(|&i| lambda.row(i).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return RowTest::Inconclusive;
    }
    let attempt = |first: Option<usize>| -> bool {
        let Some(a) = greedy_basis(lambda, &rest, first, scale, rank_tol) else {
            return false;
        };
        let remaining: Vec<usize> = rest.iter().copied().filter(|i| !a.contains(i)).collect();
        greedy_basis(lambda, &remaining, None, scale, rank_tol).is_some()
    };
    if attempt(None) {
        return RowTest::Satisfied;
    }
    let mut order = rest.clone();
    for _ in 0..AR_RESTARTS {
        order.shuffle(rng);
        if attempt(Some(order[0])) {
            return RowTest::Satisfied;
        }
    }
    RowTest::Inconclusive
}

/// Evaluates conditions 2, 3 and 5 and the row-deletion rank test.
///
/// `phi` is the full factor correlation matrix; without it, condition 5
/// treats every group as uncorrelated with the others.
pub fn check_conditions(
    lambda: &DMatrix<f64>,
    structure: &[Vec<usize>],
    phi: Option<&DMatrix<f64>>,
    tol: &Tolerances,
) -> Result<IdentifiabilityReport> {
    let (q, h) = compute_q_h(lambda, structure, tol)?;
    let g = structure.len();
    if let Some(p) = phi {
        if p.shape() != (g + 1, g + 1) {
            return Err(Error::DimensionMismatch {
                what: "factor correlation matrix",
                expected: g + 1,
                actual: p.nrows(),
            });
        }
    }

    let witness = h.iter().copied().find(|&g1| {
        q[g1 - 1].len() >= 3 && pairwise_independent(&block(lambda, &structure[g1 - 1], g1 - 1), tol.rank_tol)
    });
    let condition2 = h.len() >= 2 && witness.is_some();
    let condition3 = q.iter().all(|s| s.len() >= 3) && h.len() >= 3;

    let isolated = |a: usize| match phi {
        Some(p) => (1..=g).filter(|&b| b != a + 1).all(|b| p[(a + 1, b)].abs() <= tol.zero_tol),
        None => true,
    };
    let condition5 = h.len() >= 2
        && q.iter()
            .enumerate()
            .all(|(a, s)| s.len() >= if isolated(a) { 3 } else { 2 });

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows = (0..lambda.nrows())
        .map(|r| row_deletion_test(lambda, r, tol.rank_tol, &mut rng))
        .collect();

    Ok(IdentifiabilityReport {
        q_sets: q,
        h_set: h,
        condition2,
        condition2_witness: if condition2 { witness } else { None },
        condition3,
        condition5,
        condition5_conservative: phi.is_none(),
        anderson_rubin_rows: rows,
        tolerances: *tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::generate_bifactor_truth;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn study_truth_meets_condition3() {
        let t = generate_bifactor_truth(15, 3, 4).unwrap();
        let r = check_conditions(&t.lambda, &t.partition, Some(t.phi.as_matrix()), &tol()).unwrap();
        assert_eq!(r.q_sets, t.partition);
        assert_eq!(r.h_set, vec![1, 2, 3]);
        assert!(r.condition2 && r.condition3 && r.condition5);
        assert!(r.anderson_rubin_rows.iter().all(|&x| x == RowTest::Satisfied));
    }

    #[test]
    fn proportional_and_empty_groups() {
        // group 1 proportional to the general column, group 2 all zero
        let l = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 0.5, 1.0, 0.0, 0.7, 0.0, 0.0, 0.3, 0.0, 0.0]);
        let (q, h) = compute_q_h(&l, &[vec![0, 1], vec![2, 3]], &tol()).unwrap();
        assert_eq!(q, vec![vec![0, 1], vec![]]);
        assert!(h.is_empty());
    }

    #[test]
    fn mismatch_outside_structure() {
        let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.2, 1.0, 0.0, 0.6]);
        let e = compute_q_h(&l, &[vec![0], vec![1]], &tol()).unwrap_err();
        assert!(matches!(e, Error::StructureMismatch { item: 1, column: 3 }));
    }

    #[test]
    fn small_group_fails_condition3() {
        let mut t = generate_bifactor_truth(12, 3, 8).unwrap();
        // keep two nonzero loadings in group 1
        for &i in &t.partition[0][2..] {
            t.lambda[(i, 1)] = 0.0;
        }
        let r = check_conditions(&t.lambda, &t.partition, Some(t.phi.as_matrix()), &tol()).unwrap();
        assert_eq!(r.q_sets[0].len(), 2);
        assert!(!r.condition3);
        // correlated groups only need two
        assert!(r.condition5);
        let c = check_conditions(&t.lambda, &t.partition, None, &tol()).unwrap();
        assert!(!c.condition5 && c.condition5_conservative);
    }

    #[test]
    fn row_test_fails_when_rows_are_scarce() {
        // 3 columns and 5 rows: deleting any row leaves 4 < 6
        let t = generate_bifactor_truth(4, 2, 1).unwrap();
        let l = t.lambda.rows(0, 4).into_owned();
        let r = check_conditions(&l, &t.partition, None, &tol()).unwrap();
        assert!(r.anderson_rubin_rows.iter().all(|&x| x == RowTest::Inconclusive));
    }

    proptest! {
        #[test]
        fn condition3_implies_condition5_and_relabeling_invariant(seed in 0u64..500, g in 2usize..5, drop in 0usize..3) {
            let mut t = generate_bifactor_truth(4 * g, g, seed).unwrap();
            for &i in &t.partition[0][..drop] {
                t.lambda[(i, 1)] = 0.0;
            }
            let r = check_conditions(&t.lambda, &t.partition, Some(t.phi.as_matrix()), &tol()).unwrap();
            if r.condition3 {
                prop_assert!(r.condition5);
            }
            // swap groups 1 and 2 and flip a sign
            let mut l = t.lambda.clone();
            l.swap_columns(1, 2);
            l.column_mut(2).neg_mut();
            let mut s = t.partition.clone();
            s.swap(0, 1);
            let mut p = t.phi.as_matrix().clone();
            p.swap_rows(1, 2);
            p.swap_columns(1, 2);
            let r2 = check_conditions(&l, &s, Some(&p), &tol()).unwrap();
            prop_assert_eq!((r.condition2, r.condition3, r.condition5), (r2.condition2, r2.condition3, r2.condition5));
            prop_assert_eq!(r.h_set.len(), r2.h_set.len());
            prop_assert_eq!(&r.anderson_rubin_rows, &r2.anderson_rubin_rows);
        }
    }
}

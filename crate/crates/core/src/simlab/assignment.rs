//! Minimum-cost perfect matching on square cost matrices (Hungarian method
//! with row/column potentials, `O(n³)`).

use nalgebra::DMatrix;

/// Returns `(assign, cost)` with `assign[row] = column`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; index 0 is a sentinel column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[owner[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum();
    (assign, total)
}

/// Exhaustive minimum over all permutations; for small `n` and for tests.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let mut best = (Vec::new(), f64::INFINITY);
    crate::model::permutations(n, &mut |p: &[usize]| {
        let c: f64 = p.iter().enumerate().map(|(r, &col)| cost[(r, col)]).sum();
        if c < best.1 {
            best = (p.to_vec(), c);
        }
    });
    if n == 0 {
        best.1 = 0.0;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_example() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let (a, cost) = min_cost_assignment(&c);
        assert_eq!(cost, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..7, vals in proptest::collection::vec(-10.0f64..10.0, 49)) {
            let c = DMatrix::from_fn(n, n, |r, col| vals[r * 7 + col]);
            let (a, cost) = min_cost_assignment(&c);
            let (_, best) = brute_force_assignment(&c);
            prop_assert!((cost - best).abs() < 1e-9);
            let mut seen = a.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}

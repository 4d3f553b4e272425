//! Choosing the number of group factors by BIC, and the exploratory factor
//! analysis baseline.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::alm::{inner_minimize, make_feasible, multi_start_fit, AlmConfig, FitResult};
use crate::error::{Error, Result};
use crate::lbfgs::Termination;
use crate::model::{bifactor_constraint_pairs, FactorCorrelation, FactorParams, SampleCov};
use crate::objective::{discrepancy, discrepancy_value_and_gradient, ParamLayout};
use crate::seed::derive_seed;

/// `l_G + (G−1)G·log(N)/2`.
pub fn bic_bifactor(loss: f64, g: usize, n: usize) -> f64 {
    loss + (g * g.saturating_sub(1)) as f64 * (n as f64).ln() / 2.0
}

/// `l + (JK − K(K−1)/2)·log(N)`.
pub fn bic_efa(loss: f64, k: usize, j: usize, n: usize) -> f64 {
    let free = (j * k) as f64 - (k * k.saturating_sub(1)) as f64 / 2.0;
    loss + free * (n as f64).ln()
}

/// Index of the smallest value; ties resolve to the earliest entry.
fn argmin(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn normalize_candidates(candidates: &[usize], min: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate set is empty".into()));
    }
    let mut c = candidates.to_vec();
    c.sort_unstable();
    c.dedup();
    if c[0] < min {
        return Err(Error::InvalidArgument(format!("candidates must be at least {min}")));
    }
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct BicSweepResult {
    /// Candidate `G` values in increasing order.
    pub candidates: Vec<usize>,
    /// `l_G`, `None` where every start failed.
    pub losses: Vec<Option<f64>>,
    pub bics: Vec<Option<f64>>,
    pub chosen: usize,
    pub fits: Vec<Option<FitResult>>,
    /// Candidates excluded from the argmin, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl BicSweepResult {
    pub fn chosen_fit(&self) -> &FitResult {
        let i = self.candidates.iter().position(|&g| g == self.chosen).expect("chosen is a candidate");
        self.fits[i].as_ref().expect("chosen candidate has a fit")
    }
}

/// Fits every candidate `G` with bi-factor constraints and picks the
/// smallest `BIC_G`, preferring the smaller `G` on ties.
///
/// Each candidate uses a seed derived from `config.seed` and `G`, so the
/// outcome does not depend on candidate order.
pub fn select_g(data: &SampleCov, candidates: &[usize], config: &AlmConfig) -> Result<BicSweepResult> {
    let candidates = normalize_candidates(candidates, 1)?;
    let mut losses = Vec::new();
    let mut bics = Vec::new();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for &g in &candidates {
        let cfg = AlmConfig {
            seed: derive_seed(config.seed, g as u64),
            ..config.clone()
        };
        match multi_start_fit(data, &bifactor_constraint_pairs(g), &cfg) {
            Ok(fit) => {
                losses.push(Some(fit.loss));
                bics.push(Some(bic_bifactor(fit.loss, g, data.n())));
                fits.push(Some(fit));
            }
            Err(e @ Error::AllStartsFailed { .. }) => {
                failures.push((g, e.to_string()));
                losses.push(None);
                bics.push(None);
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let best = argmin(&bics).ok_or(Error::AllStartsFailed {
        starts: config.n_starts * candidates.len(),
    })?;
    Ok(BicSweepResult {
        chosen: candidates[best],
        candidates,
        losses,
        bics,
        fits,
        failures,
    })
}

/// Exploratory fit with orthogonal factors and echelon zeros.
#[derive(Debug, Clone)]
pub struct EfaFit {
    pub lambda: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub loss: f64,
    pub starts_converged: usize,
}

/// Free-loading mask with `λ_ik = 0` for `k > i` on the first `K−1` rows.
pub fn echelon_mask(j: usize, k: usize) -> DMatrix<bool> {
    DMatrix::from_fn(j, k, |i, c| !(i + 1 < k && c > i))
}

/// Minimizes the discrepancy of `ΛΛᵀ + Ψ` over a `J×K` echelon `Λ` and
/// `ψ > 0`, keeping the best of `config.n_starts` random starts.
pub fn efa_fit(data: &SampleCov, k: usize, config: &AlmConfig) -> Result<EfaFit> {
    let j = data.dim();
    if k == 0 || k >= j {
        return Err(Error::InvalidArgument(format!("number of factors must satisfy 1 ≤ K < J, got K={k}, J={j}")));
    }
    let mask = echelon_mask(j, k);
    masked_fit(data, &mask, FactorCorrelation::Orthogonal, config).map(|best| EfaFit {
        loss: best.loss,
        lambda: best.params.lambda,
        psi: best.params.psi,
        starts_converged: best.starts_converged,
    })
}

/// Best unconstrained fit of a loading pattern with fixed zeros.
#[derive(Debug, Clone)]
pub struct MaskedFit {
    pub params: FactorParams,
    pub loss: f64,
    pub starts_converged: usize,
}

/// Multi-start minimization of the discrepancy with the loadings outside
/// `mask` fixed at zero. Used for exploratory and confirmatory fits.
pub fn masked_fit(
    data: &SampleCov,
    mask: &DMatrix<bool>,
    correlation: FactorCorrelation,
    config: &AlmConfig,
) -> Result<MaskedFit> {
    config.validate()?;
    if mask.nrows() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "mask rows",
            expected: data.dim(),
            actual: mask.nrows(),
        });
    }
    let layout = ParamLayout::masked(mask, correlation);
    let runs: Vec<Result<Option<(FactorParams, f64)>>> = (0..config.n_starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, s as u64));
            let lambda = DMatrix::from_fn(mask.nrows(), mask.ncols(), |r, c| {
                let v: f64 = StandardNormal.sample(&mut rng);
                if mask[(r, c)] {
                    v
                } else {
                    0.0
                }
            });
            let n_gamma = match correlation {
                FactorCorrelation::Oblique => crate::model::n_gamma(mask.ncols() - 1),
                FactorCorrelation::Orthogonal => 0,
            };
            let init = FactorParams {
                lambda,
                gamma: DVector::zeros(n_gamma),
                psi: data.cov().diagonal() * 0.5,
                correlation,
            };
            let mut params = make_feasible(init, data)?;
            for _ in 0..=config.max_restarts {
                let out = match inner_minimize(
                    |p: &FactorParams| discrepancy_value_and_gradient(p, data),
                    &layout,
                    &params,
                    config,
                ) {
                    Ok(out) => out,
                    Err(Error::LineSearchFailed { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                params = out.params;
                if out.termination != Termination::MaxIters {
                    let loss = discrepancy(&params, data)?;
                    return Ok(Some((params, loss)));
                }
            }
            Ok(None)
        })
        .collect();
    let mut best: Option<(FactorParams, f64)> = None;
    let mut n_ok = 0;
    for run in runs {
        if let Some((p, loss)) = run? {
            n_ok += 1;
            if best.as_ref().is_none_or(|(_, b)| loss < *b) {
                best = Some((p, loss));
            }
        }
    }
    let (params, loss) = best.ok_or(Error::AllStartsFailed {
        starts: config.n_starts,
    })?;
    Ok(MaskedFit {
        params,
        loss,
        starts_converged: n_ok,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EfaSweepResult {
    /// Candidate group counts `G`; the fitted factor count is `K = G + 1`.
    pub candidates: Vec<usize>,
    pub losses: Vec<Option<f64>>,
    pub bics: Vec<Option<f64>>,
    /// `K̂ − 1`.
    pub chosen: usize,
    pub failures: Vec<(usize, String)>,
}

/// Chooses `Ĝ = K̂ − 1` by exploratory BIC over `K ∈ {G + 1 : G ∈ candidates}`.
pub fn select_g_efa(data: &SampleCov, candidates: &[usize], config: &AlmConfig) -> Result<EfaSweepResult> {
    let candidates = normalize_candidates(candidates, 0)?;
    let (j, n) = (data.dim(), data.n());
    let mut losses = Vec::new();
    let mut bics = Vec::new();
    let mut failures = Vec::new();
    for &g in &candidates {
        let k = g + 1;
        let cfg = AlmConfig {
            seed: derive_seed(config.seed, k as u64),
            ..config.clone()
        };
        match efa_fit(data, k, &cfg) {
            Ok(fit) => {
                losses.push(Some(fit.loss));
                bics.push(Some(bic_efa(fit.loss, k, j, n)));
            }
            Err(e @ (Error::AllStartsFailed { .. } | Error::InvalidArgument(_))) => {
                failures.push((g, e.to_string()));
                losses.push(None);
                bics.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let best = argmin(&bics).ok_or(Error::AllStartsFailed {
        starts: config.n_starts * candidates.len(),
    })?;
    Ok(EfaSweepResult {
        chosen: candidates[best],
        candidates,
        losses,
        bics,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bic_arithmetic() {
        assert_abs_diff_eq!(bic_bifactor(100.0, 3, 500), 100.0 + 3.0 * 500f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(bic_bifactor(100.0, 3, 500), 118.6438, epsilon = 1e-4);
        assert_eq!(bic_bifactor(42.0, 1, 900), 42.0);
        assert!(bic_bifactor(10.0, 2, 100) < bic_bifactor(10.0, 3, 100));

        assert_abs_diff_eq!(bic_efa(50.0, 4, 15, 500), 50.0 + 54.0 * 500f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(bic_efa(50.0, 4, 15, 500), 385.58, epsilon = 1e-2);
        assert_eq!(bic_efa(50.0, 0, 15, 500), 50.0);
        assert!(bic_efa(10.0, 3, 15, 100) < bic_efa(10.0, 4, 15, 100));
    }

    #[test]
    fn argmin_prefers_first_on_ties() {
        assert_eq!(argmin(&[Some(2.0), Some(1.0), Some(1.0)]), Some(1));
        assert_eq!(argmin(&[None, Some(3.0)]), Some(1));
        assert_eq!(argmin(&[None, None]), None);
    }

    #[test]
    fn echelon_pattern() {
        let m = echelon_mask(5, 3);
        // first K−1 = 2 rows carry upper-right zeros
        assert!(m[(0, 0)] && !m[(0, 1)] && !m[(0, 2)]);
        assert!(m[(1, 0)] && m[(1, 1)] && !m[(1, 2)]);
        assert!((2..5).all(|i| (0..3).all(|c| m[(i, c)])));
        assert!(echelon_mask(4, 1).iter().all(|&b| b));
    }

    #[test]
    fn efa_rejects_bad_k() {
        let data = SampleCov::new(DMatrix::identity(3, 3), 10).unwrap();
        assert!(efa_fit(&data, 0, &AlmConfig::default()).is_err());
        assert!(efa_fit(&data, 3, &AlmConfig::default()).is_err());
        assert!(select_g(&data, &[], &AlmConfig::default()).is_err());
    }
}

//! Augmented Lagrangian fitting of exact bi-factor and hierarchical
//! loading structures.
//!
//! Each outer iteration minimizes the augmented objective with L-BFGS, then
//! updates the multipliers `β ← β + c·r` and multiplies the penalty by
//! `c_sigma` whenever the residual norm failed to shrink by `c_theta`.
//! Iteration stops when both the normalized parameter change is below
//! `delta1` and every row is within `delta2` of an exact pattern.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsOptions, Termination};
use crate::model::{ConstraintSet, CorrelationMatrix, FactorCorrelation, FactorParams, SampleCov};
use crate::objective::{
    augmented_value_and_gradient, constraint_residuals, discrepancy, AugLagCoefficients, Gradient,
    ParamLayout,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmConfig {
    /// Initial penalty coefficient.
    pub c0: f64,
    /// Required shrink ratio of the residual norm between outer iterations.
    pub c_theta: f64,
    /// Penalty growth factor.
    pub c_sigma: f64,
    /// Tolerance on the normalized parameter change.
    pub delta1: f64,
    /// Tolerance on the structure criterion, also the extraction threshold.
    pub delta2: f64,
    /// Outer-iteration cap per (re)start.
    pub t_max: usize,
    pub inner_max_iters: usize,
    pub inner_grad_tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    /// Warm restarts allowed after hitting `t_max`.
    pub max_restarts: usize,
    /// Keep a per-iteration log of penalties and multipliers.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c_theta: 0.25,
            c_sigma: 10.0,
            delta1: 1e-2,
            delta2: 1e-2,
            t_max: 1000,
            inner_max_iters: 500,
            inner_grad_tol: 1e-6,
            n_starts: 50,
            seed: 0,
            max_restarts: 3,
            record_trace: false,
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.c0 > 0.0) {
            return bad("c0 must be positive");
        }
        if !(self.c_theta > 0.0 && self.c_theta < 1.0) {
            return bad("c_theta must lie in (0, 1)");
        }
        if !(self.c_sigma > 1.0) {
            return bad("c_sigma must exceed 1");
        }
        if !(self.delta1 > 0.0 && self.delta2 > 0.0) {
            return bad("delta1 and delta2 must be positive");
        }
        if self.t_max == 0 || self.n_starts == 0 {
            return bad("t_max and n_starts must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iters: self.inner_max_iters,
            grad_tol: self.inner_grad_tol,
            ..Default::default()
        }
    }
}

/// Item memberships read off a loading matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    /// Per item: the active group (1-based) with the largest loading, 0 if none.
    pub assignment: Vec<usize>,
    /// Per group column: items (0-based) whose loading exceeds the threshold.
    pub groups: Vec<Vec<usize>>,
    /// No row carries more active group loadings than the pattern allows.
    pub exact: bool,
}

/// Bi-factor extraction: item `j` belongs to group `g` iff `|λ_{j,g}| > delta2`.
pub fn extract_structure(lambda: &DMatrix<f64>, delta2: f64) -> Structure {
    extract_memberships(lambda, delta2, 1)
}

/// Generalized extraction allowing `allowed` active group columns per row.
pub fn extract_memberships(lambda: &DMatrix<f64>, delta2: f64, allowed: usize) -> Structure {
    let g = lambda.ncols().saturating_sub(1);
    let mut groups = vec![Vec::new(); g];
    let mut assignment = vec![0; lambda.nrows()];
    let mut exact = true;
    for j in 0..lambda.nrows() {
        let mut active = 0;
        let mut best = 0.0;
        for k in 1..=g {
            let v = lambda[(j, k)].abs();
            if v > delta2 {
                active += 1;
                groups[k - 1].push(j);
                if v > best {
                    best = v;
                    assignment[j] = k;
                }
            }
        }
        if active > allowed {
            exact = false;
        }
    }
    Structure {
        assignment,
        groups,
        exact,
    }
}

/// `k`-th largest entry (1-based `k`), or 0 when there are fewer than `k`.
pub fn kth_largest(values: &mut [f64], k: usize) -> f64 {
    if k == 0 || values.len() < k {
        return 0.0;
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values[k - 1]
}

/// `max_j h(|λ_{j,1..G}|)` where `h` picks the `(allowed+1)`-th largest
/// absolute group loading: second-largest for bi-factor patterns.
pub fn structure_criterion(lambda: &DMatrix<f64>, allowed: usize) -> f64 {
    let mut row = Vec::with_capacity(lambda.ncols());
    (0..lambda.nrows())
        .map(|j| {
            row.clear();
            row.extend((1..lambda.ncols()).map(|k| lambda[(j, k)].abs()));
            kth_largest(&mut row, allowed + 1)
        })
        .fold(0.0, f64::max)
}

/// `sqrt(‖ΔΛ‖² + ‖Δγ‖² + ‖Δψ‖²) / sqrt(#scalars)`.
pub fn normalized_change(a: &FactorParams, b: &FactorParams) -> f64 {
    let ss = (&a.lambda - &b.lambda).norm_squared()
        + (&a.gamma - &b.gamma).norm_squared()
        + (&a.psi - &b.psi).norm_squared();
    (ss / a.n_scalars() as f64).sqrt()
}

/// One logged outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub restart: usize,
    pub iteration: usize,
    /// Penalty used for this iteration's inner problem.
    pub c: f64,
    /// Penalty handed to the next iteration.
    pub c_next: f64,
    pub beta: DMatrix<f64>,
    pub beta_next: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub residual_norm: f64,
    pub param_change: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FactorParams,
    pub phi: CorrelationMatrix,
    /// Discrepancy at the returned parameters.
    pub loss: f64,
    pub structure: Structure,
    pub converged: bool,
    /// Outer iterations summed over restarts.
    pub outer_iters: usize,
    pub restarts_used: usize,
    /// Final structure criterion (second-largest group loading for
    /// bi-factor patterns, `(allowed+1)`-th largest in general).
    pub max_second_largest: f64,
    /// Normalized parameter change at the last outer iteration.
    pub param_change: f64,
    /// Starts that converged; 1 or 0 for a single fit.
    pub starts_converged: usize,
    pub trace: Option<Vec<OuterStep>>,
}

/// Result of an unconstrained inner solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub params: FactorParams,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Minimizes `objective` over the scalars `layout` marks free, starting at
/// `init`. `ψ` is optimized on the log scale.
pub fn inner_minimize<F>(
    objective: F,
    layout: &ParamLayout,
    init: &FactorParams,
    config: &AlmConfig,
) -> Result<InnerOutcome>
where
    F: Fn(&FactorParams) -> Result<(f64, Gradient)>,
{
    let x0 = layout.pack(init);
    let f = |x: &DVector<f64>| {
        let p = layout.unpack(x);
        objective(&p)
            .ok()
            .map(|(v, g)| (v, layout.pack_gradient(&g, &p)))
    };
    let out = lbfgs::minimize(f, x0, &config.lbfgs_options())?;
    Ok(InnerOutcome {
        params: layout.unpack(&out.x),
        value: out.value,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        termination: out.termination,
    })
}

/// Doubles `ψ` until the implied covariance is positive definite.
pub fn make_feasible(mut params: FactorParams, data: &SampleCov) -> Result<FactorParams> {
    for _ in 0..200 {
        if discrepancy(&params, data).is_ok() {
            return Ok(params);
        }
        params.psi *= 2.0;
    }
    Err(Error::SigmaNotPd)
}

/// Random start: standard normal loadings, `γ = 0`, `ψ = diag(S)/2`.
pub fn random_init(data: &SampleCov, constraints: &ConstraintSet, seed: u64) -> FactorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = data.dim();
    let k = constraints.n_columns();
    let lambda = DMatrix::from_fn(j, k, |_, _| StandardNormal.sample(&mut rng));
    let n_gamma = match constraints.correlation() {
        FactorCorrelation::Oblique => crate::model::n_gamma(constraints.n_groups()),
        FactorCorrelation::Orthogonal => 0,
    };
    FactorParams {
        lambda,
        gamma: DVector::zeros(n_gamma),
        psi: data.cov().diagonal() * 0.5,
        correlation: constraints.correlation(),
    }
}

fn check_init(data: &SampleCov, constraints: &ConstraintSet, init: &FactorParams) -> Result<()> {
    init.validate()?;
    if init.n_items() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial loading rows",
            expected: data.dim(),
            actual: init.n_items(),
        });
    }
    if init.lambda.ncols() != constraints.n_columns() {
        return Err(Error::DimensionMismatch {
            what: "initial loading columns",
            expected: constraints.n_columns(),
            actual: init.lambda.ncols(),
        });
    }
    if init.correlation != constraints.correlation() {
        return Err(Error::InvalidArgument("initial correlation model does not match constraints".into()));
    }
    Ok(())
}

/// Runs the augmented Lagrangian iterations from `init`.
///
/// Failure to converge is reported through [`FitResult::converged`].
pub fn alm_fit(
    data: &SampleCov,
    constraints: &ConstraintSet,
    config: &AlmConfig,
    init: FactorParams,
) -> Result<FitResult> {
    config.validate()?;
    check_init(data, constraints, &init)?;
    let j = data.dim();
    let allowed = constraints.active_per_row();
    let layout = ParamLayout::dense(j, constraints.n_columns(), constraints.correlation());

    let mut params = make_feasible(init, data)?;
    let mut trace = config.record_trace.then(Vec::new);
    let mut outer_total = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut restarts_used = 0;

    'restarts: for restart in 0..=config.max_restarts {
        restarts_used = restart;
        let mut coeffs = AugLagCoefficients::zeros(j, constraints.len(), config.c0);
        let mut prev_norm = constraint_residuals(&params.lambda, constraints).norm();
        for t in 1..=config.t_max {
            outer_total += 1;
            let objective = |p: &FactorParams| augmented_value_and_gradient(p, &coeffs, constraints, data);
            let next = match inner_minimize(objective, &layout, &params, config) {
                Ok(out) => out.params,
                Err(Error::LineSearchFailed { .. }) => break 'restarts,
                Err(e) => return Err(e),
            };
            let residuals = constraint_residuals(&next.lambda, constraints);
            let norm = residuals.norm();
            let change = normalized_change(&next, &params);
            let criterion = structure_criterion(&next.lambda, allowed);

            let beta_prev = trace.as_ref().map(|_| coeffs.beta.clone());
            let c_used = coeffs.c;
            coeffs.beta += &residuals * c_used;
            if norm > config.c_theta * prev_norm {
                coeffs.c *= config.c_sigma;
            }
            if let (Some(log), Some(beta)) = (trace.as_mut(), beta_prev) {
                log.push(OuterStep {
                    restart,
                    iteration: t,
                    c: c_used,
                    c_next: coeffs.c,
                    beta,
                    beta_next: coeffs.beta.clone(),
                    residuals: residuals.clone(),
                    residual_norm: norm,
                    param_change: change,
                    criterion,
                });
            }
            prev_norm = norm;
            params = next;
            last_change = change;
            if change < config.delta1 && criterion < config.delta2 {
                converged = true;
                break 'restarts;
            }
        }
    }

    let loss = discrepancy(&params, data)?;
    let structure = extract_memberships(&params.lambda, config.delta2, allowed);
    let criterion = structure_criterion(&params.lambda, allowed);
    let converged = converged && structure.exact;
    Ok(FitResult {
        phi: params.phi(),
        params,
        loss,
        structure,
        converged,
        outer_iters: outer_total,
        restarts_used,
        max_second_largest: criterion,
        param_change: last_change,
        starts_converged: usize::from(converged),
        trace,
    })
}

/// Fits from `config.n_starts` seeded random starts (in parallel) and keeps
/// the converged fit with the smallest discrepancy; ties go to the lower
/// start index.
pub fn multi_start_fit(
    data: &SampleCov,
    constraints: &ConstraintSet,
    config: &AlmConfig,
) -> Result<FitResult> {
    config.validate()?;
    let fits: Vec<Result<FitResult>> = (0..config.n_starts)
        .into_par_iter()
        .map(|s| {
            let init = random_init(data, constraints, derive_seed(config.seed, s as u64));
            alm_fit(data, constraints, config, init)
        })
        .collect();
    let mut best: Option<FitResult> = None;
    let mut n_ok = 0;
    for fit in fits {
        let fit = fit?;
        if !fit.converged {
            continue;
        }
        n_ok += 1;
        if best.as_ref().is_none_or(|b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    let mut best = best.ok_or(Error::AllStartsFailed {
        starts: config.n_starts,
    })?;
    best.starts_converged = n_ok;
    Ok(best)
}

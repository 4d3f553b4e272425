//! Normal-theory discrepancy, the augmented Lagrangian and their gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{phi_jacobian, ConstraintSet, FactorCorrelation, FactorParams, SampleCov};

/// Multipliers `β_{j,(k,k′)}` (one row per item, one column per constraint
/// pair) and the penalty coefficient `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugLagCoefficients {
    pub beta: DMatrix<f64>,
    pub c: f64,
}

impl AugLagCoefficients {
    pub fn new(beta: DMatrix<f64>, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("penalty coefficient must be non-negative, got {c}")));
        }
        Ok(Self { beta, c })
    }

    pub fn zeros(n_items: usize, n_pairs: usize, c: f64) -> Self {
        Self {
            beta: DMatrix::zeros(n_items, n_pairs),
            c,
        }
    }

    fn check(&self, j: usize, constraints: &ConstraintSet) -> Result<()> {
        if self.beta.nrows() != j || self.beta.ncols() != constraints.len() {
            return Err(Error::DimensionMismatch {
                what: "multiplier matrix",
                expected: j * constraints.len(),
                actual: self.beta.len(),
            });
        }
        Ok(())
    }
}

/// Gradient blocks with respect to `Λ`, `γ` and `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub lambda: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub psi: DVector<f64>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        (self.lambda.norm_squared() + self.gamma.norm_squared() + self.psi.norm_squared()).sqrt()
    }
}

/// Σ, its Cholesky factor and derived quantities.
struct SigmaFactor {
    inv: DMatrix<f64>,
    log_det: f64,
}

impl SigmaFactor {
    fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::SigmaNotPd);
        }
        let chol = sigma.cholesky().ok_or(Error::SigmaNotPd)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SigmaNotPd);
        }
        Ok(Self {
            inv: chol.inverse(),
            log_det,
        })
    }
}

fn check_dims(params: &FactorParams, data: &SampleCov) -> Result<()> {
    if params.n_items() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "loading rows vs covariance dimension",
            expected: data.dim(),
            actual: params.n_items(),
        });
    }
    Ok(())
}

fn loss_from(factor: &SigmaFactor, data: &SampleCov) -> f64 {
    let trace = factor.inv.component_mul(data.cov()).sum();
    let j = data.dim() as f64;
    let v = data.n() as f64 * (factor.log_det + trace - data.log_det() - j);
    v.max(0.0)
}

/// `N·(log det Σ + tr(SΣ⁻¹) − log det S − J)` at `Σ = ΛΦΛᵀ + Ψ`.
pub fn discrepancy(params: &FactorParams, data: &SampleCov) -> Result<f64> {
    check_dims(params, data)?;
    let factor = SigmaFactor::new(params.implied_cov())?;
    Ok(loss_from(&factor, data))
}

/// Discrepancy of an arbitrary model covariance.
pub fn discrepancy_of_cov(sigma: &DMatrix<f64>, data: &SampleCov) -> Result<f64> {
    if sigma.nrows() != data.dim() || !sigma.is_square() {
        return Err(Error::DimensionMismatch {
            what: "model covariance",
            expected: data.dim(),
            actual: sigma.nrows(),
        });
    }
    let factor = SigmaFactor::new(sigma.clone())?;
    Ok(loss_from(&factor, data))
}

/// Products `λ_jk·λ_jk′`, one row per item and one column per pair.
pub fn constraint_residuals(lambda: &DMatrix<f64>, constraints: &ConstraintSet) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(lambda.nrows(), constraints.len());
    for (p, &(k, kk)) in constraints.pairs().iter().enumerate() {
        for j in 0..lambda.nrows() {
            r[(j, p)] = lambda[(j, k)] * lambda[(j, kk)];
        }
    }
    r
}

fn penalty_terms(residuals: &DMatrix<f64>, coeffs: &AugLagCoefficients) -> f64 {
    coeffs.beta.component_mul(residuals).sum() + coeffs.c * residuals.norm_squared()
}

/// Discrepancy plus `Σ β·r + c·Σ r²`.
pub fn augmented_objective(
    params: &FactorParams,
    coeffs: &AugLagCoefficients,
    constraints: &ConstraintSet,
    data: &SampleCov,
) -> Result<f64> {
    coeffs.check(params.n_items(), constraints)?;
    let loss = discrepancy(params, data)?;
    let r = constraint_residuals(&params.lambda, constraints);
    Ok(loss + penalty_terms(&r, coeffs))
}

/// Analytic gradient of [`augmented_objective`].
pub fn augmented_gradient(
    params: &FactorParams,
    coeffs: &AugLagCoefficients,
    constraints: &ConstraintSet,
    data: &SampleCov,
) -> Result<Gradient> {
    augmented_value_and_gradient(params, coeffs, constraints, data).map(|(_, g)| g)
}

/// Value and gradient from a single factorization of Σ.
pub fn augmented_value_and_gradient(
    params: &FactorParams,
    coeffs: &AugLagCoefficients,
    constraints: &ConstraintSet,
    data: &SampleCov,
) -> Result<(f64, Gradient)> {
    coeffs.check(params.n_items(), constraints)?;
    let (loss, mut grad) = discrepancy_value_and_gradient(params, data)?;
    let r = constraint_residuals(&params.lambda, constraints);
    let value = loss + penalty_terms(&r, coeffs);
    for (p, &(k, kk)) in constraints.pairs().iter().enumerate() {
        for j in 0..params.n_items() {
            let w = coeffs.beta[(j, p)] + 2.0 * coeffs.c * r[(j, p)];
            grad.lambda[(j, k)] += w * params.lambda[(j, kk)];
            grad.lambda[(j, kk)] += w * params.lambda[(j, k)];
        }
    }
    Ok((value, grad))
}

/// Discrepancy and its gradient.
///
/// With `M = N(Σ⁻¹ − Σ⁻¹SΣ⁻¹)`: `∂/∂Λ = 2MΛΦ`, `∂/∂ψ_j = M_jj` and
/// `∂/∂γ_p = ⟨ΛᵀMΛ, ∂Φ/∂γ_p⟩`.
pub fn discrepancy_value_and_gradient(
    params: &FactorParams,
    data: &SampleCov,
) -> Result<(f64, Gradient)> {
    check_dims(params, data)?;
    let phi = params.phi();
    let phi = phi.as_matrix();
    let lphi = &params.lambda * phi;
    let mut sigma = &lphi * params.lambda.transpose();
    for (i, p) in params.psi.iter().enumerate() {
        sigma[(i, i)] += p;
    }
    let factor = SigmaFactor::new(sigma)?;
    let loss = loss_from(&factor, data);

    let n = data.n() as f64;
    let inv_s = &factor.inv * data.cov();
    let m = (&factor.inv - &inv_s * &factor.inv) * n;

    let grad_lambda = (&m * &lphi) * 2.0;
    let grad_psi = m.diagonal();
    let grad_gamma = match params.correlation {
        FactorCorrelation::Oblique if !params.gamma.is_empty() => {
            let inner = params.lambda.transpose() * &m * &params.lambda;
            let jac = phi_jacobian(params.gamma.as_slice(), params.n_groups())?;
            DVector::from_iterator(jac.len(), jac.iter().map(|d| inner.component_mul(d).sum()))
        }
        _ => DVector::zeros(params.gamma.len()),
    };
    Ok((
        loss,
        Gradient {
            lambda: grad_lambda,
            gamma: grad_gamma,
            psi: grad_psi,
        },
    ))
}

/// Which scalars of [`FactorParams`] are optimized, and how they map onto a
/// flat vector: free loadings (column-major), then `γ`, then `log ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    n_items: usize,
    n_cols: usize,
    free: Vec<bool>,
    correlation: FactorCorrelation,
}

impl ParamLayout {
    /// Every loading free.
    pub fn dense(n_items: usize, n_cols: usize, correlation: FactorCorrelation) -> Self {
        Self {
            n_items,
            n_cols,
            free: vec![true; n_items * n_cols],
            correlation,
        }
    }

    /// Loadings free only where `mask[(j, k)]` is true.
    pub fn masked(mask: &DMatrix<bool>, correlation: FactorCorrelation) -> Self {
        Self {
            n_items: mask.nrows(),
            n_cols: mask.ncols(),
            free: mask.iter().copied().collect(),
            correlation,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn correlation(&self) -> FactorCorrelation {
        self.correlation
    }

    pub fn is_free(&self, j: usize, k: usize) -> bool {
        self.free[k * self.n_items + j]
    }

    fn n_gamma(&self) -> usize {
        match self.correlation {
            FactorCorrelation::Oblique => crate::model::n_gamma(self.n_cols.saturating_sub(1)),
            FactorCorrelation::Orthogonal => 0,
        }
    }

    pub fn n_free_loadings(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.n_free_loadings() + self.n_gamma() + self.n_items
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, params: &FactorParams) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(
            params
                .lambda
                .iter()
                .zip(&self.free)
                .filter(|(_, &f)| f)
                .map(|(v, _)| *v),
        );
        x.extend(params.gamma.iter().take(self.n_gamma()).copied());
        x.extend(params.psi.iter().map(|p| p.ln()));
        DVector::from_vec(x)
    }

    pub fn unpack(&self, x: &DVector<f64>) -> FactorParams {
        let mut lambda = DMatrix::zeros(self.n_items, self.n_cols);
        let mut it = x.iter();
        for (slot, &f) in lambda.iter_mut().zip(&self.free) {
            if f {
                *slot = *it.next().expect("vector shorter than layout");
            }
        }
        let gamma = DVector::from_iterator(self.n_gamma(), it.by_ref().take(self.n_gamma()).copied());
        let psi = DVector::from_iterator(self.n_items, it.map(|e| e.exp()));
        FactorParams {
            lambda,
            gamma,
            psi,
            correlation: self.correlation,
        }
    }

    /// Chains a [`Gradient`] into the flat coordinates (`ψ = exp(η)`).
    pub fn pack_gradient(&self, grad: &Gradient, params: &FactorParams) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(
            grad.lambda
                .iter()
                .zip(&self.free)
                .filter(|(_, &f)| f)
                .map(|(v, _)| *v),
        );
        x.extend(grad.gamma.iter().take(self.n_gamma()).copied());
        x.extend(grad.psi.iter().zip(params.psi.iter()).map(|(g, p)| g * p));
        DVector::from_vec(x)
    }
}

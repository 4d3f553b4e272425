//! Domain types: sample covariance, factor parameters, correlation
//! reparameterization and constraint patterns.

mod constraints;
mod phi;

pub use constraints::{
    bifactor_constraint_pairs, hierarchy_constraint_pairs, ConstraintSet, FactorCorrelation,
    HierarchyTree,
};
pub(crate) use constraints::permutations;
pub use phi::{
    build_phi, cholesky_factor, cholesky_factor_recursive, gamma_index, n_gamma, phi_jacobian,
    CorrelationMatrix, Z_CLAMP,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on input covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A validated sample covariance matrix with its sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCov {
    s: DMatrix<f64>,
    n: usize,
    log_det: f64,
}

impl SampleCov {
    /// Validates symmetry (relative to the largest entry), positive
    /// definiteness and `n ≥ 2`. The stored matrix is exactly symmetrized.
    pub fn new(s: DMatrix<f64>, n: usize) -> Result<Self> {
        if !s.is_square() || s.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "covariance rows/cols",
                expected: s.nrows(),
                actual: s.ncols(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let scale = s.amax().max(f64::MIN_POSITIVE);
        let asym = (&s - s.transpose()).amax() / scale;
        if asym > SYMMETRY_TOL {
            return Err(Error::AsymmetricMatrix(asym));
        }
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { s, n, log_det })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of observed variables `J`.
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// Loadings, correlation parameters and uniquenesses.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    /// `J × (G+1)`; column 0 is the general factor.
    pub lambda: DMatrix<f64>,
    /// Packed correlation parameters; empty for orthogonal models.
    pub gamma: DVector<f64>,
    /// Residual variances, strictly positive.
    pub psi: DVector<f64>,
    pub correlation: FactorCorrelation,
}

impl FactorParams {
    pub fn new(
        lambda: DMatrix<f64>,
        gamma: DVector<f64>,
        psi: DVector<f64>,
        correlation: FactorCorrelation,
    ) -> Result<Self> {
        let p = Self {
            lambda,
            gamma,
            psi,
            correlation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_items(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.lambda.ncols().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.lambda.nrows();
        if self.lambda.ncols() == 0 {
            return Err(Error::InvalidArgument("loading matrix has no columns".into()));
        }
        if self.psi.len() != j {
            return Err(Error::DimensionMismatch {
                what: "psi",
                expected: j,
                actual: self.psi.len(),
            });
        }
        let want = match self.correlation {
            FactorCorrelation::Oblique => n_gamma(self.n_groups()),
            FactorCorrelation::Orthogonal => 0,
        };
        if self.gamma.len() != want {
            return Err(Error::DimensionMismatch {
                what: "gamma",
                expected: want,
                actual: self.gamma.len(),
            });
        }
        if self.psi.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("psi entries must be positive and finite".into()));
        }
        if self.gamma.iter().chain(self.lambda.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(())
    }

    /// The factor correlation matrix implied by `gamma`.
    pub fn phi(&self) -> CorrelationMatrix {
        match self.correlation {
            FactorCorrelation::Oblique => build_phi(self.gamma.as_slice(), self.n_groups())
                .expect("gamma length checked at construction"),
            FactorCorrelation::Orthogonal => CorrelationMatrix::identity(self.lambda.ncols()),
        }
    }

    /// `ΛΦΛᵀ + diag(ψ)`.
    pub fn implied_cov(&self) -> DMatrix<f64> {
        let phi = self.phi();
        let mut sigma = &self.lambda * phi.as_matrix() * self.lambda.transpose();
        for (i, p) in self.psi.iter().enumerate() {
            sigma[(i, i)] += p;
        }
        sigma
    }

    /// Total count of free scalars `J(G+1) + |γ| + J`.
    pub fn n_scalars(&self) -> usize {
        self.lambda.len() + self.gamma.len() + self.psi.len()
    }
}

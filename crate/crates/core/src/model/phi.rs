//! Unconstrained parameterization of the factor correlation matrix.
//!
//! The group block of `Φ` is `UᵀU`, with `U` upper triangular and unit-norm
//! columns built from `z = tanh(γ)`. The general factor is kept uncorrelated
//! with every group factor, so `Φ = blockdiag(1, UᵀU)`.
//!
//! `γ` is packed column by column over the strict upper triangle of `U`:
//! `(0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ...` (0-based group indices).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest admissible `|z|`; keeps every `sqrt(1 - z²)` strictly positive.
pub const Z_CLAMP: f64 = 1.0 - 1e-12;

/// Number of free correlation parameters for `g` group factors.
pub fn n_gamma(g: usize) -> usize {
    g * g.saturating_sub(1) / 2
}

/// Position of `γ_{ij}` (`i < j`, 0-based group indices) in the packed vector.
#[inline]
pub fn gamma_index(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

/// A `(G+1)×(G+1)` factor correlation matrix with the general factor
/// uncorrelated with the group factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(k: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(k, k))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

fn check_len(gamma: &[f64], g: usize) -> Result<()> {
    if gamma.len() != n_gamma(g) {
        return Err(Error::DimensionMismatch {
            what: "gamma",
            expected: n_gamma(g),
            actual: gamma.len(),
        });
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("gamma must be finite".into()));
    }
    Ok(())
}

#[inline]
fn clamped_tanh(x: f64) -> f64 {
    x.tanh().clamp(-Z_CLAMP, Z_CLAMP)
}

/// The `G×G` upper-triangular factor `U` in product form.
///
/// `U[i][j] = z_ij · Π_{k<i} sqrt(1 - z_kj²)` for `i < j` and
/// `U[j][j] = Π_{k<j} sqrt(1 - z_kj²)`.
pub fn cholesky_factor(gamma: &[f64], g: usize) -> Result<DMatrix<f64>> {
    check_len(gamma, g)?;
    let mut u = DMatrix::zeros(g, g);
    for j in 0..g {
        let mut prod = 1.0;
        for i in 0..j {
            let z = clamped_tanh(gamma[gamma_index(i, j)]);
            u[(i, j)] = z * prod;
            prod *= (1.0 - z * z).sqrt();
        }
        u[(j, j)] = prod;
    }
    Ok(u)
}

fn embed(group_block: &DMatrix<f64>) -> DMatrix<f64> {
    let g = group_block.nrows();
    let mut phi = DMatrix::zeros(g + 1, g + 1);
    phi[(0, 0)] = 1.0;
    phi.view_mut((1, 1), (g, g)).copy_from(group_block);
    phi
}

/// Builds `Φ(γ)` for `g` group factors.
pub fn build_phi(gamma: &[f64], g: usize) -> Result<CorrelationMatrix> {
    let u = cholesky_factor(gamma, g)?;
    let mut block = u.transpose() * &u;
    // columns of U have unit norm; pin the diagonal and symmetry exactly
    for a in 0..g {
        block[(a, a)] = 1.0;
        for b in (a + 1)..g {
            let v = 0.5 * (block[(a, b)] + block[(b, a)]);
            block[(a, b)] = v;
            block[(b, a)] = v;
        }
    }
    Ok(CorrelationMatrix(embed(&block)))
}

/// `U` via the original recursion, dividing by `z_{(i-1)j}`.
///
/// Undefined whenever some `z_{(i-1)j}` is exactly zero; returns `None` then.
/// Kept as an independent route for cross-checking [`cholesky_factor`].
pub fn cholesky_factor_recursive(gamma: &[f64], g: usize) -> Result<Option<DMatrix<f64>>> {
    check_len(gamma, g)?;
    let z = |i: usize, j: usize| clamped_tanh(gamma[gamma_index(i, j)]);
    let mut u = DMatrix::zeros(g, g);
    for j in 0..g {
        for i in 0..=j {
            u[(i, j)] = if i == 0 && j == 0 {
                1.0
            } else if i == 0 {
                z(0, j)
            } else {
                let zp = z(i - 1, j);
                if zp == 0.0 {
                    return Ok(None);
                }
                let carry = u[(i - 1, j)] / zp * (1.0 - zp * zp).sqrt();
                if i < j {
                    z(i, j) * carry
                } else {
                    carry
                }
            };
        }
    }
    Ok(Some(u))
}

/// Derivatives `∂Φ/∂γ_ij`, one `(G+1)×(G+1)` matrix per packed entry of `γ`.
pub fn phi_jacobian(gamma: &[f64], g: usize) -> Result<Vec<DMatrix<f64>>> {
    let u = cholesky_factor(gamma, g)?;
    let mut out = Vec::with_capacity(n_gamma(g));
    for j in 0..g {
        let zs: Vec<f64> = (0..j).map(|i| clamped_tanh(gamma[gamma_index(i, j)])).collect();
        let ss: Vec<f64> = zs.iter().map(|z| (1.0 - z * z).sqrt()).collect();
        for i in 0..j {
            let dz = 1.0 - zs[i] * zs[i];
            // derivative of column j of U with respect to z_ij
            let mut du = vec![0.0; g];
            let prod_before: f64 = ss[..i].iter().product();
            du[i] = prod_before;
            let ds = -zs[i] / ss[i];
            let mut prod_excl = prod_before;
            for r in (i + 1)..j {
                prod_excl *= if r - 1 == i { 1.0 } else { ss[r - 1] };
                du[r] = zs[r] * prod_excl * ds;
            }
            if i + 1 == j {
                du[j] = prod_before * ds;
            } else {
                du[j] = prod_excl * ss[j - 1] * ds;
            }
            // dΦ_block = e_j (du' U) + (U' du) e_j'
            let mut block = DMatrix::zeros(g, g);
            for b in 0..g {
                let v: f64 = (0..g).map(|r| du[r] * u[(r, b)]).sum::<f64>() * dz;
                block[(j, b)] += v;
                block[(b, j)] += v;
            }
            block[(j, j)] = 0.0;
            out.push(embed_zero(&block));
        }
    }
    Ok(out)
}

fn embed_zero(block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = embed(block);
    m[(0, 0)] = 0.0;
    m
}

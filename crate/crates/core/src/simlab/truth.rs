//! Ground-truth models and simulated sample covariances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_phi, n_gamma, CorrelationMatrix, FactorCorrelation, FactorParams, HierarchyTree, SampleCov};

#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub lambda: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub phi: CorrelationMatrix,
    pub psi: DVector<f64>,
    /// Items (0-based) per group column `1..=G`.
    pub partition: Vec<Vec<usize>>,
    pub hierarchy: Option<HierarchyTree>,
}

impl TruthModel {
    pub fn n_items(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.lambda.ncols() - 1
    }

    /// `ΛΦΛᵀ + Ψ`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let mut s = &self.lambda * self.phi.as_matrix() * self.lambda.transpose();
        for (i, p) in self.psi.iter().enumerate() {
            s[(i, i)] += p;
        }
        s
    }

    pub fn params(&self) -> FactorParams {
        FactorParams {
            lambda: self.lambda.clone(),
            gamma: self.gamma.clone(),
            psi: self.psi.clone(),
            correlation: if self.hierarchy.is_some() {
                FactorCorrelation::Orthogonal
            } else {
                FactorCorrelation::Oblique
            },
        }
    }

    /// Population covariance wrapped as noiseless data with sample size `n`.
    pub fn population_cov(&self, n: usize) -> Result<SampleCov> {
        SampleCov::new(self.sigma(), n)
    }

    /// Items whose true memberships break the hierarchy (members of two
    /// factors neither of which contains the other). Always empty for
    /// bi-factor truths and for disjoint hierarchical blocks.
    pub fn ambiguous_items(&self) -> Vec<usize> {
        let Some(tree) = &self.hierarchy else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for item in 0..self.n_items() {
            let member: Vec<usize> = (0..self.partition.len())
                .filter(|&g| self.partition[g].contains(&item))
                .map(|g| g + 1)
                .collect();
            let clash = member.iter().enumerate().any(|(i, &a)| {
                member[i + 1..]
                    .iter()
                    .any(|&b| !tree.is_ancestor(a, b) && !tree.is_ancestor(b, a))
            });
            if clash {
                out.push(item);
            }
        }
        out
    }
}

fn group_loading<R: Rng>(rng: &mut R) -> f64 {
    let x: f64 = StandardNormal.sample(rng);
    x.signum() * (0.1 + 2.0 * x.abs())
}

/// Bi-factor truth: group `g` holds items `g, g+G, g+2G, …`; general
/// loadings `U(0,1)`; group loadings `sign(x)(0.1 + 2|x|)`; `γ ~ N(0, 1/4)`;
/// `Ψ = I`.
pub fn generate_bifactor_truth(j: usize, g: usize, seed: u64) -> Result<TruthModel> {
    if g == 0 || j == 0 || j % g != 0 {
        return Err(Error::InvalidArgument(format!(
            "number of items ({j}) must be a positive multiple of the number of groups ({g})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = DVector::from_fn(n_gamma(g), |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        0.5 * x
    });
    let mut lambda = DMatrix::zeros(j, g + 1);
    let mut partition = vec![Vec::new(); g];
    for item in 0..j {
        lambda[(item, 0)] = rng.random::<f64>();
        let grp = item % g;
        lambda[(item, grp + 1)] = group_loading(&mut rng);
        partition[grp].push(item);
    }
    let phi = build_phi(gamma.as_slice(), g)?;
    Ok(TruthModel {
        lambda,
        gamma,
        phi,
        psi: DVector::from_element(j, 1.0),
        partition,
        hierarchy: None,
    })
}

/// How the nested blocks of the three-layer truth treat their boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockBoundary {
    /// Closed ranges such as `{1..J/2}` and `{J/2..J}`; the boundary item
    /// belongs to both sibling blocks.
    Inclusive,
    /// Half-open ranges: `{1..J/2}` and `{J/2+1..J}`.
    #[default]
    Disjoint,
}

/// 1-based inclusive ranges for factors F1..F7 of the three-layer tree.
fn hier_blocks(j: usize, boundary: BlockBoundary) -> [(usize, usize); 7] {
    let (h, q, tq) = (j / 2, j / 4, 3 * j / 4);
    let o = match boundary {
        BlockBoundary::Inclusive => 0,
        BlockBoundary::Disjoint => 1,
    };
    [
        (1, j),
        (1, h),
        (h + o, j),
        (1, q),
        (q + o, h),
        (h + o, tq),
        (tq + o, j),
    ]
}

/// Three-layer hierarchical truth on the seven-factor binary tree with
/// orthogonal factors and `Ψ = I`.
pub fn generate_hier_truth(j: usize, seed: u64, boundary: BlockBoundary) -> Result<TruthModel> {
    if j == 0 || j % 4 != 0 {
        return Err(Error::InvalidArgument(format!("number of items ({j}) must be a positive multiple of 4")));
    }
    let tree = HierarchyTree::three_layer_binary();
    let blocks = hier_blocks(j, boundary);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda = DMatrix::zeros(j, 7);
    for item in 0..j {
        lambda[(item, 0)] = rng.random::<f64>();
        for (k, &(lo, hi)) in blocks.iter().enumerate().skip(1) {
            if (lo..=hi).contains(&(item + 1)) {
                lambda[(item, k)] = group_loading(&mut rng);
            }
        }
    }
    let partition = blocks[1..]
        .iter()
        .map(|&(lo, hi)| (lo - 1..hi).collect())
        .collect();
    Ok(TruthModel {
        lambda,
        gamma: DVector::zeros(0),
        phi: CorrelationMatrix::identity(7),
        psi: DVector::from_element(j, 1.0),
        partition,
        hierarchy: Some(tree),
    })
}

/// Draws `n` zero-mean normal vectors with covariance `Σ*` and returns their
/// mean-centered sample covariance with divisor `n`.
pub fn sample_covariance(truth: &TruthModel, n: usize, seed: u64) -> Result<SampleCov> {
    let j = truth.n_items();
    if n < j + 1 {
        return Err(Error::InvalidArgument(format!("sample size {n} must be at least J + 1 = {}", j + 1)));
    }
    let chol = truth.sigma().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: DMatrix<f64> = DMatrix::from_fn(n, j, |_, _| StandardNormal.sample(&mut rng));
    let x = z * l.transpose();
    SampleCov::new(covariance_of_rows(&x), n)
}

/// Mean-centered covariance of the rows of `x` with divisor `nrows`.
pub fn covariance_of_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut s = centered.transpose() * &centered / n;
    // exact symmetry
    let st = s.transpose();
    s += st;
    s *= 0.5;
    s
}

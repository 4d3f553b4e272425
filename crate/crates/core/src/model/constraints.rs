//! Zero-product constraint sets and factor hierarchies.
//!
//! Column indices here are 0-based columns of the loading matrix: column 0
//! is the general (root) factor and group factors occupy `1..=G`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether group factors are allowed to correlate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorCorrelation {
    /// `Φ = blockdiag(1, Φ_groups(γ))`.
    Oblique,
    /// `Φ = I`; used for hierarchical and exploratory fits.
    Orthogonal,
}

/// Column pairs `(k, k′)` whose loadings may not both be nonzero on any row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    n_groups: usize,
    pairs: Vec<(usize, usize)>,
    active_per_row: usize,
    correlation: FactorCorrelation,
}

impl ConstraintSet {
    /// Builds a constraint set from explicit pairs; pairs are normalized to
    /// `k < k′`, sorted and checked for range and duplicates.
    pub fn new(
        n_groups: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        active_per_row: usize,
        correlation: FactorCorrelation,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (a, b) in pairs {
            let (k, kk) = if a < b { (a, b) } else { (b, a) };
            if k == 0 || kk > n_groups || k == kk {
                return Err(Error::InvalidArgument(format!(
                    "constraint pair ({a}, {b}) out of range for {n_groups} group factors"
                )));
            }
            if !seen.insert((k, kk)) {
                return Err(Error::InvalidArgument(format!("duplicate constraint pair ({k}, {kk})")));
            }
        }
        if active_per_row == 0 {
            return Err(Error::InvalidArgument("active_per_row must be at least 1".into()));
        }
        Ok(Self {
            n_groups,
            pairs: seen.into_iter().collect(),
            active_per_row,
            correlation,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Number of loading columns, `G + 1`.
    pub fn n_columns(&self) -> usize {
        self.n_groups + 1
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// How many group loadings a row may carry in an exact structure
    /// (1 for bi-factor, the tree height for a hierarchy).
    pub fn active_per_row(&self) -> usize {
        self.active_per_row
    }

    pub fn correlation(&self) -> FactorCorrelation {
        self.correlation
    }
}

/// All unordered pairs of group columns: the bi-factor pattern.
pub fn bifactor_constraint_pairs(g: usize) -> ConstraintSet {
    let pairs = (1..=g).flat_map(|k| ((k + 1)..=g).map(move |kk| (k, kk)));
    ConstraintSet::new(g, pairs, 1, FactorCorrelation::Oblique)
        .expect("bi-factor pairs are valid by construction")
}

/// Rooted factor tree; node 0 is the general factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyTree {
    parent: Vec<Option<usize>>,
}

impl HierarchyTree {
    /// From a parent table indexed by node; exactly one entry must be `None`
    /// and it must be node 0.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        if parent.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        if parent[0].is_some() {
            return Err(Error::MalformedTree("node 1 must be the root".into()));
        }
        for (node, p) in parent.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::MalformedTree(format!("node {} has no parent", node + 1))),
                Some(p) if *p >= parent.len() => {
                    return Err(Error::MalformedTree(format!(
                        "node {} has unknown parent {}",
                        node + 1,
                        p + 1
                    )))
                }
                _ => {}
            }
        }
        let tree = Self { parent };
        for node in 0..tree.len() {
            let mut cur = node;
            let mut steps = 0;
            while let Some(p) = tree.parent[cur] {
                cur = p;
                steps += 1;
                if steps > tree.len() {
                    return Err(Error::MalformedTree(format!("cycle through node {}", node + 1)));
                }
            }
        }
        Ok(tree)
    }

    /// From 1-based `(child, parent)` pairs; the root appears as `(1, 0)`.
    pub fn from_edges(edges: &[(usize, usize)]) -> Result<Self> {
        let k = edges.iter().map(|&(c, _)| c).max().unwrap_or(0);
        let mut parent: Vec<Option<Option<usize>>> = vec![None; k];
        for &(child, par) in edges {
            if child == 0 {
                return Err(Error::MalformedTree("factor ids start at 1".into()));
            }
            if parent[child - 1].is_some() {
                return Err(Error::MalformedTree(format!("factor {child} listed twice")));
            }
            parent[child - 1] = Some(if par == 0 { None } else { Some(par - 1) });
        }
        let parent = parent
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::MalformedTree(format!("factor {} missing", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parents(parent)
    }

    /// Root with `g` leaf children.
    pub fn two_layer(g: usize) -> Self {
        let mut parent = vec![None];
        parent.extend(std::iter::repeat_n(Some(0), g));
        Self { parent }
    }

    /// The seven-factor, three-layer binary tree: F2, F3 under F1; F4, F5
    /// under F2; F6, F7 under F3.
    pub fn three_layer_binary() -> Self {
        Self {
            parent: vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.parent[c] == Some(node)).collect()
    }

    pub fn depth(&self, node: usize) -> usize {
        let mut d = 0;
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            d += 1;
            cur = p;
        }
        d
    }

    /// Longest root-to-leaf path length in edges.
    pub fn height(&self) -> usize {
        (0..self.len()).map(|n| self.depth(n)).max().unwrap_or(0)
    }

    /// True when `a` is a proper ancestor of `b`.
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        while let Some(p) = self.parent[cur] {
            if p == a {
                return true;
            }
            cur = p;
        }
        false
    }

    /// 1-based `(child, parent)` edges, root as `(1, 0)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .map(|(c, p)| (c + 1, p.map_or(0, |p| p + 1)))
            .collect()
    }

    /// Every node relabeling that maps the tree onto itself, as
    /// `perm[node] = image`. Generated by swapping isomorphic sibling subtrees.
    pub fn automorphisms(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut perm = vec![usize::MAX; self.len()];
        perm[0] = 0;
        self.extend_automorphisms(vec![(0, 0)], &mut perm, &mut out);
        out
    }

    fn extend_automorphisms(
        &self,
        pending: Vec<(usize, usize)>,
        perm: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let Some((&(src, dst), rest)) = pending.split_first() else {
            out.push(perm.clone());
            return;
        };
        let src_children = self.children(src);
        let dst_children = self.children(dst);
        // try every bijection between children with matching subtree shape
        let mut assignments = Vec::new();
        permutations(dst_children.len(), &mut |order: &[usize]| {
            let ok = src_children
                .iter()
                .zip(order)
                .all(|(&s, &o)| self.shape(s) == self.shape(dst_children[o]));
            if ok {
                assignments.push(order.to_vec());
            }
        });
        for order in assignments {
            let mut next: Vec<(usize, usize)> = rest.to_vec();
            for (&s, &o) in src_children.iter().zip(&order) {
                perm[s] = dst_children[o];
                next.push((s, dst_children[o]));
            }
            self.extend_automorphisms(next, perm, out);
        }
    }

    /// Canonical string of the subtree rooted at `node`, for isomorphism tests.
    fn shape(&self, node: usize) -> String {
        let mut kids: Vec<String> = self.children(node).into_iter().map(|c| self.shape(c)).collect();
        kids.sort();
        format!("({})", kids.concat())
    }
}

/// Calls `f` with every permutation of `0..n` in lexicographic order.
pub(crate) fn permutations(n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(idx: usize, items: &mut Vec<usize>, used: &mut [bool], n: usize, f: &mut impl FnMut(&[usize])) {
        if idx == n {
            f(items);
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                items.push(v);
                rec(idx + 1, items, used, n, f);
                items.pop();
                used[v] = false;
            }
        }
    }
    let mut items = Vec::with_capacity(n);
    let mut used = vec![false; n];
    rec(0, &mut items, &mut used, n, f);
}

/// Pairs of non-root factors where neither is an ancestor of the other.
pub fn hierarchy_constraint_pairs(tree: &HierarchyTree) -> ConstraintSet {
    let k = tree.len();
    let pairs = (1..k).flat_map(|a| ((a + 1)..k).map(move |b| (a, b)));
    let pairs: Vec<_> = pairs
        .filter(|&(a, b)| !tree.is_ancestor(a, b) && !tree.is_ancestor(b, a))
        .collect();
    ConstraintSet::new(k - 1, pairs, tree.height().max(1), FactorCorrelation::Orthogonal)
        .expect("tree pairs are valid by construction")
}

//! Isolation Forest: randomized axis-parallel isolation trees and the
//! normalized path-length anomaly score.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::stats::c_factor;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("invalid forest configuration: {0}")]
    Config(String),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("cannot build a tree from an empty subsample")]
    EmptySubsample,
    #[error("row {row} has {got} features, expected {expected}")]
    Dimension { row: usize, expected: usize, got: usize },
    #[error("row {row} feature {feature} is not finite")]
    NonFinite { row: usize, feature: usize },
    #[error("tree {tree}: {reason}")]
    MalformedTree { tree: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub psi: usize,
    pub seed: u64,
    pub dim: usize,
}

impl ForestConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            psi: DEFAULT_PSI,
            seed: 0,
            dim,
        }
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_psi(mut self, psi: usize) -> Self {
        self.psi = psi;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if self.psi < 2 {
            return Err(ForestError::Config(format!("psi must be at least 2, got {}", self.psi)));
        }
        if self.dim == 0 {
            return Err(ForestError::Config("dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_psi(&self, n_train: usize) -> usize {
        self.psi.min(n_train)
    }
}

/// `ceil(log2(n))`, with 0 for n ≤ 1.
pub fn height_limit(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node<F> {
    Internal {
        feature: usize,
        split: F,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// A single isolation tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> IsolationTree<F> {
    /// Wraps a node array after checking that it forms a proper binary tree
    /// rooted at index 0 with every node reachable exactly once.
    pub fn from_nodes(nodes: Vec<Node<F>>, dim: usize) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            if let Node::Internal {
                feature,
                split,
                left,
                right,
            } = nodes[i]
            {
                if feature >= dim {
                    return Err(format!("node {i}: feature index {feature} out of range for dim {dim}"));
                }
                if !split.is_finite() {
                    return Err(format!("node {i}: split value is not finite"));
                }
                for child in [left, right] {
                    if child >= nodes.len() {
                        return Err(format!(
                            "node {i}: child index {child} out of range ({} nodes)",
                            nodes.len()
                        ));
                    }
                    if seen[child] {
                        return Err(format!("node {i}: child {child} is referenced more than once"));
                    }
                    seen[child] = true;
                    stack.push(child);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(format!("node {orphan}: unreachable from the root"));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node<F>] {
        &self.nodes
    }

    /// Total training instances that reached a leaf.
    pub fn leaf_mass(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { size } => *size,
                Node::Internal { .. } => 0,
            })
            .sum()
    }

    /// Depth of the deepest node.
    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Internal { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    /// Edges from the root to the leaf `x` routes to, plus `c(leaf size)`.
    /// `x[feature] < split` goes left; ties go right.
    pub fn path_length(&self, x: &[F]) -> F {
        let mut i = 0;
        let mut edges = 0usize;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    i = if x[feature] < split { left } else { right };
                    edges += 1;
                }
                Node::Leaf { size } => {
                    return F::of(edges as f64) + c_factor::<F>(size as u64);
                }
            }
        }
    }
}

/// Grows an isolation tree over `subsample`.
///
/// Each node draws a feature uniformly among those that are not constant on
/// the node's rows and a split uniformly in the open interval between that
/// feature's minimum and maximum. Growth stops at one row, at
/// `height_limit`, or when every remaining row is identical.
pub fn fit_tree<F: Scalar, R: AsRef<[F]>, G: Rng + ?Sized>(
    subsample: &[R],
    height_limit: usize,
    rng: &mut G,
) -> Result<IsolationTree<F>, ForestError> {
    let first = subsample.first().ok_or(ForestError::EmptySubsample)?;
    let dim = first.as_ref().len();
    for (row, r) in subsample.iter().enumerate() {
        let got = r.as_ref().len();
        if got != dim {
            return Err(ForestError::Dimension { row, expected: dim, got });
        }
    }
    let rows: Vec<&[F]> = subsample.iter().map(|r| r.as_ref()).collect();
    let mut builder = TreeBuilder {
        rows: &rows,
        dim,
        height_limit,
        nodes: Vec::new(),
        candidates: Vec::with_capacity(dim),
        bounds: vec![(F::zero(), F::zero()); dim],
    };
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    builder.grow(&mut idx, 0, rng);
    Ok(IsolationTree { nodes: builder.nodes })
}

struct TreeBuilder<'a, F> {
    rows: &'a [&'a [F]],
    dim: usize,
    height_limit: usize,
    nodes: Vec<Node<F>>,
    candidates: Vec<usize>,
    bounds: Vec<(F, F)>,
}

impl<F: Scalar> TreeBuilder<'_, F> {
    fn grow<G: Rng + ?Sized>(&mut self, idx: &mut [usize], depth: usize, rng: &mut G) -> usize {
        let at = self.nodes.len();
        if idx.len() <= 1 || depth >= self.height_limit {
            self.nodes.push(Node::Leaf { size: idx.len() });
            return at;
        }

        for (q, b) in self.bounds.iter_mut().enumerate() {
            let v = self.rows[idx[0]][q];
            *b = (v, v);
            for &i in idx.iter() {
                let v = self.rows[i][q];
                if v < b.0 {
                    b.0 = v;
                }
                if v > b.1 {
                    b.1 = v;
                }
            }
        }
        self.candidates.clear();
        self.candidates
            .extend((0..self.dim).filter(|&q| self.bounds[q].0 < self.bounds[q].1));
        if self.candidates.is_empty() {
            self.nodes.push(Node::Leaf { size: idx.len() });
            return at;
        }

        let feature = self.candidates[rng.random_range(0..self.candidates.len())];
        let (lo, hi) = self.bounds[feature];
        let split = draw_open(lo, hi, rng);

        // partition in place: rows below the split first
        let mut mid = 0;
        for k in 0..idx.len() {
            if self.rows[idx[k]][feature] < split {
                idx.swap(k, mid);
                mid += 1;
            }
        }

        self.nodes.push(Node::Internal {
            feature,
            split,
            left: 0,
            right: 0,
        });
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        if let Node::Internal {
            left: l, right: r, ..
        } = &mut self.nodes[at]
        {
            *l = left;
            *r = right;
        }
        at
    }
}

/// Uniform draw from the open interval (lo, hi), lo < hi. Falls back to `hi`
/// when rounding keeps landing on an endpoint (adjacent floats), which still
/// separates `lo` from `hi` under strict-less routing.
fn draw_open<F: Scalar, G: Rng + ?Sized>(lo: F, hi: F, rng: &mut G) -> F {
    for _ in 0..16 {
        let u = F::of(rng.random::<f64>());
        let p = lo + u * (hi - lo);
        if p > lo && p < hi {
            return p;
        }
    }
    hi
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of tree `index`'s private random stream.
pub fn tree_seed(seed: u64, index: usize) -> u64 {
    mix64(mix64(seed) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest<F> {
    config: ForestConfig,
    effective_psi: usize,
    trees: Vec<IsolationTree<F>>,
    c_psi: F,
}

impl<F: Scalar> IsolationForest<F> {
    /// Fits `config.n_trees` trees, each on its own subsample of
    /// `min(psi, rows)` rows drawn without replacement. Trees are built in
    /// parallel; every tree owns a random stream derived from
    /// `(seed, tree index)`, so the result does not depend on scheduling.
    pub fn fit<R: AsRef<[F]> + Sync>(train: &[R], config: ForestConfig) -> Result<Self, ForestError> {
        config.validate()?;
        if train.len() < 2 {
            return Err(ForestError::TooFewRows(train.len()));
        }
        for (row, r) in train.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != config.dim {
                return Err(ForestError::Dimension {
                    row,
                    expected: config.dim,
                    got: r.len(),
                });
            }
            if let Some(feature) = r.iter().position(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite { row, feature });
            }
        }

        let psi = config.effective_psi(train.len());
        let limit = height_limit(psi);
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
                let picks = index::sample(&mut rng, train.len(), psi);
                let sub: Vec<&[F]> = picks.iter().map(|i| train[i].as_ref()).collect();
                fit_tree(&sub, limit, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            config,
            effective_psi: psi,
            trees,
            c_psi: c_factor(psi as u64),
        })
    }

    /// Reassembles a forest from stored parts.
    pub fn from_parts(
        config: ForestConfig,
        effective_psi: usize,
        trees: Vec<IsolationTree<F>>,
    ) -> Result<Self, ForestError> {
        config.validate()?;
        if trees.len() != config.n_trees {
            return Err(ForestError::Config(format!(
                "expected {} trees, found {}",
                config.n_trees,
                trees.len()
            )));
        }
        if effective_psi < 2 || effective_psi > config.psi {
            return Err(ForestError::Config(format!(
                "effective psi {effective_psi} outside [2, {}]",
                config.psi
            )));
        }
        for (t, tree) in trees.iter().enumerate() {
            let ok = tree.nodes.iter().all(|n| match *n {
                Node::Internal { feature, .. } => feature < config.dim,
                Node::Leaf { .. } => true,
            });
            if !ok {
                return Err(ForestError::MalformedTree {
                    tree: t,
                    reason: "feature index out of range".into(),
                });
            }
        }
        Ok(Self {
            config,
            effective_psi,
            trees,
            c_psi: c_factor(effective_psi as u64),
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn effective_psi(&self) -> usize {
        self.effective_psi
    }

    pub fn trees(&self) -> &[IsolationTree<F>] {
        &self.trees
    }

    pub fn c_psi(&self) -> F {
        self.c_psi
    }

    fn check_point(&self, x: &[F]) -> Result<(), ForestError> {
        if x.len() != self.config.dim {
            return Err(ForestError::Dimension {
                row: 0,
                expected: self.config.dim,
                got: x.len(),
            });
        }
        if let Some(feature) = x.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { row: 0, feature });
        }
        Ok(())
    }

    /// Mean path length of `x` over all trees.
    pub fn mean_path_length(&self, x: &[F]) -> Result<F, ForestError> {
        self.check_point(x)?;
        Ok(self.mean_path_unchecked(x))
    }

    fn mean_path_unchecked(&self, x: &[F]) -> F {
        let total = self
            .trees
            .iter()
            .fold(F::zero(), |acc, t| acc + t.path_length(x));
        total / F::of(self.trees.len() as f64)
    }

    /// Anomaly score `2^(-E[h(x)] / c(psi))` in (0, 1]; higher is more
    /// anomalous.
    pub fn score(&self, x: &[F]) -> Result<F, ForestError> {
        self.check_point(x)?;
        Ok(self.score_from_path(self.mean_path_unchecked(x)))
    }

    /// Maps a mean path length to a score.
    pub fn score_from_path(&self, mean_path: F) -> F {
        F::of(2.0).powf(-mean_path / self.c_psi)
    }

    /// Scores each row in order; the first bad row's index is reported.
    pub fn score_batch<R: AsRef<[F]> + Sync>(&self, xs: &[R]) -> Result<Vec<F>, ForestError> {
        xs.par_iter()
            .enumerate()
            .map(|(row, x)| {
                self.score(x.as_ref()).map_err(|e| match e {
                    ForestError::Dimension { expected, got, .. } => {
                        ForestError::Dimension { row, expected, got }
                    }
                    ForestError::NonFinite { feature, .. } => ForestError::NonFinite { row, feature },
                    other => other,
                })
            })
            .collect()
    }
}

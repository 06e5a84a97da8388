//! Gini decision trees and a bootstrap random forest.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            min_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn features_per_split(&self, dims: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (dims as f64).sqrt().floor() as usize)
            .clamp(1, dims.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(u8),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary classification tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// Gini impurity of a split, from class counts of both sides.
pub(crate) fn split_gini(left: [usize; 2], right: [usize; 2]) -> f64 {
    let gini = |c: [usize; 2]| {
        let n = (c[0] + c[1]) as f64;
        let (p0, p1) = (c[0] as f64 / n, c[1] as f64 / n);
        1.0 - p0 * p0 - p1 * p1
    };
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    (nl * gini(left) + nr * gini(right)) / (nl + nr)
}

fn majority(counts: [usize; 2]) -> u8 {
    u8::from(counts[1] > counts[0])
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    per_split: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, rows: &mut [usize], rng: &mut R) -> usize {
        let counts = rows.iter().fold([0usize; 2], |mut c, &i| {
            c[self.y[i] as usize] += 1;
            c
        });
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(counts)));
        if counts[0] == 0 || counts[1] == 0 || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let dims = self.x[0].len();
        let mut features: Vec<usize> = if self.per_split >= dims {
            (0..dims).collect()
        } else {
            sample(rng, dims, self.per_split).into_vec()
        };
        features.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            rows.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0usize; 2];
            for pos in 0..rows.len() - 1 {
                left[self.y[rows[pos]] as usize] += 1;
                let n_left = pos + 1;
                let (lo, hi) = (self.x[rows[pos]][f], self.x[rows[pos + 1]][f]);
                if lo >= hi || n_left < self.min_leaf || rows.len() - n_left < self.min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let g = split_gini(left, right);
                if best.is_none_or(|(bg, _, _)| g < bg) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some((g, f, if mid < hi { mid } else { lo }));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(&mut l, rng);
        let right = self.grow(&mut r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    /// Grows to purity (or until a node cannot hold two `min_leaf` children).
    pub fn fit<R: Rng>(
        x: &[Vec<f64>],
        y: &[u8],
        rows: &[usize],
        per_split: usize,
        min_leaf: usize,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            per_split,
            min_leaf: min_leaf.max(1),
            nodes: Vec::new(),
        };
        let mut rows = rows.to_vec();
        b.grow(&mut rows, rng);
        Self { nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Each tree draws from its own stream of the seeded generator, so the
    /// forest is identical whether trees are grown in parallel or not.
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &ForestParams, seed: u64) -> Self {
        let n = x.len();
        let per_split = params.features_per_split(x.first().map_or(1, Vec::len));
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(x, y, &rows, per_split, params.min_leaf, &mut rng)
            })
            .collect();
        Self { trees }
    }

    /// Majority vote; ties go to class 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let ones = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        u8::from(2 * ones > self.trees.len())
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

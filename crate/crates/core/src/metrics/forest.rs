use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 10, max_depth: 12 }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [f64],
    m: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    /// Summed squared-error decrease credited to each feature.
    gain: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn sse(&self, rows: &[usize]) -> (f64, f64) {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n;
        (mean, rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum())
    }

    fn best_split(&self, rows: &[usize], node_sse: f64) -> Option<BestSplit> {
        let n = rows.len();
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.m {
            let key = |r: usize| self.x[r * self.m + f];
            sorted.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            let total: f64 = sorted.iter().map(|&r| self.y[r]).sum();
            let total_sq: f64 = sorted.iter().map(|&r| self.y[r] * self.y[r]).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for i in 0..n - 1 {
                let y = self.y[sorted[i]];
                s += y;
                sq += y * y;
                let (lo, hi) = (key(sorted[i]), key(sorted[i + 1]));
                if lo == hi {
                    continue;
                }
                let (nl, nr) = ((i + 1) as f64, (n - i - 1) as f64);
                let sse_l = sq - s * s / nl;
                let sse_r = (total_sq - sq) - (total - s) * (total - s) / nr;
                let decrease = node_sse - sse_l - sse_r;
                if decrease > best.as_ref().map_or(1e-12 * node_sse.max(1e-300), |b| b.decrease) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (lo + hi),
                        decrease,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (mean, sse) = self.sse(&rows);
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.max_depth || rows.len() < 2 || sse <= 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows, sse) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&row| self.x[row * self.m + split.feature] <= split.threshold);
        // exact decrease from the realised children
        let decrease = sse - self.sse(&l).1 - self.sse(&r).1;
        self.gain[split.feature] += decrease.max(0.0);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    /// Impurity decrease per feature summed over trees, normalised to sum 1
    /// (all zeros when no split was made).
    pub importance: Vec<f64>,
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Tensor<f64>) -> Vec<f64> {
        (0..x.shape()[0]).map(|r| self.predict_row(x.row(r))).collect()
    }
}

/// Bagged CART regression trees: bootstrap samples of size n, greedy
/// variance-reduction splits over every feature at midpoints between
/// distinct sorted values.
pub fn fit_random_forest(x: &Tensor<f64>, y: &[f64], config: ForestConfig, seed: u64) -> Result<Forest> {
    let (n, m) = x.dims2()?;
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 || config.trees == 0 {
        return Err(Error::Contract("forest needs at least two rows and one tree".into()));
    }
    if x.data().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract("forest inputs must be finite".into()));
    }
    let mut gain = vec![0.0; m];
    let mut trees = Vec::with_capacity(config.trees);
    for t in 0..config.trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut b = Builder {
            x: x.data(),
            y,
            m,
            max_depth: config.max_depth,
            nodes: Vec::new(),
            gain: vec![0.0; m],
        };
        b.build(rows, 0);
        gain.iter_mut().zip(&b.gain).for_each(|(g, d)| *g += d);
        trees.push(RegressionTree { nodes: b.nodes });
    }
    let total: f64 = gain.iter().sum();
    if total > 0.0 {
        gain.iter_mut().for_each(|g| *g /= total);
    }
    Ok(Forest { trees, importance: gain })
}

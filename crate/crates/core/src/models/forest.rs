//! Random forest of regression trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub trees: usize,
    pub min_samples_leaf: usize,
    /// features tried per split; `None` tries all
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    /// cap on the per-tree bootstrap sample size
    pub max_samples: Option<usize>,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 200,
            min_samples_leaf: 2,
            max_features: None,
            max_depth: None,
            bootstrap: true,
            max_samples: None,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// `u32::MAX` marks a leaf
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
    pub samples: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    input: usize,
    aggregation: Aggregation,
    min_samples_leaf: usize,
    trees: Vec<Tree>,
}

/// Mean that is exact when all values are equal.
fn shifted_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - first), n + 1));
    first + s / n as f64
}

impl ForestModel {
    pub fn from_parts(input: usize, aggregation: Aggregation, min_samples_leaf: usize, trees: Vec<Tree>) -> Result<Self> {
        for t in &trees {
            let n = t.nodes.len() as u32;
            let bad = t.nodes.is_empty()
                || t.nodes.iter().any(|nd| {
                    !nd.is_leaf() && (nd.feature as usize >= input || nd.left >= n || nd.right >= n)
                });
            if bad {
                return Err(Error::ShapeMismatch("malformed regression tree".into()));
            }
        }
        Ok(ForestModel {
            input,
            aggregation,
            min_samples_leaf,
            trees,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn min_samples_leaf(&self) -> usize {
        self.min_samples_leaf
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch(format!(
                "forest input has {} values, expected {}",
                x.len(),
                self.input
            )));
        }
        Ok(match self.aggregation {
            Aggregation::Mean => shifted_mean(self.trees.iter().map(|t| t.predict(x))),
            Aggregation::Median => {
                let mut v: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    0.5 * (v[m - 1] + v[m])
                }
            }
        })
    }

    /// Row-major `[n × D]` inputs.
    pub fn predict_batch(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % self.input.max(1) != 0 {
            return Err(Error::ShapeMismatch("forest batch is not a whole number of rows".into()));
        }
        x.par_chunks(self.input).map(|r| self.predict(r)).collect()
    }
}

struct Grower<'a> {
    x: &'a [f64],
    y: &'a [f64],
    d: usize,
    min_leaf: usize,
    max_features: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    features: Vec<usize>,
    order: Vec<(f64, f64)>,
}

impl Grower<'_> {
    fn leaf(&mut self, idx: &[usize]) -> u32 {
        let value = shifted_mean(idx.iter().map(|&i| self.y[i]));
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
            samples: idx.len() as u32,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Best split by SSE reduction, `SL²/nL + SR²/nR` over centred targets.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        self.features.shuffle(&mut self.rng);
        let tried: Vec<usize> = {
            let mut f = self.features[..self.max_features].to_vec();
            f.sort_unstable();
            f
        };
        // centred targets keep the gain free of cancellation
        let mean = shifted_mean(idx.iter().map(|&i| self.y[i]));
        let sse: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let mut best: Option<(usize, f64, f64)> = None;
        for f in tried {
            self.order.clear();
            self.order.extend(idx.iter().map(|&i| (self.x[i * self.d + f], self.y[i] - mean)));
            let total: f64 = self.order.iter().map(|o| o.1).sum();
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut left = 0.0;
            for k in 1..n {
                left += self.order[k - 1].1;
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                if self.order[k - 1].0 >= self.order[k].0 {
                    continue;
                }
                let right = total - left;
                let score = left * left / k as f64 + right * right / (n - k) as f64;
                if best.map_or(true, |b| score > b.2) {
                    let thr = 0.5 * (self.order[k - 1].0 + self.order[k].0);
                    // midpoint can round onto the upper value
                    let thr = if thr < self.order[k].0 { thr } else { self.order[k - 1].0 };
                    best = Some((f, thr, score));
                }
            }
        }
        best.filter(|b| b.2 > 1e-12 * sse).map(|b| (b.0, b.1))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || depth >= self.max_depth {
            return self.leaf(idx);
        }
        let Some((f, thr)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let d = self.d;
        let x = self.x;
        let mut split = 0;
        for k in 0..idx.len() {
            if x[idx[k] * d + f] <= thr {
                idx.swap(k, split);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node {
            feature: f as u32,
            threshold: thr,
            left: 0,
            right: 0,
            value: shifted_mean(idx.iter().map(|&i| self.y[i])),
            samples: idx.len() as u32,
        });
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me].left = left;
        self.nodes[me].right = right;
        me as u32
    }
}

/// Per-tree seed, independent of how trees are scheduled across workers.
fn tree_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Grows `cfg.trees` trees on row-major `[n × d]` inputs.
pub fn forest_train(x: &[f64], y: &[f64], d: usize, cfg: &ForestConfig) -> Result<ForestModel> {
    let n = y.len();
    if n < 4 {
        return Err(Error::TooFewSamples { got: n, need: 4 });
    }
    if x.len() != n * d || d == 0 {
        return Err(Error::ShapeMismatch(format!("forest data has {} values, expected {n} × {d}", x.len())));
    }
    if cfg.trees == 0 || cfg.min_samples_leaf == 0 {
        return Err(Error::Config("forest needs trees >= 1 and min_samples_leaf >= 1".into()));
    }
    let max_features = cfg.max_features.unwrap_or(d).clamp(1, d);
    let draws = cfg.max_samples.unwrap_or(n).clamp(1, n);
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, k));
            let mut idx: Vec<usize> = if cfg.bootstrap {
                (0..draws).map(|_| rng.gen_range(0..n)).collect()
            } else if draws < n {
                rand::seq::index::sample(&mut rng, n, draws).into_vec()
            } else {
                (0..n).collect()
            };
            let mut g = Grower {
                x,
                y,
                d,
                min_leaf: cfg.min_samples_leaf,
                max_features,
                max_depth: cfg.max_depth.unwrap_or(usize::MAX),
                nodes: Vec::new(),
                rng,
                features: (0..d).collect(),
                order: Vec::new(),
            };
            g.grow(&mut idx, 0);
            Tree { nodes: g.nodes }
        })
        .collect();
    Ok(ForestModel {
        input: d,
        aggregation: cfg.aggregation,
        min_samples_leaf: cfg.min_samples_leaf,
        trees,
    })
}

//! Extremely randomized regression trees.
//!
//! Every node draws one uniform threshold per feature inside the node's
//! feature range and keeps the split with the smallest summed child squared
//! error. Trees are stored as flat node arrays, so the model serializes
//! without recursion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mix64, Dataset};
use crate::error::ModelError;
use crate::features::{FeatureVector, N_FEATURES};
use crate::surrogate::Surrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreesTrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl TreesTrainParams {
    /// 50 trees of depth 100, no resampling; used on the raw measurements.
    pub fn raw_data_preset(seed: u64) -> Self {
        TreesTrainParams {
            n_trees: 50,
            max_depth: 100,
            bootstrap: false,
            min_samples_leaf: 1,
            seed,
        }
    }

    /// 40 bootstrapped trees of depth 15; used on the median-merged data.
    pub fn dedup_data_preset(seed: u64) -> Self {
        TreesTrainParams {
            n_trees: 40,
            max_depth: 15,
            bootstrap: true,
            min_samples_leaf: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidParams(
                "n_trees, max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Samples with `y[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, y: &FeatureVector) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if y.0[feature] <= threshold { left } else { right },
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            best = best.max(d);
            if let TreeNode::Split { left, right, .. } = self.nodes[at] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraTreesModel {
    pub trees: Vec<Tree>,
    pub params: TreesTrainParams,
    /// Smallest and largest training target, °C.
    pub target_range: [f64; 2],
    /// Normalized variance reduction per feature, averaged over trees.
    pub importance: [f64; N_FEATURES],
}

impl ExtraTreesModel {
    /// Ensemble mean of the per-tree leaf values.
    pub fn predict(&self, y: &FeatureVector) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(y)).sum();
        (sum / self.trees.len() as f64).clamp(self.target_range[0], self.target_range[1])
    }

    pub fn predict_tree(&self, tree: usize, y: &FeatureVector) -> f64 {
        self.trees[tree].predict(y)
    }
}

impl Surrogate for ExtraTreesModel {
    fn predict(&self, y: &FeatureVector) -> f64 {
        ExtraTreesModel::predict(self, y)
    }
}

pub fn train_extra_trees(train: &Dataset, params: &TreesTrainParams) -> Result<ExtraTreesModel, ModelError> {
    params.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let xs = train.features();
    let ts = train.targets();
    if ts.iter().any(|t| !t.is_finite()) || xs.iter().any(|y| y.0.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::InvalidParams(
            "training data contains non-finite values".into(),
        ));
    }
    let t_min = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // Seeds are fixed before the parallel section so results do not depend on scheduling.
    let master = mix64(params.seed);
    let built: Vec<(Tree, [f64; N_FEATURES])> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(master ^ mix64(k as u64)));
            grow_tree(&xs, &ts, params, &mut rng)
        })
        .collect();

    let mut importance = [0.0; N_FEATURES];
    let mut trees = Vec::with_capacity(built.len());
    for (tree, gain) in built {
        let total: f64 = gain.iter().sum();
        if total > 0.0 {
            for k in 0..N_FEATURES {
                importance[k] += gain[k] / total;
            }
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        for v in &mut importance {
            *v /= total;
        }
    }
    Ok(ExtraTreesModel {
        trees,
        params: *params,
        target_range: [t_min, t_max],
        importance,
    })
}

fn sse(idx: &[usize], ts: &[f64]) -> f64 {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ts[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (ts[i] - mean).powi(2)).sum()
}

fn leaf(idx: &[usize], ts: &[f64]) -> TreeNode {
    let first = ts[idx[0]];
    let (mut lo, mut hi) = (first, first);
    for &i in idx {
        lo = lo.min(ts[i]);
        hi = hi.max(ts[i]);
    }
    // A pure node returns its target verbatim rather than a rounded mean.
    let value = if lo == hi {
        first
    } else {
        (idx.iter().map(|&i| ts[i]).sum::<f64>() / idx.len() as f64).clamp(lo, hi)
    };
    TreeNode::Leaf {
        value,
        n_samples: idx.len(),
    }
}

struct Pending {
    node: usize,
    idx: Vec<usize>,
    depth: usize,
}

fn grow_tree(
    xs: &[FeatureVector],
    ts: &[f64],
    params: &TreesTrainParams,
    rng: &mut ChaCha8Rng,
) -> (Tree, [f64; N_FEATURES]) {
    let n = xs.len();
    let root: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut gain = [0.0; N_FEATURES];
    let mut nodes = vec![TreeNode::Leaf {
        value: 0.0,
        n_samples: 0,
    }];
    let mut stack = vec![Pending {
        node: 0,
        idx: root,
        depth: 0,
    }];
    let msl = params.min_samples_leaf;

    while let Some(p) = stack.pop() {
        let pure = p.idx.iter().all(|&i| ts[i] == ts[p.idx[0]]);
        if pure || p.depth >= params.max_depth || p.idx.len() < 2 * msl {
            nodes[p.node] = leaf(&p.idx, ts);
            continue;
        }
        let parent_sse = sse(&p.idx, ts);
        let mut best: Option<(f64, usize, f64)> = None;
        for k in 0..N_FEATURES {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &p.idx {
                lo = lo.min(xs[i].0[k]);
                hi = hi.max(xs[i].0[k]);
            }
            if lo >= hi {
                continue;
            }
            let u: f64 = rng.random();
            let mut thr = lo + u * (hi - lo);
            if thr >= hi {
                thr = lo;
            }
            let (l, r): (Vec<usize>, Vec<usize>) = p.idx.iter().partition(|&&i| xs[i].0[k] <= thr);
            if l.len() < msl || r.len() < msl {
                continue;
            }
            let child = sse(&l, ts) + sse(&r, ts);
            let better = match best {
                None => true,
                Some((b, bk, bt)) => child < b || (child == b && (k < bk || (k == bk && thr < bt))),
            };
            if better {
                best = Some((child, k, thr));
            }
        }
        let Some((child, k, thr)) = best else {
            nodes[p.node] = leaf(&p.idx, ts);
            continue;
        };
        gain[k] += (parent_sse - child).max(0.0);
        let (l, r): (Vec<usize>, Vec<usize>) = p.idx.iter().partition(|&&i| xs[i].0[k] <= thr);
        let left = nodes.len();
        let placeholder = TreeNode::Leaf {
            value: 0.0,
            n_samples: 0,
        };
        nodes.push(placeholder);
        nodes.push(placeholder);
        nodes[p.node] = TreeNode::Split {
            feature: k,
            threshold: thr,
            left,
            right: left + 1,
        };
        stack.push(Pending {
            node: left + 1,
            idx: r,
            depth: p.depth + 1,
        });
        stack.push(Pending {
            node: left,
            idx: l,
            depth: p.depth + 1,
        });
    }
    (Tree { nodes }, gain)
}

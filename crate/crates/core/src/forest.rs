//! Random forest regression built from bagged CART trees.
//!
//! Trees are grown greedily on weighted variance reduction. Candidate
//! thresholds are midpoints between consecutive distinct feature values and
//! rows with `x <= threshold` go left. Equal-scoring splits resolve to the
//! lowest feature index and then the lowest threshold.
//!
//! Tree `t` draws all of its randomness from
//! `SplitMix64::for_tree(random_state, t)`: first the `n` bootstrap draws,
//! then one feature subset per expanded node when `max_features` is not
//! `All`. Trees are therefore independent of thread scheduling and a model
//! with `k` trees is a prefix of any larger model with the same seed.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::matrix::FeatureMatrix;
use crate::rng::SplitMix64;

pub const MODEL_MAGIC: &[u8; 5] = b"DMVF1";
pub const MODEL_VERSION: u32 = 1;

/// Relative tolerance below which two split gains count as equal.
const GAIN_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("feature matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("feature matrix contains NaN or infinite values")]
    NonFiniteInput,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    #[serde(alias = "auto")]
    All,
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Count(k) => k.clamp(1, d),
        }
    }
}

/// Forest hyperparameters. The defaults are the baseline configuration:
/// 100 trees, unlimited depth, split at 2, leaf of 1, all features,
/// bootstrap on, seed 42, all cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub random_state: u64,
    /// Worker threads; `None` uses every core. Has no effect on the result.
    pub n_jobs: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            bootstrap: true,
            random_state: 42,
            n_jobs: None,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: &str| Err(ForestError::InvalidConfig(m.to_string()));
        if self.n_estimators < 1 {
            return bad("n_estimators must be >= 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be >= 2");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        if self.max_features == MaxFeatures::Count(0) {
            return bad("max_features count must be >= 1");
        }
        if self.n_jobs == Some(0) {
            return bad("n_jobs must be >= 1 when set");
        }
        Ok(())
    }
}

/// Node of a fitted tree. Children are indices into [`Tree::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
        n: u64,
    },
    Split {
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
        impurity_decrease: f64,
        n: u64,
    },
}

/// Nodes stored in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if x[*feature_index] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
}

/// Fits a forest on every row of `x`.
pub fn fit(x: &FeatureMatrix, config: &ForestConfig) -> Result<ForestModel, ForestError> {
    config.validate()?;
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(ForestError::EmptyMatrix);
    }
    if !x.is_finite() {
        return Err(ForestError::NonFiniteInput);
    }
    if x.n_rows() < config.min_samples_leaf {
        // not even the root could be a valid leaf
        return Err(ForestError::InvalidConfig(format!(
            "min_samples_leaf = {} exceeds the {} training rows",
            config.min_samples_leaf,
            x.n_rows()
        )));
    }
    let data = TrainingData::new(x.columns(), x.target());

    let grow = |t: usize| data.grow_tree(config, t);
    let grown: Vec<(Tree, Vec<f64>)> = match config.n_jobs {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| ForestError::InvalidConfig(e.to_string()))?
            .install(|| (0..config.n_estimators).into_par_iter().map(grow).collect()),
        None => (0..config.n_estimators).into_par_iter().map(grow).collect(),
    };

    let d = x.n_cols();
    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, gains) in grown {
        for (acc, g) in importances.iter_mut().zip(gains) {
            *acc += g;
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        trees,
        config: config.clone(),
        feature_names: x.column_names().to_vec(),
        importances,
    })
}

struct TrainingData<'a> {
    columns: Vec<Vec<f64>>,
    target: &'a [f64],
    /// Row indices sorted by each feature's value (ties by row index).
    sorted_rows: Vec<Vec<u32>>,
}

struct NodeTask {
    start: usize,
    end: usize,
    depth: usize,
    parent: Option<(usize, bool)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    /// Offset within the node range of the last row that goes left.
    last_left: usize,
    threshold: f64,
}

impl<'a> TrainingData<'a> {
    fn new(columns: Vec<Vec<f64>>, target: &'a [f64]) -> Self {
        let n = target.len();
        let sorted_rows = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self {
            columns,
            target,
            sorted_rows,
        }
    }

    /// Returns the tree and its per-feature impurity decrease totals.
    fn grow_tree(&self, config: &ForestConfig, tree_index: usize) -> (Tree, Vec<f64>) {
        let n = self.target.len();
        let d = self.columns.len();
        let mut rng = SplitMix64::for_tree(config.random_state, tree_index);

        let mut weight = vec![0u32; n];
        if config.bootstrap {
            for _ in 0..n {
                weight[rng.below(n)] += 1;
            }
        } else {
            weight.iter_mut().for_each(|w| *w = 1);
        }

        let mut order: Vec<Vec<u32>> = self
            .sorted_rows
            .iter()
            .map(|rows| {
                rows.iter()
                    .copied()
                    .filter(|&r| weight[r as usize] > 0)
                    .collect()
            })
            .collect();
        let m = order[0].len();
        let n_candidates = config.max_features.resolve(d);
        let mut feature_pool: Vec<usize> = (0..d).collect();
        let mut goes_left = vec![false; n];
        let mut scratch: Vec<u32> = Vec::with_capacity(m);
        let mut gains = vec![0.0; d];
        let mut nodes: Vec<TreeNode> = Vec::new();

        let mut stack = vec![NodeTask {
            start: 0,
            end: m,
            depth: 0,
            parent: None,
        }];
        while let Some(task) = stack.pop() {
            let node_index = nodes.len();
            if let Some((parent, is_left)) = task.parent {
                if let TreeNode::Split { left, right, .. } = &mut nodes[parent] {
                    if is_left {
                        *left = node_index;
                    } else {
                        *right = node_index;
                    }
                }
            }
            let rows = &order[0][task.start..task.end];
            let (mut w_sum, mut y_sum) = (0.0f64, 0.0f64);
            let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in rows {
                let (w, y) = (weight[r as usize] as f64, self.target[r as usize]);
                w_sum += w;
                y_sum += w * y;
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
            let mean = y_sum / w_sum;
            let n_node = w_sum as u64;
            let leaf = TreeNode::Leaf {
                value: mean,
                n: n_node,
            };

            let terminal = (n_node as usize) < config.min_samples_split
                || config.max_depth.is_some_and(|md| task.depth >= md)
                || y_min == y_max;
            if terminal {
                nodes.push(leaf);
                continue;
            }

            let candidates: &mut [usize] = if n_candidates < d {
                for i in 0..n_candidates {
                    let j = i + rng.below(d - i);
                    feature_pool.swap(i, j);
                }
                feature_pool[..n_candidates].sort_unstable();
                &mut feature_pool[..n_candidates]
            } else {
                &mut feature_pool[..]
            };

            let parent_ss: f64 = rows
                .iter()
                .map(|&r| {
                    let c = self.target[r as usize] - mean;
                    weight[r as usize] as f64 * c * c
                })
                .sum();
            let tolerance = GAIN_TIE_TOLERANCE * parent_ss;
            let best = self.best_split(
                candidates,
                &order,
                &weight,
                &task,
                mean,
                w_sum,
                config.min_samples_leaf as f64,
                tolerance,
            );
            if n_candidates < d {
                // restore identity order so the next node samples from the same pool layout
                feature_pool.sort_unstable();
            }

            let Some(best) = best else {
                nodes.push(leaf);
                continue;
            };

            let split_rows = &order[best.feature][task.start..task.end];
            for (k, &r) in split_rows.iter().enumerate() {
                goes_left[r as usize] = k <= best.last_left;
            }
            for rows in order.iter_mut() {
                let range = &mut rows[task.start..task.end];
                scratch.clear();
                let mut write = 0;
                for k in 0..range.len() {
                    let r = range[k];
                    if goes_left[r as usize] {
                        range[write] = r;
                        write += 1;
                    } else {
                        scratch.push(r);
                    }
                }
                range[write..].copy_from_slice(&scratch);
            }
            let mid = task.start + best.last_left + 1;

            gains[best.feature] += best.gain;
            nodes.push(TreeNode::Split {
                feature_index: best.feature,
                threshold: best.threshold,
                left: 0,
                right: 0,
                impurity_decrease: best.gain,
                n: n_node,
            });
            stack.push(NodeTask {
                start: mid,
                end: task.end,
                depth: task.depth + 1,
                parent: Some((node_index, false)),
            });
            stack.push(NodeTask {
                start: task.start,
                end: mid,
                depth: task.depth + 1,
                parent: Some((node_index, true)),
            });
        }
        (Tree { nodes }, gains)
    }

    #[allow(clippy::too_many_arguments)]
    fn best_split(
        &self,
        candidates: &[usize],
        order: &[Vec<u32>],
        weight: &[u32],
        task: &NodeTask,
        mean: f64,
        w_total: f64,
        min_leaf: f64,
        tolerance: f64,
    ) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        for &f in candidates {
            let col = &self.columns[f];
            let rows = &order[f][task.start..task.end];
            if col[rows[0] as usize] == col[rows[rows.len() - 1] as usize] {
                continue;
            }
            let c_total: f64 = rows
                .iter()
                .map(|&r| weight[r as usize] as f64 * (self.target[r as usize] - mean))
                .sum();
            let base = c_total * c_total / w_total;
            let (mut w_left, mut c_left) = (0.0f64, 0.0f64);
            for k in 0..rows.len() - 1 {
                let r = rows[k] as usize;
                let w = weight[r] as f64;
                w_left += w;
                c_left += w * (self.target[r] - mean);
                let (v, next) = (col[r], col[rows[k + 1] as usize]);
                if v == next {
                    continue;
                }
                let w_right = w_total - w_left;
                if w_left < min_leaf || w_right < min_leaf {
                    continue;
                }
                let c_right = c_total - c_left;
                let gain = c_left * c_left / w_left + c_right * c_right / w_right - base;
                let improves = match &best {
                    None => gain > tolerance,
                    Some(b) => gain > b.gain + tolerance,
                };
                if improves {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        last_left: k,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ForestError> {
        if x.n_cols() != self.n_features() {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features(),
                found: x.n_cols(),
            });
        }
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }

    /// Per-tree predictions for one row.
    pub fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Mean-decrease-in-impurity importances keyed by feature name.
    pub fn feature_importances(&self) -> std::collections::BTreeMap<String, f64> {
        self.feature_names
            .iter()
            .cloned()
            .zip(self.importances.iter().copied())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Vec::new());
        self.encode(&mut enc).expect("writing to a Vec cannot fail");
        enc.finish()
    }

    fn encode<W: Write>(&self, enc: &mut Encoder<W>) -> io::Result<()> {
        enc.bytes(MODEL_MAGIC)?;
        enc.u32(MODEL_VERSION)?;
        let c = &self.config;
        enc.u64(c.n_estimators as u64)?;
        match c.max_depth {
            Some(d) => {
                enc.u8(1)?;
                enc.u64(d as u64)?;
            }
            None => {
                enc.u8(0)?;
                enc.u64(0)?;
            }
        }
        enc.u64(c.min_samples_split as u64)?;
        enc.u64(c.min_samples_leaf as u64)?;
        let (tag, k) = match c.max_features {
            MaxFeatures::All => (0, 0),
            MaxFeatures::Sqrt => (1, 0),
            MaxFeatures::Count(k) => (2, k as u64),
        };
        enc.u8(tag)?;
        enc.u64(k)?;
        enc.u8(c.bootstrap as u8)?;
        enc.u64(c.random_state)?;
        enc.strs(&self.feature_names)?;
        for v in &self.importances {
            enc.f64(*v)?;
        }
        enc.u32(self.trees.len() as u32)?;
        for tree in &self.trees {
            enc.u32(tree.nodes.len() as u32)?;
            for node in &tree.nodes {
                match node {
                    TreeNode::Leaf { value, n } => {
                        enc.u8(0)?;
                        enc.f64(*value)?;
                        enc.u64(*n)?;
                    }
                    TreeNode::Split {
                        feature_index,
                        threshold,
                        impurity_decrease,
                        n,
                        ..
                    } => {
                        enc.u8(1)?;
                        enc.u32(*feature_index as u32)?;
                        enc.f64(*threshold)?;
                        enc.f64(*impurity_decrease)?;
                        enc.u64(*n)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ForestError> {
        let mut dec = Decoder::new(reader);
        let magic: [u8; 5] = dec.array().map_err(|_| ForestError::BadMagic)?;
        if &magic != MODEL_MAGIC {
            return Err(ForestError::BadMagic);
        }
        let version = dec.u32().map_err(|_| ForestError::VersionUnsupported(0))?;
        if version != MODEL_VERSION {
            return Err(ForestError::VersionUnsupported(version));
        }
        let truncated = |e: io::Error| ForestError::Corrupt(e.to_string());
        let n_estimators = dec.u64().map_err(truncated)? as usize;
        let has_depth = dec.u8().map_err(truncated)?;
        let depth = dec.u64().map_err(truncated)? as usize;
        let min_samples_split = dec.u64().map_err(truncated)? as usize;
        let min_samples_leaf = dec.u64().map_err(truncated)? as usize;
        let tag = dec.u8().map_err(truncated)?;
        let k = dec.u64().map_err(truncated)? as usize;
        let max_features = match tag {
            0 => MaxFeatures::All,
            1 => MaxFeatures::Sqrt,
            2 => MaxFeatures::Count(k),
            t => return Err(ForestError::Corrupt(format!("max_features tag {t}"))),
        };
        let config = ForestConfig {
            n_estimators,
            max_depth: (has_depth == 1).then_some(depth),
            min_samples_split,
            min_samples_leaf,
            max_features,
            bootstrap: dec.u8().map_err(truncated)? == 1,
            random_state: dec.u64().map_err(truncated)?,
            n_jobs: None,
        };
        let feature_names = dec.strs().map_err(truncated)?;
        let d = feature_names.len();
        let importances = (0..d)
            .map(|_| dec.f64())
            .collect::<io::Result<Vec<_>>>()
            .map_err(truncated)?;
        let n_trees = dec.u32().map_err(truncated)? as usize;
        if n_trees != n_estimators {
            return Err(ForestError::Corrupt(format!(
                "{n_trees} trees stored, config says {n_estimators}"
            )));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = dec.u32().map_err(truncated)? as usize;
            let mut flat = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                let node = match dec.u8().map_err(truncated)? {
                    0 => TreeNode::Leaf {
                        value: dec.f64().map_err(truncated)?,
                        n: dec.u64().map_err(truncated)?,
                    },
                    1 => {
                        let feature_index = dec.u32().map_err(truncated)? as usize;
                        if feature_index >= d {
                            return Err(ForestError::Corrupt("feature index out of range".into()));
                        }
                        TreeNode::Split {
                            feature_index,
                            threshold: dec.f64().map_err(truncated)?,
                            impurity_decrease: dec.f64().map_err(truncated)?,
                            n: dec.u64().map_err(truncated)?,
                            left: 0,
                            right: 0,
                        }
                    }
                    t => return Err(ForestError::Corrupt(format!("node tag {t}"))),
                };
                flat.push(node);
            }
            trees.push(Tree {
                nodes: link_preorder(flat)?,
            });
        }
        if !dec.at_end()? {
            return Err(ForestError::Corrupt("trailing bytes".into()));
        }
        Ok(ForestModel {
            trees,
            config,
            feature_names,
            importances,
        })
    }
}

/// Restores child links of a preorder node list.
fn link_preorder(mut nodes: Vec<TreeNode>) -> Result<Vec<TreeNode>, ForestError> {
    fn visit(nodes: &mut [TreeNode], i: usize) -> Result<usize, ForestError> {
        if i >= nodes.len() {
            return Err(ForestError::Corrupt("incomplete tree".into()));
        }
        match nodes[i] {
            TreeNode::Leaf { .. } => Ok(i + 1),
            TreeNode::Split { .. } => {
                let left = i + 1;
                let right = visit(nodes, left)?;
                let next = visit(nodes, right)?;
                if let TreeNode::Split {
                    left: l, right: r, ..
                } = &mut nodes[i]
                {
                    *l = left;
                    *r = right;
                }
                Ok(next)
            }
        }
    }
    let end = visit(&mut nodes, 0)?;
    if end != nodes.len() {
        return Err(ForestError::Corrupt("unreachable nodes".into()));
    }
    Ok(nodes)
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut enc = Encoder::new(&mut w);
    model.encode(&mut enc)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    ForestModel::from_reader(BufReader::new(fs::File::open(path)?))
}

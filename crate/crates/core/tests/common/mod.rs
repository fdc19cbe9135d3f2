//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// splitmix64, written out from the standard constants.
pub struct RefRng(u64);

impl RefRng {
    pub fn new(seed: u64) -> Self {
        RefRng(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n` by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next() as u128 * n as u128) >> 64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64 },
}

/// Integer-valued dataset; `x[i][f]`.
#[derive(Debug, Clone)]
pub struct IntData {
    pub x: Vec<Vec<i64>>,
    pub y: Vec<i64>,
}

impl IntData {
    pub fn random(rng: &mut StdRng, max_n: usize, max_d: usize) -> Self {
        let n = rng.gen_range(2..=max_n);
        let d = rng.gen_range(1..=max_d);
        let vmax = rng.gen_range(1..=6);
        let x = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0..=vmax)).collect())
            .collect();
        let y = (0..n).map(|_| rng.gen_range(-10..=10)).collect();
        IntData { x, y }
    }

    pub fn d(&self) -> usize {
        self.x[0].len()
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        self.x
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }
}

/// Exhaustive CART reference on integer data with integer row weights.
///
/// Every (feature, midpoint) pair is scored with exact integer arithmetic:
/// the variance reduction `S_L²/W_L + S_R²/W_R - S²/W` is compared as a
/// fraction, so ties are true ties and resolve to the lowest feature, then
/// the lowest threshold.
pub fn reference_tree(data: &IntData, weights: &[i64], min_split: i64) -> Vec<RefNode> {
    let rows: Vec<usize> = (0..data.y.len()).filter(|&i| weights[i] > 0).collect();
    let mut out = Vec::new();
    grow(data, weights, &rows, min_split, &mut out);
    out
}

fn grow(data: &IntData, w: &[i64], rows: &[usize], min_split: i64, out: &mut Vec<RefNode>) {
    let wt: i64 = rows.iter().map(|&i| w[i]).sum();
    let st: i64 = rows.iter().map(|&i| w[i] * data.y[i]).sum();
    let leaf = RefNode::Leaf(st as f64 / wt as f64);
    let constant = rows.iter().all(|&i| data.y[i] == data.y[rows[0]]);
    if wt < min_split || constant {
        out.push(leaf);
        return;
    }
    // best as (numerator, denominator, feature, split value a)
    let mut best: Option<(i128, i128, usize, i64, i64)> = None;
    for f in 0..data.d() {
        let mut values: Vec<i64> = rows.iter().map(|&i| data.x[i][f]).collect();
        values.sort();
        values.dedup();
        for pair in values.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (mut wl, mut sl) = (0i64, 0i64);
            for &i in rows {
                if data.x[i][f] <= a {
                    wl += w[i];
                    sl += w[i] * data.y[i];
                }
            }
            let (wr, sr) = (wt - wl, st - sl);
            let (wl, sl, wr, sr, wt2, st2) =
                (wl as i128, sl as i128, wr as i128, sr as i128, wt as i128, st as i128);
            let num = sl * sl * wr * wt2 + sr * sr * wl * wt2 - st2 * st2 * wl * wr;
            let den = wl * wr * wt2;
            let better = match best {
                None => num > 0,
                Some((bn, bd, ..)) => num * bd > bn * den,
            };
            if better {
                best = Some((num, den, f, a, b));
            }
        }
    }
    let Some((_, _, f, a, b)) = best else {
        out.push(leaf);
        return;
    };
    out.push(RefNode::Split {
        feature: f,
        threshold: (a as f64 + b as f64) / 2.0,
    });
    let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data.x[i][f] <= a);
    grow(data, w, &left, min_split, out);
    grow(data, w, &right, min_split, out);
}

pub fn ref_predict(nodes: &[RefNode], x: &[f64]) -> f64 {
    fn walk(nodes: &[RefNode], i: usize, x: &[f64]) -> (f64, usize) {
        match &nodes[i] {
            RefNode::Leaf(v) => (*v, i + 1),
            RefNode::Split { feature, threshold } => {
                let (lv, next) = walk(nodes, i + 1, x);
                let (rv, end) = walk(nodes, next, x);
                (if x[*feature] <= *threshold { lv } else { rv }, end)
            }
        }
    }
    walk(nodes, 0, x).0
}

/// Bootstrap weights of tree `t`, drawn from `splitmix64(seed ^ t)`.
pub fn ref_bootstrap(seed: u64, t: usize, n: usize) -> Vec<i64> {
    let mut rng = RefRng::new(seed ^ t as u64);
    let mut w = vec![0i64; n];
    for _ in 0..n {
        w[rng.below(n)] += 1;
    }
    w
}

pub fn to_ref_nodes(tree: &dmv::forest::Tree) -> Vec<RefNode> {
    tree.nodes()
        .iter()
        .map(|n| match n {
            dmv::forest::TreeNode::Leaf { value, .. } => RefNode::Leaf(*value),
            dmv::forest::TreeNode::Split {
                feature_index,
                threshold,
                ..
            } => RefNode::Split {
                feature: *feature_index,
                threshold: *threshold,
            },
        })
        .collect()
}

// --- metric oracles -------------------------------------------------------

pub fn oracle_mse(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]) * (y[i] - p[i]);
    }
    s / y.len() as f64
}

pub fn oracle_mae(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]).abs();
    }
    s / y.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

pub fn oracle_r2(y: &[f64], p: &[f64]) -> f64 {
    1.0 - oracle_mse(y, p) / variance(y)
}

pub fn oracle_evs(y: &[f64], p: &[f64]) -> f64 {
    let r: Vec<f64> = y.iter().zip(p).map(|(a, b)| a - b).collect();
    1.0 - variance(&r) / variance(y)
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// --- fixture paths ----------------------------------------------------------

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn fixture_csv() -> PathBuf {
    data_dir().join("synthetic_cdc.csv")
}

pub fn fixture_config() -> PathBuf {
    data_dir().join("dmv.toml")
}

// --- reusable checks (criteria shared with the acceptance target) --------

/// Compares the library metrics with the oracles on `pairs` random vector
/// pairs (every tenth pair is a perfect prediction) and checks
/// EVS >= R², MAE <= sqrt(MSE) and R² = 1 <=> MSE = 0.
pub fn check_metrics(seed: u64, pairs: usize) -> Result<(), String> {
    use dmv::eval::Metrics;
    let mut rng = seeded(seed);
    for case in 0..pairs {
        let n = rng.gen_range(2..60);
        let scale = 10f64.powi(rng.gen_range(-3..4));
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let p: Vec<f64> = if case % 10 == 0 {
            y.clone()
        } else {
            y.iter().map(|v| v + rng.gen_range(-0.5..0.5) * scale + 0.1 * scale).collect()
        };
        let m = Metrics::compute(&y, &p).map_err(|e| format!("case {case}: {e}"))?;
        let tol = 1e-12;
        let close = |a: f64, b: f64, what: &str| {
            let rel = (a - b).abs() / b.abs().max(1.0);
            if rel <= tol {
                Ok(())
            } else {
                Err(format!("case {case}: {what} {a} vs oracle {b}"))
            }
        };
        close(m.mse, oracle_mse(&y, &p), "mse")?;
        close(m.mae, oracle_mae(&y, &p), "mae")?;
        close(m.r2, oracle_r2(&y, &p), "r2")?;
        close(m.evs, oracle_evs(&y, &p), "evs")?;
        if m.evs < m.r2 {
            return Err(format!("case {case}: evs {} < r2 {}", m.evs, m.r2));
        }
        if m.mae > m.mse.sqrt() {
            return Err(format!("case {case}: mae {} > sqrt(mse) {}", m.mae, m.mse.sqrt()));
        }
        if (m.r2 == 1.0) != (m.mse == 0.0) {
            return Err(format!("case {case}: r2 {} but mse {}", m.r2, m.mse));
        }
    }
    Ok(())
}

/// Disjointness, coverage, balanced sizes and determinism of k-fold splits.
pub fn check_kfold(n: usize, k: usize, seed: u64) -> Result<(), String> {
    let a = dmv::eval::kfold_indices(n, k, seed).map_err(|e| e.to_string())?;
    let b = dmv::eval::kfold_indices(n, k, seed).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!("n={n} k={k}: assignment differs between runs"));
    }
    let mut seen = vec![0usize; n];
    for f in 0..k {
        for i in a.test_indices(f) {
            seen[i] += 1;
        }
        let train = a.train_indices(f);
        let test = a.test_indices(f);
        if train.len() + test.len() != n || train.iter().any(|i| test.contains(i)) {
            return Err(format!("n={n} k={k}: fold {f} train/test overlap"));
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err(format!("n={n} k={k}: folds are not a partition"));
    }
    let sizes = a.sizes();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if hi - lo > 1 || sizes.len() != k {
        return Err(format!("n={n} k={k}: sizes {sizes:?}"));
    }
    Ok(())
}

fn int_matrix(data: &IntData) -> dmv::matrix::FeatureMatrix {
    dmv::matrix::FeatureMatrix::from_rows(&data.rows_f64(), data.y_f64())
}

/// Single unbagged trees against the exhaustive reference, structure and
/// training predictions (to 1e-12).
pub fn check_single_tree_oracle(seed: u64, cases: usize) -> Result<(), String> {
    use dmv::forest::{self, ForestConfig};
    let mut rng = seeded(seed);
    for case in 0..cases {
        let data = IntData::random(&mut rng, 30, 4);
        let config = ForestConfig {
            n_estimators: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let model = forest::fit(&int_matrix(&data), &config).map_err(|e| e.to_string())?;
        let reference = reference_tree(&data, &vec![1; data.y.len()], 2);
        if to_ref_nodes(&model.trees[0]) != reference {
            return Err(format!("case {case}: tree structure differs from the reference"));
        }
        for row in data.rows_f64() {
            let a = model.predict(&row).map_err(|e| e.to_string())?;
            let b = ref_predict(&reference, &row);
            if (a - b).abs() > 1e-12 {
                return Err(format!("case {case}: prediction {a} vs reference {b}"));
            }
        }
    }
    Ok(())
}

/// Ten-tree bagged forests against reference trees grown on the bootstrap
/// weights of the same splitmix64 streams; predictions must agree bit for bit.
pub fn check_bagged_oracle(seed: u64, cases: usize) -> Result<(), String> {
    use dmv::forest::{self, ForestConfig};
    let mut rng = seeded(seed);
    for case in 0..cases {
        let data = IntData::random(&mut rng, 30, 4);
        let random_state: u64 = rng.gen();
        let config = ForestConfig {
            n_estimators: 10,
            random_state,
            ..ForestConfig::default()
        };
        let model = forest::fit(&int_matrix(&data), &config).map_err(|e| e.to_string())?;
        let n = data.y.len();
        let trees: Vec<Vec<RefNode>> = (0..10)
            .map(|t| reference_tree(&data, &ref_bootstrap(random_state, t, n), 2))
            .collect();
        for (t, reference) in trees.iter().enumerate() {
            if &to_ref_nodes(&model.trees[t]) != reference {
                return Err(format!("case {case}: tree {t} differs from the reference"));
            }
        }
        let queries: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..data.d()).map(|_| rng.gen_range(-1.0..7.0)).collect())
            .chain(data.rows_f64())
            .collect();
        for q in queries {
            let expected = trees.iter().map(|t| ref_predict(t, &q)).sum::<f64>() / 10.0;
            let got = model.predict(&q).map_err(|e| e.to_string())?;
            if got.to_bits() != expected.to_bits() {
                return Err(format!("case {case}: prediction {got} vs reference {expected}"));
            }
        }
    }
    Ok(())
}

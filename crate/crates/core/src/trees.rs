//! Tree ensembles for per-category binary classification.
//!
//! Both ensembles share one greedy tree builder over axis-aligned threshold
//! splits (`x[feature] < threshold` goes left). The forest grows CART trees
//! by Gini impurity reduction on bootstrap resamples; boosting grows
//! regression trees on logistic-loss gradients and hessians and scores splits
//! with the regularised second-order gain.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data has no features")]
    NoFeatures,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("data must contain both classes")]
    SingleClass,
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

/// Number of split-candidate features drawn per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
    Fraction(f64),
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let p = n_features as f64;
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => p.sqrt().floor() as usize,
            MaxFeatures::Log2 => p.log2().floor() as usize,
            MaxFeatures::Fraction(f) => (f * p).floor() as usize,
            MaxFeatures::Count(c) => c,
        };
        k.clamp(1, n_features.max(1))
    }

    fn validate(self) -> Result<(), TreeError> {
        match self {
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(TreeError::InvalidParams(
                format!("max_features fraction must lie in (0,1], got {f}"),
            )),
            MaxFeatures::Count(0) => Err(TreeError::InvalidParams("max_features count is 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_leaf_nodes: Option<usize>,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_leaf_nodes: None,
            max_features: MaxFeatures::All,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_samples_leaf == 0 {
            return Err(TreeError::InvalidParams("min_samples_leaf must be >= 1".into()));
        }
        if matches!(self.max_leaf_nodes, Some(n) if n < 2) {
            return Err(TreeError::InvalidParams("max_leaf_nodes must be >= 2".into()));
        }
        self.max_features.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            tree: TreeParams {
                max_features: MaxFeatures::Sqrt,
                ..TreeParams::default()
            },
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.n_estimators == 0 {
            return Err(TreeError::InvalidParams("n_estimators must be >= 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum split gain.
    pub gamma: f64,
    pub colsample_bytree: f64,
    /// L2 penalty on leaf weights.
    #[serde(default = "default_lambda")]
    pub reg_lambda: f64,
    /// Minimum hessian sum per child.
    #[serde(default)]
    pub min_child_weight: f64,
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 3,
            gamma: 0.0,
            colsample_bytree: 1.0,
            reg_lambda: 1.0,
            min_child_weight: 0.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    // negated comparisons so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::InvalidParams(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad(format!(
                "colsample_bytree must lie in (0,1], got {}",
                self.colsample_bytree
            ));
        }
        if !(self.gamma >= 0.0) || !(self.reg_lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("gamma, reg_lambda and min_child_weight must be >= 0".into());
        }
        Ok(())
    }
}

/// A fitted binary tree stored as parallel node arrays. Node 0 is the root;
/// children always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeArrays", into = "TreeArrays")]
pub struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// `None` for leaves.
    pub split: Option<Split>,
    /// Leaf output (probability for CART, weight for boosting); for internal
    /// nodes the output the node would have as a leaf.
    pub value: f64,
    /// Training mass reaching the node: sample count for CART, hessian sum
    /// for boosting.
    pub cover: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// Serialized layout: one array per node attribute, `-1` marks a leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeArrays {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<i64>,
    pub right: Vec<i64>,
    pub value: Vec<f64>,
    pub cover: Vec<f64>,
}

impl From<Tree> for TreeArrays {
    fn from(t: Tree) -> Self {
        let mut a = TreeArrays {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            cover: Vec::new(),
        };
        for n in &t.nodes {
            match n.split {
                Some(s) => {
                    a.feature.push(s.feature as i64);
                    a.threshold.push(s.threshold);
                    a.left.push(s.left as i64);
                    a.right.push(s.right as i64);
                }
                None => {
                    a.feature.push(-1);
                    a.threshold.push(0.0);
                    a.left.push(-1);
                    a.right.push(-1);
                }
            }
            a.value.push(n.value);
            a.cover.push(n.cover);
        }
        a
    }
}

impl TryFrom<TreeArrays> for Tree {
    type Error = TreeError;

    fn try_from(a: TreeArrays) -> Result<Self, Self::Error> {
        let n = a.feature.len();
        if n == 0 {
            return Err(TreeError::InvalidTree("no nodes".into()));
        }
        if [a.threshold.len(), a.left.len(), a.right.len(), a.value.len(), a.cover.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(TreeError::InvalidTree("node arrays differ in length".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let split = if a.feature[i] < 0 {
                None
            } else {
                let (l, r) = (a.left[i], a.right[i]);
                if l <= i as i64 || r <= i as i64 || l as usize >= n || r as usize >= n {
                    return Err(TreeError::InvalidTree(format!("bad children at node {i}")));
                }
                Some(Split {
                    feature: a.feature[i] as usize,
                    threshold: a.threshold[i],
                    left: l as usize,
                    right: r as usize,
                })
            };
            nodes.push(Node {
                split,
                value: a.value[i],
                cover: a.cover[i],
            });
        }
        Ok(Tree { nodes })
    }
}

impl Tree {
    /// A tree consisting of one leaf.
    pub fn leaf(value: f64, cover: f64) -> Tree {
        Tree {
            nodes: vec![Node {
                split: None,
                value,
                cover,
            }],
        }
    }

    /// Builds a tree from explicit nodes. Children must follow their parent.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree, TreeError> {
        Tree::try_from(TreeArrays::from(Tree { nodes }))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].split {
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
                None => 0,
            }
        }
        go(self, 0)
    }

    /// Largest feature index used by any split.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes.iter().filter_map(|n| n.split.map(|s| s.feature)).max()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.split {
                Some(s) => i = if row[s.feature] < s.threshold { s.left } else { s.right },
                None => return node.value,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Greedy builder

trait Criterion: Sync {
    type Stat: Copy + Default;
    fn stat(&self, sample: usize) -> Self::Stat;
    fn add(a: Self::Stat, b: Self::Stat) -> Self::Stat;
    fn sub(a: Self::Stat, b: Self::Stat) -> Self::Stat;
    fn leaf_value(&self, s: Self::Stat) -> f64;
    fn cover(&self, s: Self::Stat) -> f64;
    /// Split gain, or `None` if the split is not admissible.
    fn gain(&self, parent: Self::Stat, left: Self::Stat, right: Self::Stat) -> Option<f64>;
    /// Whether a node is worth searching at all.
    fn splittable(&self, s: Self::Stat) -> bool;
}

#[derive(Clone, Copy, Default)]
struct CountStat {
    n: f64,
    pos: f64,
}

struct Gini<'a> {
    y: &'a [bool],
    min_samples_leaf: f64,
}

fn gini_mass(s: CountStat) -> f64 {
    // n · (1 − p² − (1 − p)²)
    if s.n == 0.0 {
        0.0
    } else {
        2.0 * s.pos * (s.n - s.pos) / s.n
    }
}

impl Criterion for Gini<'_> {
    type Stat = CountStat;
    fn stat(&self, i: usize) -> CountStat {
        CountStat {
            n: 1.0,
            pos: if self.y[i] { 1.0 } else { 0.0 },
        }
    }
    fn add(a: CountStat, b: CountStat) -> CountStat {
        CountStat {
            n: a.n + b.n,
            pos: a.pos + b.pos,
        }
    }
    fn sub(a: CountStat, b: CountStat) -> CountStat {
        CountStat {
            n: a.n - b.n,
            pos: a.pos - b.pos,
        }
    }
    fn leaf_value(&self, s: CountStat) -> f64 {
        s.pos / s.n
    }
    fn cover(&self, s: CountStat) -> f64 {
        s.n
    }
    fn gain(&self, p: CountStat, l: CountStat, r: CountStat) -> Option<f64> {
        if l.n < self.min_samples_leaf || r.n < self.min_samples_leaf {
            return None;
        }
        let g = gini_mass(p) - gini_mass(l) - gini_mass(r);
        (g > 1e-12).then_some(g)
    }
    fn splittable(&self, s: CountStat) -> bool {
        s.pos > 0.0 && s.pos < s.n && s.n >= 2.0 * self.min_samples_leaf
    }
}

#[derive(Clone, Copy, Default)]
struct GradStat {
    g: f64,
    h: f64,
}

struct SecondOrder<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    gamma: f64,
    min_child_weight: f64,
    learning_rate: f64,
}

impl SecondOrder<'_> {
    fn score(&self, s: GradStat) -> f64 {
        s.g * s.g / (s.h + self.lambda)
    }
}

impl Criterion for SecondOrder<'_> {
    type Stat = GradStat;
    fn stat(&self, i: usize) -> GradStat {
        GradStat {
            g: self.grad[i],
            h: self.hess[i],
        }
    }
    fn add(a: GradStat, b: GradStat) -> GradStat {
        GradStat {
            g: a.g + b.g,
            h: a.h + b.h,
        }
    }
    fn sub(a: GradStat, b: GradStat) -> GradStat {
        GradStat {
            g: a.g - b.g,
            h: a.h - b.h,
        }
    }
    fn leaf_value(&self, s: GradStat) -> f64 {
        if s.h + self.lambda == 0.0 {
            0.0
        } else {
            -self.learning_rate * s.g / (s.h + self.lambda)
        }
    }
    fn cover(&self, s: GradStat) -> f64 {
        s.h
    }
    fn gain(&self, p: GradStat, l: GradStat, r: GradStat) -> Option<f64> {
        if l.h < self.min_child_weight || r.h < self.min_child_weight {
            return None;
        }
        let g = 0.5 * (self.score(l) + self.score(r) - self.score(p));
        (g >= self.gamma).then_some(g)
    }
    fn splittable(&self, _s: GradStat) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Threshold strictly between two consecutive distinct values.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

fn best_split<C: Criterion>(
    crit: &C,
    x: &Matrix,
    samples: &[usize],
    features: &[usize],
    total: C::Stat,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    let mut order: Vec<usize> = samples.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let mut left = C::Stat::default();
        for w in 0..order.len().saturating_sub(1) {
            left = C::add(left, crit.stat(order[w]));
            let lo = x.get(order[w], f);
            let hi = x.get(order[w + 1], f);
            if lo == hi {
                continue;
            }
            let right = C::sub(total, left);
            if let Some(g) = crit.gain(total, left, right) {
                if best.is_none_or(|b| g > b.gain) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        gain: g,
                    });
                }
            }
        }
    }
    best
}

struct Frontier {
    node: usize,
    samples: Vec<usize>,
    depth: usize,
    split: Option<Candidate>,
}

enum FeatureDraw<'a> {
    /// Fixed set used for every split.
    Fixed(&'a [usize]),
    /// Draw `k` of the allowed features afresh for each split.
    PerSplit(usize),
}

struct GrowLimits {
    max_depth: Option<usize>,
    max_leaf_nodes: Option<usize>,
}

fn grow<C: Criterion>(
    crit: &C,
    x: &Matrix,
    samples: Vec<usize>,
    limits: GrowLimits,
    draw: FeatureDraw<'_>,
    rng: &mut Rng,
) -> Tree {
    let all: Vec<usize> = (0..x.n_cols()).collect();
    let pick_features = |rng: &mut Rng| -> Vec<usize> {
        match draw {
            FeatureDraw::Fixed(f) => f.to_vec(),
            FeatureDraw::PerSplit(k) if k >= all.len() => all.clone(),
            FeatureDraw::PerSplit(k) => {
                let mut chosen: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
                chosen.sort_unstable();
                chosen
            }
        }
    };
    let stat_of = |s: &[usize]| {
        s.iter()
            .fold(C::Stat::default(), |acc, &i| C::add(acc, crit.stat(i)))
    };
    let search = |samples: &[usize], depth: usize, total: C::Stat, rng: &mut Rng| {
        if limits.max_depth.is_some_and(|d| depth >= d) || !crit.splittable(total) {
            return None;
        }
        let feats = pick_features(rng);
        best_split(crit, x, samples, &feats, total)
    };

    let root_stat = stat_of(&samples);
    let mut nodes = vec![Node {
        split: None,
        value: crit.leaf_value(root_stat),
        cover: crit.cover(root_stat),
    }];
    let root_split = search(&samples, 0, root_stat, rng);
    let mut open = vec![Frontier {
        node: 0,
        samples,
        depth: 0,
        split: root_split,
    }];
    let mut leaves = 1;

    loop {
        if limits.max_leaf_nodes.is_some_and(|m| leaves >= m) {
            break;
        }
        // best-first: largest gain, lowest node index on ties
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.split.map(|s| (i, s.gain, f.node)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((idx, _, _)) = pick else { break };
        let f = open.swap_remove(idx);
        let cand = f.split.expect("picked node has a split");
        let (ls, rs): (Vec<usize>, Vec<usize>) = f
            .samples
            .iter()
            .partition(|&&i| x.get(i, cand.feature) < cand.threshold);
        let (l_stat, r_stat) = (stat_of(&ls), stat_of(&rs));
        let l = nodes.len();
        nodes.push(Node {
            split: None,
            value: crit.leaf_value(l_stat),
            cover: crit.cover(l_stat),
        });
        nodes.push(Node {
            split: None,
            value: crit.leaf_value(r_stat),
            cover: crit.cover(r_stat),
        });
        nodes[f.node].split = Some(Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left: l,
            right: l + 1,
        });
        leaves += 1;
        let l_split = search(&ls, f.depth + 1, l_stat, rng);
        let r_split = search(&rs, f.depth + 1, r_stat, rng);
        open.push(Frontier {
            node: l,
            samples: ls,
            depth: f.depth + 1,
            split: l_split,
        });
        open.push(Frontier {
            node: l + 1,
            samples: rs,
            depth: f.depth + 1,
            split: r_split,
        });
    }
    Tree { nodes }
}

fn check_xy(x: &Matrix, y: &[bool]) -> Result<(), TreeError> {
    if x.n_rows() != y.len() {
        return Err(TreeError::LengthMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    if y.is_empty() {
        return Err(TreeError::EmptyData);
    }
    if x.n_cols() == 0 {
        return Err(TreeError::NoFeatures);
    }
    Ok(())
}

/// Grows a CART classification tree on all rows of `x`.
pub fn fit_tree(x: &Matrix, y: &[bool], params: &TreeParams, seed: u64) -> Result<Tree, TreeError> {
    check_xy(x, y)?;
    params.validate()?;
    let samples: Vec<usize> = (0..y.len()).collect();
    Ok(fit_tree_on(x, y, samples, params, &mut rng_from_seed(seed)))
}

fn fit_tree_on(x: &Matrix, y: &[bool], samples: Vec<usize>, params: &TreeParams, rng: &mut Rng) -> Tree {
    let crit = Gini {
        y,
        min_samples_leaf: params.min_samples_leaf as f64,
    };
    let limits = GrowLimits {
        max_depth: params.max_depth,
        max_leaf_nodes: params.max_leaf_nodes,
    };
    let k = params.max_features.resolve(x.n_cols());
    grow(&crit, x, samples, limits, FeatureDraw::PerSplit(k), rng)
}

// ---------------------------------------------------------------------------
// Ensembles

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Forest(ForestParams),
    Boosted(BoostParams),
}

impl ModelParams {
    pub fn with_seed(self, seed: u64) -> ModelParams {
        match self {
            ModelParams::Forest(p) => ModelParams::Forest(ForestParams { seed, ..p }),
            ModelParams::Boosted(p) => ModelParams::Boosted(BoostParams { seed, ..p }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Forest(_) => ModelKind::Forest,
            ModelParams::Boosted(_) => ModelKind::Boosted,
        }
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |o: Option<usize>| o.map_or("none".to_string(), |v| v.to_string());
        match self {
            ModelParams::Forest(p) => write!(
                f,
                "n_estimators={} max_features={:?} max_depth={} min_samples_leaf={} max_leaf_nodes={}",
                p.n_estimators,
                p.tree.max_features,
                opt(p.tree.max_depth),
                p.tree.min_samples_leaf,
                opt(p.tree.max_leaf_nodes)
            ),
            ModelParams::Boosted(p) => write!(
                f,
                "gamma={} colsample_bytree={} max_depth={} n_estimators={} learning_rate={}",
                p.gamma, p.colsample_bytree, p.max_depth, p.n_estimators, p.learning_rate
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Boosted,
}

/// A fitted forest or boosted model with its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub params: ModelParams,
    pub trees: Vec<Tree>,
    /// Initial margin of a boosted model; 0 for forests.
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub threshold: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl EnsembleModel {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_row(&self, row: &[f64]) -> Result<(), TreeError> {
        if row.len() != self.n_features() {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Model output before the link: mean leaf probability for a forest,
    /// summed margin for a boosted model.
    pub fn raw_output(&self, row: &[f64]) -> Result<f64, TreeError> {
        self.check_row(row)?;
        Ok(match self.kind() {
            ModelKind::Forest => {
                self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
            }
            ModelKind::Boosted => {
                self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
            }
        })
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, TreeError> {
        let raw = self.raw_output(row)?;
        Ok(match self.kind() {
            ModelKind::Forest => raw,
            ModelKind::Boosted => sigmoid(raw),
        })
    }

    /// Probability and the thresholded decision `probability >= threshold`.
    pub fn predict(&self, row: &[f64]) -> Result<(f64, bool), TreeError> {
        let p = self.predict_proba(row)?;
        Ok((p, p >= self.threshold))
    }

    pub fn predict_proba_matrix(&self, x: &Matrix) -> Result<Vec<f64>, TreeError> {
        x.rows().map(|r| self.predict_proba(r)).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<EnsembleModel> {
        serde_json::from_str(s)
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

/// Random forest: `n_estimators` CART trees, each on a bootstrap resample
/// (if enabled) with per-split feature sampling. Tree `i` uses the seed
/// derived from `(params.seed, i)`.
pub fn fit_forest(x: &Matrix, y: &[bool], params: &ForestParams) -> Result<EnsembleModel, TreeError> {
    check_xy(x, y)?;
    params.validate()?;
    let n = y.len();
    let trees: Vec<Tree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(params.seed, i as u64));
            let samples: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(x, y, samples, &params.tree, &mut rng)
        })
        .collect();
    Ok(EnsembleModel {
        params: ModelParams::Forest(*params),
        trees,
        base_score: 0.0,
        feature_names: default_names(x.n_cols()),
        threshold: 0.5,
    })
}

fn log_loss(margins: &[f64], y: &[bool]) -> f64 {
    // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| if t { softplus(-m) } else { softplus(m) })
        .sum::<f64>()
        / y.len() as f64
}

/// Clamp applied to the class prior before taking its logit.
const PRIOR_CLAMP: f64 = 1e-6;

/// Gradient boosting on the logistic loss. Returns the model together with
/// the mean training log-loss before the first round and after every round.
pub fn fit_boosted_with_trace(
    x: &Matrix,
    y: &[bool],
    params: &BoostParams,
) -> Result<(EnsembleModel, Vec<f64>), TreeError> {
    check_xy(x, y)?;
    params.validate()?;
    let n = y.len();
    let prior = y.iter().filter(|&&t| t).count() as f64 / n as f64;
    let prior = prior.clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (prior / (1.0 - prior)).ln();
    let mut margins = vec![base_score; n];
    let mut trace = vec![log_loss(&margins, y)];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let p = x.n_cols();
    let k = ((params.colsample_bytree * p as f64).floor() as usize).clamp(1, p);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for round in 0..params.n_estimators {
        for i in 0..n {
            let prob = sigmoid(margins[i]);
            grad[i] = prob - if y[i] { 1.0 } else { 0.0 };
            hess[i] = (prob * (1.0 - prob)).max(1e-16);
        }
        let mut rng = rng_from_seed(derive_seed(params.seed, round as u64));
        let mut cols: Vec<usize> = (0..p).collect();
        if k < p {
            cols.shuffle(&mut rng);
            cols.truncate(k);
            cols.sort_unstable();
        }
        let crit = SecondOrder {
            grad: &grad,
            hess: &hess,
            lambda: params.reg_lambda,
            gamma: params.gamma,
            min_child_weight: params.min_child_weight,
            learning_rate: params.learning_rate,
        };
        let limits = GrowLimits {
            max_depth: Some(params.max_depth),
            max_leaf_nodes: None,
        };
        let tree = grow(&crit, x, (0..n).collect(), limits, FeatureDraw::Fixed(&cols), &mut rng);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(x.row(i));
        }
        trees.push(tree);
        trace.push(log_loss(&margins, y));
    }
    let model = EnsembleModel {
        params: ModelParams::Boosted(*params),
        trees,
        base_score,
        feature_names: default_names(p),
        threshold: 0.5,
    };
    Ok((model, trace))
}

pub fn fit_boosted(x: &Matrix, y: &[bool], params: &BoostParams) -> Result<EnsembleModel, TreeError> {
    fit_boosted_with_trace(x, y, params).map(|(m, _)| m)
}

/// Fits either ensemble kind.
pub fn fit_model(x: &Matrix, y: &[bool], params: &ModelParams) -> Result<EnsembleModel, TreeError> {
    match params {
        ModelParams::Forest(p) => fit_forest(x, y, p),
        ModelParams::Boosted(p) => fit_boosted(x, y, p),
    }
}

// ---------------------------------------------------------------------------
// Metrics and threshold

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Precision, recall and F1 are 0 when their denominators are 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
        }
    }

    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Metrics {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Metrics::from_counts(tp, fp, fn_, tn)
    }
}

/// Metrics of `model` at its own threshold.
pub fn evaluate(model: &EnsembleModel, x: &Matrix, y: &[bool]) -> Result<Metrics, TreeError> {
    check_xy(x, y)?;
    let predicted = x
        .rows()
        .map(|r| model.predict(r).map(|(_, b)| b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Metrics::from_predictions(&predicted, y))
}

/// Bounds keeping tuned thresholds inside the open unit interval.
pub const THRESHOLD_MIN: f64 = 1e-9;
pub const THRESHOLD_MAX: f64 = 1.0 - 1e-9;

/// Threshold minimising `|precision − recall|`, ties going to the higher F1
/// and then to the lower threshold. Candidates are the lowest score and the
/// midpoints between consecutive distinct scores, so a cut between two
/// groups of scores sits halfway rather than on the edge of either group.
/// Results are clamped into `[THRESHOLD_MIN, THRESHOLD_MAX]`.
pub fn tune_threshold_scores(scores: &[f64], labels: &[bool]) -> Result<f64, TreeError> {
    if scores.len() != labels.len() {
        return Err(TreeError::LengthMismatch {
            rows: scores.len(),
            labels: labels.len(),
        });
    }
    if !labels.iter().any(|&t| t) || labels.iter().all(|&t| t) {
        return Err(TreeError::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![sorted[0]];
    candidates.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    for c in candidates.iter_mut() {
        *c = c.clamp(THRESHOLD_MIN, THRESHOLD_MAX);
    }
    candidates.dedup();
    let mut best: Option<(f64, f64, f64)> = None; // (gap, f1, threshold)
    for &t in &candidates {
        let predicted: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let m = Metrics::from_predictions(&predicted, labels);
        let gap = (m.precision - m.recall).abs();
        let better = match best {
            None => true,
            Some((bg, bf, _)) => gap < bg || (gap == bg && m.f1 > bf),
        };
        if better {
            best = Some((gap, m.f1, t));
        }
    }
    Ok(best.expect("at least one candidate").2)
}

pub fn tune_threshold(model: &EnsembleModel, x_val: &Matrix, y_val: &[bool]) -> Result<f64, TreeError> {
    check_xy(x_val, y_val)?;
    let scores = model.predict_proba_matrix(x_val)?;
    tune_threshold_scores(&scores, y_val)
}

// ---------------------------------------------------------------------------
// Grid search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_leaf: Vec<usize>,
    pub max_leaf_nodes: Vec<Option<usize>>,
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostGrid {
    pub gamma: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub reg_lambda: f64,
    #[serde(default)]
    pub min_child_weight: f64,
}

/// Hyperparameter lattice for one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamGrid {
    Forest(ForestGrid),
    Boosted(BoostGrid),
}

impl ParamGrid {
    pub fn default_forest() -> ParamGrid {
        ParamGrid::Forest(ForestGrid {
            n_estimators: vec![50, 100, 200],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Fraction(0.5), MaxFeatures::All],
            max_depth: vec![Some(4), Some(8), None],
            min_samples_leaf: vec![1, 2, 4],
            max_leaf_nodes: vec![Some(16), Some(32), None],
            bootstrap: true,
        })
    }

    pub fn default_boosted() -> ParamGrid {
        ParamGrid::Boosted(BoostGrid {
            gamma: vec![0.0, 0.5, 1.0],
            colsample_bytree: vec![0.6, 0.8, 1.0],
            max_depth: vec![2, 4, 6],
            n_estimators: vec![50, 100, 200],
            learning_rate: vec![0.05, 0.1, 0.3],
            reg_lambda: 1.0,
            min_child_weight: 0.0,
        })
    }

    /// Every configuration, last axis varying fastest.
    pub fn expand(&self, seed: u64) -> Vec<ModelParams> {
        let mut out = Vec::new();
        match self {
            ParamGrid::Forest(g) => {
                for &n_estimators in &g.n_estimators {
                    for &max_features in &g.max_features {
                        for &max_depth in &g.max_depth {
                            for &min_samples_leaf in &g.min_samples_leaf {
                                for &max_leaf_nodes in &g.max_leaf_nodes {
                                    out.push(ModelParams::Forest(ForestParams {
                                        n_estimators,
                                        tree: TreeParams {
                                            max_depth,
                                            min_samples_leaf,
                                            max_leaf_nodes,
                                            max_features,
                                        },
                                        bootstrap: g.bootstrap,
                                        seed,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
            ParamGrid::Boosted(g) => {
                for &gamma in &g.gamma {
                    for &colsample_bytree in &g.colsample_bytree {
                        for &max_depth in &g.max_depth {
                            for &n_estimators in &g.n_estimators {
                                for &learning_rate in &g.learning_rate {
                                    out.push(ModelParams::Boosted(BoostParams {
                                        n_estimators,
                                        learning_rate,
                                        max_depth,
                                        gamma,
                                        colsample_bytree,
                                        reg_lambda: g.reg_lambda,
                                        min_child_weight: g.min_child_weight,
                                        seed,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Fold id per sample. Positives and negatives are shuffled separately and
/// dealt round-robin, so every fold's positive count is within one of `P/k`.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![0; y.len()];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[i] = j % k;
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: ModelParams,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Folds whose validation part held a single class and were scored by
    /// accuracy instead of F1.
    pub fallback_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: ModelParams,
    pub table: Vec<CvRow>,
    pub folds: Vec<usize>,
    pub k: usize,
}

fn fold_parts(folds: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != fold)
}

fn select<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Exhaustive k-fold search scored by mean validation F1 at threshold 0.5.
/// The first configuration in lattice order wins ties.
pub fn grid_search_cv(
    x: &Matrix,
    y: &[bool],
    grid: &ParamGrid,
    k: usize,
    seed: u64,
) -> Result<GridSearchResult, TreeError> {
    check_xy(x, y)?;
    if k < 2 || y.len() < k {
        return Err(TreeError::InvalidParams(format!(
            "need 2 <= k <= n, got k={k}, n={}",
            y.len()
        )));
    }
    let cells = grid.expand(seed);
    if cells.is_empty() {
        return Err(TreeError::InvalidParams("empty grid".into()));
    }
    for c in &cells {
        match c {
            ModelParams::Forest(p) => p.validate()?,
            ModelParams::Boosted(p) => p.validate()?,
        }
    }
    let folds = stratified_folds(y, k, seed);
    let table = cells
        .par_iter()
        .map(|params| {
            let mut fold_scores = Vec::with_capacity(k);
            let mut fallback_folds = Vec::new();
            for fold in 0..k {
                let (train, val) = fold_parts(&folds, fold);
                let model = fit_model(&x.select_rows(&train), &select(y, &train), params)?;
                let y_val = select(y, &val);
                let m = evaluate(&model, &x.select_rows(&val), &y_val)?;
                let single = y_val.iter().all(|&t| t) || !y_val.iter().any(|&t| t);
                if single {
                    fallback_folds.push(fold);
                    fold_scores.push(m.accuracy);
                } else {
                    fold_scores.push(m.f1);
                }
            }
            let mean = fold_scores.iter().sum::<f64>() / k as f64;
            Ok(CvRow {
                params: *params,
                fold_scores,
                mean,
                fallback_folds,
            })
        })
        .collect::<Result<Vec<_>, TreeError>>()?;
    let mut best_index = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean > table[best_index].mean {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best: table[best_index].params,
        table,
        folds,
        k,
    })
}

/// Out-of-fold probabilities for `params` under a fixed fold assignment.
pub fn cross_val_predict(
    x: &Matrix,
    y: &[bool],
    params: &ModelParams,
    folds: &[usize],
) -> Result<Vec<f64>, TreeError> {
    check_xy(x, y)?;
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; y.len()];
    for fold in 0..k {
        let (train, val) = fold_parts(folds, fold);
        if val.is_empty() {
            continue;
        }
        let model = fit_model(&x.select_rows(&train), &select(y, &train), params)?;
        for &i in &val {
            out[i] = model.predict_proba(x.row(i))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(xs: &[f64]) -> Matrix {
        Matrix::new(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let x = col(&[1.0, 2.0, 3.0]);
        let t = fit_tree(&x, &[true; 3], &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[5.0]), 1.0);
    }

    #[test]
    fn depth_zero_is_prior_leaf() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let p = TreeParams {
            max_depth: Some(0),
            ..TreeParams::default()
        };
        let t = fit_tree(&x, &[true, false, false, false], &p, 0).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[0.0]), 0.25);
    }

    #[test]
    fn stump_separates_sign() {
        let xs = [-3.0, -1.5, -0.2, 0.0, 0.7, 2.0];
        let y: Vec<bool> = xs.iter().map(|&v| v >= 0.0).collect();
        let p = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let t = fit_tree(&col(&xs), &y, &p, 0).unwrap();
        let s = t.nodes()[0].split.unwrap();
        assert!(s.threshold > -0.2 && s.threshold <= 0.0, "{}", s.threshold);
        for (&v, &label) in xs.iter().zip(&y) {
            assert_eq!(t.predict(&[v]) >= 0.5, label);
        }
    }

    #[test]
    fn empty_data_errors() {
        let x = Matrix::new(0, 1, vec![]);
        assert_eq!(
            fit_tree(&x, &[], &TreeParams::default(), 0),
            Err(TreeError::EmptyData)
        );
    }

    #[test]
    fn max_leaf_nodes_respected() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<bool> = (0..40).map(|i| (i / 5) % 2 == 0).collect();
        let p = TreeParams {
            max_leaf_nodes: Some(3),
            ..TreeParams::default()
        };
        let t = fit_tree(&col(&xs), &y, &p, 0).unwrap();
        assert_eq!(t.n_leaves(), 3);
        let p = TreeParams {
            min_samples_leaf: 5,
            ..TreeParams::default()
        };
        let t = fit_tree(&col(&xs), &y, &p, 0).unwrap();
        for n in t.nodes().iter().filter(|n| n.split.is_none()) {
            assert!(n.cover >= 5.0);
        }
    }

    #[test]
    fn single_tree_forest_matches_tree() {
        let x = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.5],
            vec![2.0, 0.1],
            vec![3.0, 0.9],
            vec![4.0, 0.3],
        ]);
        let y = [false, true, false, true, true];
        let tree_params = TreeParams::default();
        let forest = fit_forest(
            &x,
            &y,
            &ForestParams {
                n_estimators: 1,
                tree: tree_params,
                bootstrap: false,
                seed: 3,
            },
        )
        .unwrap();
        let tree = fit_tree(&x, &y, &tree_params, 3).unwrap();
        for r in x.rows() {
            assert_eq!(forest.predict_proba(r).unwrap(), tree.predict(r));
        }
    }

    #[test]
    fn constant_forest_probability() {
        let model = EnsembleModel {
            params: ModelParams::Forest(ForestParams::default()),
            trees: vec![Tree::leaf(0.7, 1.0); 3],
            base_score: 0.0,
            feature_names: vec!["a".into()],
            threshold: 0.5,
        };
        let (p, b) = model.predict(&[0.0]).unwrap();
        assert!((p - 0.7).abs() < 1e-15);
        assert!(b);
        assert!(matches!(
            model.predict(&[0.0, 1.0]),
            Err(TreeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_margin_is_half() {
        let model = EnsembleModel {
            params: ModelParams::Boosted(BoostParams::default()),
            trees: vec![],
            base_score: 0.0,
            feature_names: vec!["a".into()],
            threshold: 0.5,
        };
        assert_eq!(model.predict_proba(&[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn zero_rounds_is_logit_prior() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let y = [true, false, false, false];
        let m = fit_boosted(
            &x,
            &y,
            &BoostParams {
                n_estimators: 0,
                ..BoostParams::default()
            },
        )
        .unwrap();
        assert!((m.base_score - (0.25f64 / 0.75).ln()).abs() < 1e-12);
        assert!((m.predict_proba(&[9.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn xor_is_learned() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ]);
        let y = [false, true, true, false];
        let m = fit_boosted(
            &x,
            &y,
            &BoostParams {
                n_estimators: 50,
                max_depth: 2,
                ..BoostParams::default()
            },
        )
        .unwrap();
        let acc = evaluate(&m, &x, &y).unwrap().accuracy;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn metrics_from_counts() {
        let m = Metrics::from_counts(2, 1, 1, 6);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let none = Metrics::from_predictions(&[false; 10], &[
            true, true, true, false, false, false, false, false, false, false,
        ]);
        assert!((none.accuracy - 0.7).abs() < 1e-12);
        assert_eq!(none.recall, 0.0);
        assert_eq!(none.f1, 0.0);
        let perfect = Metrics::from_predictions(&[true, false], &[true, false]);
        assert_eq!(
            perfect,
            Metrics {
                accuracy: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn threshold_on_separated_scores() {
        let scores = [0.1, 0.2, 0.35, 0.6, 0.8, 0.9];
        let labels = [false, false, false, true, true, true];
        let t = tune_threshold_scores(&scores, &labels).unwrap();
        assert!((t - 0.475).abs() < 1e-12, "{t}");
        let pred: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let m = Metrics::from_predictions(&pred, &labels);
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
    }

    #[test]
    fn threshold_on_constant_scores() {
        let labels = [true, false, false, false, true];
        let scores = [0.4; 5];
        let t = tune_threshold_scores(&scores, &labels).unwrap();
        assert!(t > 0.0 && t < 1.0);
        let pred: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let m = Metrics::from_predictions(&pred, &labels);
        assert!((m.precision - 0.4).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert_eq!(
            tune_threshold_scores(&[0.2, 0.3], &[true, true]),
            Err(TreeError::SingleClass)
        );
    }

    #[test]
    fn threshold_stays_open_interval() {
        let t = tune_threshold_scores(&[0.0, 0.0, 1.0], &[false, true, true]).unwrap();
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn tree_json_roundtrip() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let m = fit_forest(
            &x,
            &[false, false, true, true],
            &ForestParams {
                n_estimators: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let back = EnsembleModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"feature":[0],"threshold":[0.5],"left":[0],"right":[0],"value":[0.0],"cover":[1.0]}"#;
        assert!(serde_json::from_str::<Tree>(bad).is_err());
    }

    #[test]
    fn fold_balance() {
        let y: Vec<bool> = (0..53).map(|i| i % 4 == 0).collect();
        let folds = stratified_folds(&y, 5, 9);
        let p = y.iter().filter(|&&t| t).count() as f64;
        for f in 0..5 {
            let c = (0..y.len()).filter(|&i| folds[i] == f && y[i]).count() as f64;
            assert!((c - p / 5.0).abs() <= 1.0);
        }
    }
}

//! Exact path-dependent TreeSHAP.
//!
//! Missing features are integrated out by following both children weighted
//! by training cover, so values satisfy local accuracy against the model's
//! raw output: probability for forests (averaged over trees), margin for
//! boosted models (summed over trees plus the base score).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::trees::{EnsembleModel, ModelKind, Tree};

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tree splits on feature {feature} but the row has {n_features}")]
    FeatureOutOfRange { feature: usize, n_features: usize },
    #[error("model has no trees")]
    EmptyModel,
}

/// Attribution of one prediction: `base_value + Σ values = raw output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub base_value: f64,
    pub values: Vec<f64>,
}

impl Explanation {
    pub fn output(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathEl {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathEl>, zero: f64, one: f64, feature: Option<usize>) {
    let d = path.len();
    path.push(PathEl {
        feature,
        zero,
        one,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    let dn = (d + 1) as f64;
    for i in (0..d).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / dn;
        path[i].weight = zero * path[i].weight * (d - i) as f64 / dn;
    }
}

fn unwind(path: &mut Vec<PathEl>, idx: usize) {
    let d = path.len() - 1;
    let PathEl { zero, one, .. } = path[idx];
    let dn = (d + 1) as f64;
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * dn / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / dn;
        } else {
            path[i].weight = path[i].weight * dn / (zero * (d - i) as f64);
        }
    }
    for i in idx..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `idx` removed.
fn unwound_sum(path: &[PathEl], idx: usize) -> f64 {
    let d = path.len() - 1;
    let PathEl { zero, one, .. } = path[idx];
    let dn = (d + 1) as f64;
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * dn / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / dn;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i) as f64 / dn);
        }
    }
    total
}

struct Walk<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    phi: &'a mut [f64],
}

impl Walk<'_> {
    fn recurse(&mut self, node: usize, mut path: Vec<PathEl>, zero: f64, one: f64, feature: Option<usize>) {
        extend(&mut path, zero, one, feature);
        let n = &self.tree.nodes()[node];
        let Some(s) = n.split else {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                let f = el.feature.expect("only the root element lacks a feature");
                self.phi[f] += w * (el.one - el.zero) * n.value;
            }
            return;
        };
        let (hot, cold) = if self.row[s.feature] < s.threshold {
            (s.left, s.right)
        } else {
            (s.right, s.left)
        };
        let nodes = self.tree.nodes();
        let hot_zero = nodes[hot].cover / n.cover;
        let cold_zero = nodes[cold].cover / n.cover;
        let (mut in_zero, mut in_one) = (1.0, 1.0);
        if let Some(k) = path.iter().position(|p| p.feature == Some(s.feature)) {
            in_zero = path[k].zero;
            in_one = path[k].one;
            unwind(&mut path, k);
        }
        self.recurse(hot, path.clone(), hot_zero * in_zero, in_one, Some(s.feature));
        self.recurse(cold, path, cold_zero * in_zero, 0.0, Some(s.feature));
    }
}

/// Cover-weighted mean leaf value of `tree`.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        let n = &t.nodes()[i];
        match n.split {
            Some(s) => {
                let (l, r) = (&t.nodes()[s.left], &t.nodes()[s.right]);
                (l.cover * go(t, s.left) + r.cover * go(t, s.right)) / (l.cover + r.cover)
            }
            None => n.value,
        }
    }
    go(tree, 0)
}

fn check_tree(tree: &Tree, n_features: usize) -> Result<(), AttributionError> {
    match tree.max_feature() {
        Some(f) if f >= n_features => Err(AttributionError::FeatureOutOfRange {
            feature: f,
            n_features,
        }),
        _ => Ok(()),
    }
}

/// SHAP values of a single tree's output at `row`.
pub fn tree_shap(tree: &Tree, row: &[f64]) -> Result<Explanation, AttributionError> {
    check_tree(tree, row.len())?;
    let mut phi = vec![0.0; row.len()];
    Walk {
        tree,
        row,
        phi: &mut phi,
    }
    .recurse(0, Vec::new(), 1.0, 1.0, None);
    Ok(Explanation {
        base_value: expected_value(tree),
        values: phi,
    })
}

/// SHAP values of the model's raw output at `row`.
pub fn shap_values(model: &EnsembleModel, row: &[f64]) -> Result<Explanation, AttributionError> {
    if row.len() != model.n_features() {
        return Err(AttributionError::DimensionMismatch {
            expected: model.n_features(),
            got: row.len(),
        });
    }
    if model.trees.is_empty() && model.kind() == ModelKind::Forest {
        return Err(AttributionError::EmptyModel);
    }
    let mut base = 0.0;
    let mut phi = vec![0.0; row.len()];
    for t in &model.trees {
        let e = tree_shap(t, row)?;
        base += e.base_value;
        for (p, v) in phi.iter_mut().zip(e.values) {
            *p += v;
        }
    }
    match model.kind() {
        ModelKind::Forest => {
            let k = model.trees.len() as f64;
            base /= k;
            phi.iter_mut().for_each(|p| *p /= k);
        }
        ModelKind::Boosted => base += model.base_score,
    }
    Ok(Explanation {
        base_value: base,
        values: phi,
    })
}

/// Attributions for every row of `x`.
pub fn shap_matrix(model: &EnsembleModel, x: &Matrix) -> Result<Vec<Explanation>, AttributionError> {
    (0..x.n_rows())
        .into_par_iter()
        .map(|i| shap_values(model, x.row(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Features by decreasing mean |SHAP|; ties keep the order of `names`.
pub fn importance_ranking(explanations: &[Explanation], names: &[String]) -> Vec<RankedFeature> {
    let n = explanations.len().max(1) as f64;
    let mut ranked: Vec<RankedFeature> = names
        .iter()
        .enumerate()
        .map(|(j, name)| RankedFeature {
            feature: name.clone(),
            mean_abs_shap: explanations.iter().map(|e| e.values[j].abs()).sum::<f64>() / n,
        })
        .collect();
    ranked.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap));
    ranked
}

/// `feature,mean_abs_shap,rank` CSV text, best first.
pub fn ranking_csv(ranking: &[RankedFeature]) -> String {
    let mut out = String::from("feature,mean_abs_shap,rank\n");
    for (i, r) in ranking.iter().enumerate() {
        let name = if r.feature.contains(',') {
            format!("\"{}\"", r.feature)
        } else {
            r.feature.clone()
        };
        out.push_str(&format!("{},{},{}\n", name, r.mean_abs_shap, i + 1));
    }
    out
}

//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except for plain data types.
#![allow(dead_code)]

use morphoforge::data::Matrix;
use morphoforge::trees::{Node, Split, Tree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Two-sided Mann-Whitney p-value by enumerating every placement of the `n`
/// x-ranks among `n + m` positions: P(min(U, nm − U) <= u_obs).
pub fn mwu_p_enumerated(n: usize, m: usize, u_obs: f64) -> f64 {
    let total = n + m;
    let nm = (n * m) as f64;
    let (mut hit, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        all += 1;
        let rank_sum: usize = (0..total).filter(|&i| mask & (1 << i) != 0).map(|i| i + 1).sum();
        let u = rank_sum as f64 - (n * (n + 1)) as f64 / 2.0;
        if u.min(nm - u) <= u_obs + 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / all as f64
}

/// U of x with no ties: count of (x, y) pairs with x > y, then min with nm − U.
pub fn mwu_statistic(x: &[f64], y: &[f64]) -> f64 {
    let u = x.iter().map(|a| y.iter().filter(|&&b| *a > b).count()).sum::<usize>() as f64;
    u.min((x.len() * y.len()) as f64 - u)
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Hypergeometric point probability as an exact integer ratio
/// `C(a+b, a)·C(c+d, c) / C(N, a+c)`.
pub fn fisher_point_exact(a: u64, b: u64, c: u64, d: u64) -> (u128, u128) {
    (
        binomial(a + b, a) * binomial(c + d, c),
        binomial(a + b + c + d, a + c),
    )
}

/// Two-sided Fisher p-value with integer comparisons.
pub fn fisher_p_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (obs, den) = fisher_point_exact(a, b, c, d);
    let (r1, c1, n) = (a + b, a + c, a + b + c + d);
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let mut num = 0u128;
    for x in lo..=hi {
        let (p, _) = fisher_point_exact(x, r1 - x, c1 - x, n + x - r1 - c1);
        if p <= obs {
            num += p;
        }
    }
    num as f64 / den as f64
}

fn gini_mass(n: f64, pos: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        let p = pos / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    }
}

/// Smallest summed child Gini mass over every feature and every cut between
/// consecutive distinct values; `None` if no cut exists.
pub fn best_root_impurity(x: &Matrix, y: &[bool]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..x.n_cols() {
        let mut vals: Vec<f64> = (0..x.n_rows()).map(|i| x.get(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let cut = (w[0] + w[1]) / 2.0;
            let (mut nl, mut pl, mut nr, mut pr) = (0.0, 0.0, 0.0, 0.0);
            for (i, &yi) in y.iter().enumerate() {
                let t = if yi { 1.0 } else { 0.0 };
                if x.get(i, f) <= w[0] {
                    nl += 1.0;
                    pl += t;
                } else {
                    nr += 1.0;
                    pr += t;
                }
                let _ = cut;
            }
            let imp = gini_mass(nl, pl) + gini_mass(nr, pr);
            best = Some(best.map_or(imp, |b: f64| b.min(imp)));
        }
    }
    best
}

pub fn root_gini(y: &[bool]) -> f64 {
    gini_mass(y.len() as f64, y.iter().filter(|&&t| t).count() as f64)
}

/// Path-dependent conditional expectation of a tree given the features in
/// `known` (bit mask) take their values from `row`.
pub fn cond_expectation(tree: &Tree, row: &[f64], known: u32, node: usize) -> f64 {
    let n = &tree.nodes()[node];
    match n.split {
        None => n.value,
        Some(s) => {
            if known & (1 << s.feature) != 0 {
                let next = if row[s.feature] < s.threshold { s.left } else { s.right };
                cond_expectation(tree, row, known, next)
            } else {
                let (l, r) = (&tree.nodes()[s.left], &tree.nodes()[s.right]);
                (l.cover * cond_expectation(tree, row, known, s.left)
                    + r.cover * cond_expectation(tree, row, known, s.right))
                    / (l.cover + r.cover)
            }
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Shapley values of the cover-weighted conditional expectation game, by
/// summing over all coalitions.
pub fn brute_force_shapley(tree: &Tree, row: &[f64]) -> Vec<f64> {
    let m = row.len();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0u32..(1 << m) {
            if s & (1 << i) != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = factorial(size) * factorial(m - size - 1) / factorial(m);
            *p += w * (cond_expectation(tree, row, s | (1 << i), 0) - cond_expectation(tree, row, s, 0));
        }
    }
    phi
}

/// Random binary tree with integer-valued thresholds, leaf values in
/// `[-1, 1]` and covers that add up from the leaves.
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize) -> Tree {
    struct Proto {
        split: Option<(usize, f64)>,
        children: Option<(usize, usize)>,
        value: f64,
        cover: f64,
    }
    fn grow(rng: &mut ChaCha8Rng, out: &mut Vec<Proto>, nf: usize, depth: usize, max_depth: usize) -> usize {
        let id = out.len();
        out.push(Proto {
            split: None,
            children: None,
            value: 0.0,
            cover: 0.0,
        });
        if depth < max_depth && (depth == 0 || rng.random_bool(0.7)) {
            let f = rng.random_range(0..nf);
            let t = rng.random_range(1..5) as f64 + 0.5;
            let l = grow(rng, out, nf, depth + 1, max_depth);
            let r = grow(rng, out, nf, depth + 1, max_depth);
            out[id].split = Some((f, t));
            out[id].children = Some((l, r));
            out[id].cover = out[l].cover + out[r].cover;
        } else {
            out[id].value = rng.random_range(-1.0..1.0);
            out[id].cover = rng.random_range(1..20) as f64;
        }
        id
    }
    let mut protos = Vec::new();
    grow(rng, &mut protos, n_features, 0, max_depth);
    let nodes = protos
        .iter()
        .map(|p| Node {
            split: p.split.map(|(feature, threshold)| {
                let (left, right) = p.children.unwrap();
                Split {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }),
            value: p.value,
            cover: p.cover,
        })
        .collect();
    Tree::from_nodes(nodes).unwrap()
}

/// Pixel values drawn uniformly from `0..=255`.
pub fn random_pixels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..=255) as f64).collect()
}

pub mod checks;

//! Hypothesis tests used to screen synthesis parameters against shapes.
//!
//! Continuous parameters are compared between syntheses with and without a
//! shape (Mann-Whitney U, two-sample Kolmogorov-Smirnov) and across shape
//! groups (Kruskal-Wallis H, one-way ANOVA). Reagent indicators are tested on
//! a 2×2 contingency table (Fisher exact, Pearson chi-squared). Each test
//! family is Bonferroni-corrected separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::data::{Category, Dataset, Feature, ShapeCategory};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{0}: sample is empty")]
    EmptySample(&'static str),
    #[error("{test}: need at least {min} groups, got {got}")]
    TooFewGroups {
        test: &'static str,
        min: usize,
        got: usize,
    },
    #[error("anova: total sample size {n} must exceed the number of groups {k}")]
    TooFewObservations { n: usize, k: usize },
    #[error("anova: F is undefined (zero within- and between-group variance)")]
    UndefinedF,
    #[error("chi-squared: expected count is zero in at least one cell")]
    DegenerateExpectation,
    #[error("contingency table is empty")]
    EmptyTable,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("screening needs at least two distinct shapes, found {0}")]
    TooFewShapes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    MannWhitneyU,
    KolmogorovSmirnov,
    KruskalWallis,
    Anova,
    FisherExact,
    ChiSquared,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::MannWhitneyU => "mann_whitney_u",
            TestKind::KolmogorovSmirnov => "kolmogorov_smirnov",
            TestKind::KruskalWallis => "kruskal_wallis",
            TestKind::Anova => "anova",
            TestKind::FisherExact => "fisher_exact",
            TestKind::ChiSquared => "chi_squared",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    /// Absent for the decision-form KS test.
    pub p_value: Option<f64>,
    /// KS rejection bound; absent for the other tests.
    pub critical_value: Option<f64>,
    pub reject: bool,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<(), StatsError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::InvalidInput("non-finite observation".into()))
    }
}

fn p_result(test: TestKind, statistic: f64, p: f64, alpha: f64) -> TestResult {
    let p = p.clamp(0.0, 1.0);
    TestResult {
        test,
        statistic,
        p_value: Some(p),
        critical_value: None,
        reject: p < alpha,
        alpha,
    }
}

/// Mid-ranks (1-based) of `values` and the tie term `Σ (t³ − t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Null distribution of U (pairs with x > y) for sample sizes `n`, `m`
/// without ties, as probabilities indexed by U.
pub fn mann_whitney_exact_distribution(n: usize, m: usize) -> Vec<f64> {
    // counts[i][j][u]: arrangements of i x's and j y's with U = u.
    // Adding the largest element: an x beats all j y's, a y beats nothing.
    let max_u = n * m;
    let mut prev: Vec<Vec<u64>> = vec![vec![1]; m + 1]; // i = 0: only U = 0
    for i in 1..=n {
        let mut cur: Vec<Vec<u64>> = Vec::with_capacity(m + 1);
        cur.push(vec![1]); // j = 0
        for j in 1..=m {
            let mut row = vec![0u64; i * j + 1];
            for (u, &c) in prev[j].iter().enumerate() {
                row[u + j] += c;
            }
            for (u, &c) in cur[j - 1].iter().enumerate() {
                row[u] += c;
            }
            cur.push(row);
        }
        prev = cur;
    }
    let counts = &prev[m];
    let total: u64 = counts.iter().sum();
    let mut out: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    out.resize(max_u + 1, 0.0);
    out
}

/// Largest combined sample size for which the exact null distribution is used.
pub const MWU_EXACT_MAX_N: usize = 16;

/// Two-sided Mann-Whitney U test. The statistic is `min(U_x, U_y)`.
///
/// Tie-free samples with `|x| + |y| <= 16` get an exact p-value; otherwise
/// the normal approximation with tie and continuity corrections is used.
pub fn mann_whitney_u(x: &[f64], y: &[f64], alpha: f64) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample("mann_whitney_u"));
    }
    check_alpha(alpha)?;
    check_finite(x)?;
    check_finite(y)?;
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..n].iter().sum();
    let u_x = rank_sum_x - (n * (n + 1)) as f64 / 2.0;
    let nm = (n * m) as f64;
    let u = u_x.min(nm - u_x);

    let p = if n + m <= MWU_EXACT_MAX_N && ties == 0.0 {
        let dist = mann_whitney_exact_distribution(n, m);
        let k = u.round() as usize;
        let lower: f64 = dist[..=k].iter().sum();
        (2.0 * lower).min(1.0)
    } else {
        let big_n = (n + m) as f64;
        let var = nm / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u_x - nm / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2)
        }
    };
    Ok(p_result(TestKind::MannWhitneyU, u, p, alpha))
}

/// Kruskal-Wallis H test with tie correction; p from χ²(k − 1).
pub fn kruskal_wallis(groups: &[Vec<f64>], alpha: f64) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            test: "kruskal_wallis",
            min: 2,
            got: groups.len(),
        });
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(StatsError::EmptySample("kruskal_wallis"));
    }
    check_alpha(alpha)?;
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    check_finite(&pooled)?;
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let correction = 1.0 - ties / (n * n * n - n);
    let (h, p) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
        let chi = ChiSquared::new((groups.len() - 1) as f64).expect("df >= 1");
        (h, chi.sf(h))
    };
    Ok(p_result(TestKind::KruskalWallis, h, p, alpha))
}

/// Rejection bound `sqrt(-ln(α/2) · (1 + m/n) / (2m))` for the two-sample
/// KS statistic with `n = |x|`, `m = |y|`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    (-(alpha / 2.0).ln() * (1.0 + m / n) / (2.0 * m)).sqrt()
}

/// `sup |F_x − F_y|` over the pooled sample.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov test in decision form: rejects iff
/// `D > ks_critical_value(alpha, |x|, |y|)`. No p-value is produced.
pub fn ks_two_sample(x: &[f64], y: &[f64], alpha: f64) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample("ks_two_sample"));
    }
    check_alpha(alpha)?;
    check_finite(x)?;
    check_finite(y)?;
    let d = ks_statistic(x, y);
    let crit = ks_critical_value(alpha, x.len(), y.len());
    Ok(TestResult {
        test: TestKind::KolmogorovSmirnov,
        statistic: d,
        p_value: None,
        critical_value: Some(crit),
        reject: d > crit,
        alpha,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One-way ANOVA F test; p from F(K − 1, N − K).
///
/// Zero within-group variance with nonzero between-group variance yields
/// `statistic = +inf`, `p = 0`, `reject = true`.
pub fn anova_f(groups: &[Vec<f64>], alpha: f64) -> Result<TestResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups {
            test: "anova",
            min: 2,
            got: k,
        });
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(StatsError::EmptySample("anova"));
    }
    check_alpha(alpha)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= k {
        return Err(StatsError::TooFewObservations { n, k });
    }
    for g in groups {
        check_finite(g)?;
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let mu = mean(g);
        between += g.len() as f64 * (mu - grand).powi(2);
        within += g.iter().map(|x| (x - mu).powi(2)).sum::<f64>();
    }
    if within == 0.0 {
        if between > 0.0 {
            return Ok(TestResult {
                test: TestKind::Anova,
                statistic: f64::INFINITY,
                p_value: Some(0.0),
                critical_value: None,
                reject: true,
                alpha,
            });
        }
        return Err(StatsError::UndefinedF);
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    let f = (between / df1) / (within / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    Ok(p_result(TestKind::Anova, f, dist.sf(f), alpha))
}

/// 2×2 counts. Rows: syntheses with / without the shape; columns: compound
/// present / absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    fn ln_point(a: u64, b: u64, c: u64, d: u64) -> f64 {
        let lf = |k: u64| ln_factorial(k);
        lf(a + b) + lf(c + d) + lf(a + c) + lf(b + d) - lf(a) - lf(b) - lf(c) - lf(d)
            - lf(a + b + c + d)
    }

    /// Hypergeometric probability of this exact table given its margins:
    /// `(a+b)!(c+d)!(a+c)!(b+d)! / (a!b!c!d!N!)`.
    pub fn point_probability(&self) -> f64 {
        Self::ln_point(self.a, self.b, self.c, self.d).exp()
    }

    /// Every table sharing this table's margins, ordered by its `a` cell.
    pub fn same_margin_tables(&self) -> Vec<ContingencyTable> {
        let row1 = self.a + self.b;
        let col1 = self.a + self.c;
        let n = self.total();
        let lo = (row1 + col1).saturating_sub(n);
        let hi = row1.min(col1);
        (lo..=hi)
            .map(|a| {
                let b = row1 - a;
                let c = col1 - a;
                ContingencyTable::new(a, b, c, n - a - b - c)
            })
            .collect()
    }
}

/// Relative slack when collecting tables "at most as probable" as the
/// observed one; absorbs rounding in the log-factorial sums.
pub const FISHER_RELATIVE_SLACK: f64 = 1e-7;

/// Fisher's exact test. The statistic is the observed point probability;
/// the p-value is the two-sided sum over same-margin tables no more probable
/// than the observed one.
pub fn fisher_exact(t: ContingencyTable, alpha: f64) -> Result<TestResult, StatsError> {
    if t.total() == 0 {
        return Err(StatsError::EmptyTable);
    }
    check_alpha(alpha)?;
    let ln_obs = ContingencyTable::ln_point(t.a, t.b, t.c, t.d);
    let bound = ln_obs + FISHER_RELATIVE_SLACK.ln_1p();
    let p: f64 = t
        .same_margin_tables()
        .iter()
        .map(|s| ContingencyTable::ln_point(s.a, s.b, s.c, s.d))
        .filter(|&lp| lp <= bound)
        .map(f64::exp)
        .sum();
    Ok(p_result(TestKind::FisherExact, ln_obs.exp(), p, alpha))
}

/// Pearson χ² test of independence without continuity correction, df = 1.
pub fn chi_squared(t: ContingencyTable, alpha: f64) -> Result<TestResult, StatsError> {
    let n = t.total() as f64;
    if n == 0.0 {
        return Err(StatsError::EmptyTable);
    }
    check_alpha(alpha)?;
    let rows = [(t.a + t.b) as f64, (t.c + t.d) as f64];
    let cols = [(t.a + t.c) as f64, (t.b + t.d) as f64];
    let observed = [[t.a as f64, t.b as f64], [t.c as f64, t.d as f64]];
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            if e == 0.0 {
                return Err(StatsError::DegenerateExpectation);
            }
            chi2 += (observed[i][j] - e).powi(2) / e;
        }
    }
    let dist = ChiSquared::new(1.0).expect("df = 1");
    Ok(p_result(TestKind::ChiSquared, chi2, dist.sf(chi2), alpha))
}

/// Bonferroni decisions: `p_i < alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let threshold = alpha / p_values.len().max(1) as f64;
    p_values.iter().map(|&p| p < threshold).collect()
}

/// One test in a screening run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningEntry {
    pub feature: String,
    /// `None` for the across-shape tests (Kruskal-Wallis, ANOVA).
    pub shape: Option<ShapeCategory>,
    pub test: TestKind,
    pub statistic: f64,
    pub p_raw: Option<f64>,
    /// Bonferroni threshold `alpha / m` of the entry's family.
    pub threshold: f64,
    pub reject: bool,
    /// Set when the test could not be evaluated.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub test: TestKind,
    /// Number of evaluated tests in the family.
    pub m: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVerdict {
    pub feature: String,
    pub keep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub alpha: f64,
    pub correction: String,
    pub families: Vec<TestFamily>,
    pub entries: Vec<ScreeningEntry>,
    pub skipped_shapes: Vec<(ShapeCategory, String)>,
    pub verdicts: Vec<FeatureVerdict>,
}

// raw outcome before correction
struct Raw {
    feature: String,
    kind: TestKind,
    shape: Option<ShapeCategory>,
    outcome: Result<TestResult, StatsError>,
    // KS needs the sample sizes to re-evaluate at the corrected level
    sizes: Option<(usize, usize)>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Runs the full battery over every feature of `dataset` and every shape.
///
/// Shapes with fewer than two positive or two negative syntheses are
/// skipped and listed in `skipped_shapes`. A feature is kept iff at least one
/// of its tests rejects after correction.
pub fn screen_features(dataset: &Dataset, alpha: f64) -> Result<ScreeningReport, StatsError> {
    check_alpha(alpha)?;
    if dataset.is_empty() {
        return Err(StatsError::EmptySample("screen_features"));
    }
    let present: Vec<ShapeCategory> = ShapeCategory::ALL
        .iter()
        .copied()
        .filter(|&s| dataset.positive_count(Category::Shape(s)) > 0)
        .collect();
    if present.len() < 2 {
        return Err(StatsError::TooFewShapes(present.len()));
    }
    let mut shapes = Vec::new();
    let mut skipped = Vec::new();
    for &s in ShapeCategory::ALL {
        let pos = dataset.positive_count(Category::Shape(s));
        let neg = dataset.len() - pos;
        if pos < 2 {
            skipped.push((s, format!("{pos} positive syntheses (need >= 2)")));
        } else if neg < 2 {
            skipped.push((s, format!("{neg} negative syntheses (need >= 2)")));
        } else {
            shapes.push(s);
        }
    }
    let targets: Vec<(ShapeCategory, Vec<bool>)> = shapes
        .iter()
        .map(|&s| (s, dataset.binary_target(Category::Shape(s))))
        .collect();
    let records = dataset.records();

    let per_feature: Vec<Vec<Raw>> = dataset
        .features()
        .par_iter()
        .map(|&feature| {
            let values: Vec<f64> = records.iter().map(|r| feature.value(r)).collect();
            let mut out = Vec::new();
            match feature {
                Feature::Continuous(_) => {
                    for (shape, target) in &targets {
                        let (pos, neg): (Vec<_>, Vec<_>) =
                            values.iter().zip(target).partition(|(_, &t)| t);
                        let pos = sorted(pos.into_iter().map(|(v, _)| *v).collect());
                        let neg = sorted(neg.into_iter().map(|(v, _)| *v).collect());
                        out.push(Raw {
                            feature: feature.name().into(),
                            kind: TestKind::MannWhitneyU,
                            shape: Some(*shape),
                            outcome: mann_whitney_u(&pos, &neg, alpha),
                            sizes: None,
                        });
                        out.push(Raw {
                            feature: feature.name().into(),
                            kind: TestKind::KolmogorovSmirnov,
                            shape: Some(*shape),
                            outcome: ks_two_sample(&pos, &neg, alpha),
                            sizes: Some((pos.len(), neg.len())),
                        });
                    }
                    let groups: Vec<Vec<f64>> = targets
                        .iter()
                        .map(|(_, t)| {
                            sorted(
                                values
                                    .iter()
                                    .zip(t)
                                    .filter(|(_, &b)| b)
                                    .map(|(v, _)| *v)
                                    .collect(),
                            )
                        })
                        .collect();
                    for (kind, outcome) in [
                        (TestKind::KruskalWallis, kruskal_wallis(&groups, alpha)),
                        (TestKind::Anova, anova_f(&groups, alpha)),
                    ] {
                        out.push(Raw {
                            feature: feature.name().into(),
                            kind,
                            shape: None,
                            outcome,
                            sizes: None,
                        });
                    }
                }
                _ => {
                    for (shape, target) in &targets {
                        let mut t = ContingencyTable::new(0, 0, 0, 0);
                        for (&v, &has_shape) in values.iter().zip(target) {
                            match (has_shape, v > 0.5) {
                                (true, true) => t.a += 1,
                                (true, false) => t.b += 1,
                                (false, true) => t.c += 1,
                                (false, false) => t.d += 1,
                            }
                        }
                        for (kind, outcome) in [
                            (TestKind::FisherExact, fisher_exact(t, alpha)),
                            (TestKind::ChiSquared, chi_squared(t, alpha)),
                        ] {
                            out.push(Raw {
                                feature: feature.name().into(),
                                kind,
                                shape: Some(*shape),
                                outcome,
                                sizes: None,
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    let raws: Vec<Raw> = per_feature.into_iter().flatten().collect();

    let mut counts: BTreeMap<TestKind, usize> = BTreeMap::new();
    for r in &raws {
        if let Ok(res) = &r.outcome {
            *counts.entry(res.test).or_default() += 1;
        }
    }
    let threshold_of = |kind: TestKind| alpha / counts.get(&kind).copied().unwrap_or(1).max(1) as f64;
    let families = counts
        .iter()
        .map(|(&test, &m)| TestFamily {
            test,
            m,
            threshold: threshold_of(test),
        })
        .collect();

    let mut entries = Vec::with_capacity(raws.len());
    for r in raws {
        let entry = match r.outcome {
            Ok(res) => {
                let threshold = threshold_of(res.test);
                let reject = match (res.test, r.sizes) {
                    (TestKind::KolmogorovSmirnov, Some((n, m))) => {
                        res.statistic > ks_critical_value(threshold, n, m)
                    }
                    _ => res.p_value.is_some_and(|p| p < threshold),
                };
                ScreeningEntry {
                    feature: r.feature,
                    shape: r.shape,
                    test: res.test,
                    statistic: res.statistic,
                    p_raw: res.p_value,
                    threshold,
                    reject,
                    note: None,
                }
            }
            Err(e) => {
                let test = r.kind;
                ScreeningEntry {
                    feature: r.feature,
                    shape: r.shape,
                    test,
                    statistic: f64::NAN,
                    p_raw: None,
                    threshold: threshold_of(test),
                    reject: false,
                    note: Some(e.to_string()),
                }
            }
        };
        entries.push(entry);
    }

    let verdicts = dataset
        .features()
        .iter()
        .map(|f| FeatureVerdict {
            feature: f.name().to_string(),
            keep: entries.iter().any(|e| e.feature == f.name() && e.reject),
        })
        .collect();

    Ok(ScreeningReport {
        alpha,
        correction: "bonferroni, one family per test kind, m = evaluated tests in family".into(),
        families,
        entries,
        skipped_shapes: skipped,
        verdicts,
    })
}

impl ScreeningReport {
    /// Features kept by the screen.
    pub fn kept(&self) -> Vec<&str> {
        self.verdicts
            .iter()
            .filter(|v| v.keep)
            .map(|v| v.feature.as_str())
            .collect()
    }

    /// Features with at least one rejecting test for `shape`.
    pub fn significant_for(&self, shape: ShapeCategory) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if e.shape == Some(shape) && e.reject && !out.contains(&e.feature.as_str()) {
                out.push(&e.feature);
            }
        }
        out
    }

    /// CSV with columns `feature,shape,test,p_raw,p_adjusted_threshold,reject`.
    /// Across-shape tests carry an empty shape; the KS test an empty `p_raw`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "feature",
            "shape",
            "test",
            "p_raw",
            "p_adjusted_threshold",
            "reject",
        ])?;
        for e in &self.entries {
            w.write_record([
                e.feature.clone(),
                e.shape.map(|s| s.name().to_string()).unwrap_or_default(),
                e.test.name().to_string(),
                e.p_raw.map(|p| format!("{p:e}")).unwrap_or_default(),
                format!("{:e}", e.threshold),
                e.reject.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Shape-by-shape summary of significant continuous and categorical
    /// features, followed by the correction parameters.
    pub fn to_table_text(&self, features: &[Feature]) -> String {
        let is_cont = |name: &str| {
            features
                .iter()
                .any(|f| f.name() == name && !f.is_indicator())
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<11} | {:<40} | Categorical", "Shape", "Continuous");
        let _ = writeln!(s, "{}", "-".repeat(96));
        for &shape in ShapeCategory::ALL {
            if let Some((_, why)) = self.skipped_shapes.iter().find(|(sh, _)| *sh == shape) {
                let _ = writeln!(s, "{:<11} | skipped: {why}", shape.name());
                continue;
            }
            let sig = self.significant_for(shape);
            let cont: Vec<&str> = sig.iter().copied().filter(|n| is_cont(n)).collect();
            let cat: Vec<&str> = sig.iter().copied().filter(|n| !is_cont(n)).collect();
            let fmt = |v: &[&str]| if v.is_empty() { "-".to_string() } else { v.join("; ") };
            let _ = writeln!(s, "{:<11} | {:<40} | {}", shape.name(), fmt(&cont), fmt(&cat));
        }
        let across: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.shape.is_none() && e.reject)
            .map(|e| format!("{} ({})", e.feature, e.test.name()))
            .collect();
        if !across.is_empty() {
            let _ = writeln!(s, "across shapes: {}", across.join("; "));
        }
        let _ = writeln!(s, "\nalpha = {}; {}", self.alpha, self.correction);
        for f in &self.families {
            let _ = writeln!(s, "  {:<20} m = {:<4} threshold = {:e}", f.test.name(), f.m, f.threshold);
        }
        s
    }
}

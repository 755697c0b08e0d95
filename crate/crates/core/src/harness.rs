//! Repeated experiments and report tables.
//!
//! Tree experiments run split → grid search → threshold tuning → refit →
//! test evaluation for every (category, seed) cell. LLM experiments query a
//! chat model with few-shot prompts on balanced test subsets. Both aggregate
//! per-seed results into mean ± sample standard deviation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    split, split_indices, Category, DataError, Dataset, MorphologyLabel, Polymer, ShapeCategory,
    ShapeSizeCategory, Solvent, Surfactant, SynthesisRecord, NON_INFORMATIVE_FEATURES,
};
use crate::llm::{EndpointConfig, LlmClient, LlmError};
use crate::prompts::{build_prompt, parse_answer, FewShotConfig, PromptError, PromptFormat, Sampling, TemplateLibrary};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trees::{
    cross_val_predict, evaluate, fit_model, grid_search_cv, tune_threshold_scores, EnsembleModel, GridSearchResult,
    Metrics, ModelParams, ParamGrid, TreeError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// The LLM run stopped early; `partial` holds everything completed.
    #[error("LLM experiment aborted after {} queries: {cause}", partial.queries.len())]
    Aborted { cause: LlmError, partial: Box<LlmReport> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSet {
    Shapes,
    ShapeSizes,
    Both,
}

impl TaskSet {
    pub fn categories(self) -> Vec<Category> {
        match self {
            TaskSet::Shapes => Category::all_shapes(),
            TaskSet::ShapeSizes => Category::all_shape_sizes(),
            TaskSet::Both => {
                let mut v = Category::all_shapes();
                v.extend(Category::all_shape_sizes());
                v
            }
        }
    }
}

/// Where LLM requests go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndpointSpec {
    Preset(String),
    Config(EndpointConfig),
}

impl EndpointSpec {
    pub fn resolve(&self) -> Result<EndpointConfig, HarnessError> {
        match self {
            EndpointSpec::Preset(id) => {
                EndpointConfig::preset(id).ok_or_else(|| HarnessError::Spec(format!("unknown endpoint preset '{id}'")))
            }
            EndpointSpec::Config(c) => Ok(c.clone()),
        }
    }
}

fn default_n_examples() -> Vec<usize> {
    vec![2, 4, 6, 8, 10]
}

fn default_strategies() -> Vec<Sampling> {
    vec![Sampling::OnlyTargetClass]
}

fn default_formats() -> Vec<PromptFormat> {
    vec![PromptFormat::Textual]
}

fn default_llm_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSweep {
    pub endpoint: EndpointSpec,
    #[serde(default = "default_n_examples")]
    pub n_examples: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Sampling>,
    #[serde(default = "default_formats")]
    pub formats: Vec<PromptFormat>,
    /// Test fraction of the stratified split the balanced subset is drawn from.
    #[serde(default = "default_llm_fraction")]
    pub test_fraction: f64,
    /// Cap on positives (and negatives) per balanced subset.
    #[serde(default)]
    pub max_per_class: Option<usize>,
    /// Shapes to evaluate; all five by default.
    #[serde(default = "default_shapes")]
    pub shapes: Vec<ShapeCategory>,
}

fn default_shapes() -> Vec<ShapeCategory> {
    ShapeCategory::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Rf {
        #[serde(default)]
        grid: Option<ParamGrid>,
    },
    Xgb {
        #[serde(default)]
        grid: Option<ParamGrid>,
    },
    Llm(LlmSweep),
}

fn default_fraction() -> f64 {
    0.33
}

fn default_compare() -> Vec<f64> {
    vec![0.33, 0.20, 0.15]
}

fn default_repeats() -> usize {
    5
}

fn default_folds() -> usize {
    5
}

fn default_exclusions() -> Vec<String> {
    NON_INFORMATIVE_FEATURES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub tasks: TaskSet,
    pub model: ModelSpec,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    /// Extra test fractions for the split comparison table; empty disables it.
    #[serde(default = "default_compare")]
    pub compare_fractions: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// One seed per repeat; empty means `0..repeats`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Feature columns removed before modelling.
    #[serde(default = "default_exclusions")]
    pub exclude_features: Vec<String>,
}

impl ExperimentSpec {
    pub fn new(tasks: TaskSet, model: ModelSpec) -> ExperimentSpec {
        ExperimentSpec {
            tasks,
            model,
            split_fraction: default_fraction(),
            compare_fractions: default_compare(),
            repeats: default_repeats(),
            seeds: Vec::new(),
            folds: default_folds(),
            exclude_features: default_exclusions(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.repeats as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.repeats {
            return bad(format!("{} seeds for {} repeats", self.seeds.len(), self.repeats));
        }
        for f in std::iter::once(self.split_fraction).chain(self.compare_fractions.iter().copied()) {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("split fraction {f} outside (0,1)"));
            }
        }
        if let ModelSpec::Llm(s) = &self.model {
            if s.n_examples.is_empty() || s.strategies.is_empty() || s.formats.is_empty() || s.shapes.is_empty() {
                return bad("LLM sweep axes must be non-empty".into());
            }
            if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
                return bad(format!("test fraction {} outside (0,1)", s.test_fraction));
            }
            if self.tasks != TaskSet::Shapes {
                return bad("LLM experiments predict shapes only".into());
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Aggregation and tables

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub n: usize,
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Mean and sample standard deviation. Values are summed in sorted order so
/// the result does not depend on run order.
pub fn aggregate(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n: 0,
        };
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        (sq.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn aggregate_metrics(runs: &[Metrics]) -> AggregateMetrics {
    let col = |f: fn(&Metrics) -> f64| aggregate(&runs.iter().map(f).collect::<Vec<_>>());
    AggregateMetrics {
        accuracy: col(|m| m.accuracy),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub key: Vec<String>,
    /// Positive instances of the row's category in the full dataset.
    pub samples: Option<usize>,
    pub values: Vec<Option<MeanStd>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub notes: Vec<String>,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

pub const STD_NOTE: &str = "std is the sample standard deviation (n-1) over repeats";
pub const AVERAGE_KEY: &str = "Average";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ReportTable {
    pub fn row(&self, key0: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key.first().is_some_and(|k| k == key0))
    }

    pub fn rows_for<'a>(&'a self, key0: &'a str) -> impl Iterator<Item = &'a ReportRow> {
        self.rows.iter().filter(move |r| r.key.first().is_some_and(|k| k == key0))
    }

    pub fn value(&self, row: &ReportRow, column: &str) -> Option<MeanStd> {
        let j = self.value_columns.iter().position(|c| c == column)?;
        row.values[j]
    }

    /// One line per row; each value column becomes `<name>_mean,<name>_std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = self.key_columns.clone();
        header.push("samples".into());
        for c in &self.value_columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        header.push("runs".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = r.key.iter().map(|k| csv_field(k)).collect();
            cells.push(r.samples.map_or(String::new(), |s| s.to_string()));
            let mut runs = 0;
            for v in &r.values {
                match v {
                    Some(v) => {
                        cells.push(format!("{}", v.mean));
                        cells.push(format!("{}", v.std));
                        runs = runs.max(v.n);
                    }
                    None => {
                        cells.push(String::new());
                        cells.push(String::new());
                    }
                }
            }
            cells.push(runs.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned plain-text rendering with `mean ± std` cells.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = self.key_columns.clone();
        header.push("# samples".into());
        header.extend(self.value_columns.iter().cloned());
        let mut grid = vec![header];
        for r in &self.rows {
            let mut line = r.key.clone();
            line.push(r.samples.map_or(String::new(), |s| s.to_string()));
            line.extend(r.values.iter().map(|v| v.map_or("-".into(), |v| v.to_string())));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Mean of per-row means ± mean of per-row stds, per value column.
fn average_row(rows: &[ReportRow], key: Vec<String>, n_values: usize) -> ReportRow {
    let values = (0..n_values)
        .map(|j| {
            let cells: Vec<MeanStd> = rows.iter().filter_map(|r| r.values[j]).collect();
            if cells.is_empty() {
                return None;
            }
            let k = cells.len() as f64;
            Some(MeanStd {
                mean: cells.iter().map(|c| c.mean).sum::<f64>() / k,
                std: cells.iter().map(|c| c.std).sum::<f64>() / k,
                n: cells.iter().map(|c| c.n).max().unwrap_or(0),
            })
        })
        .collect();
    ReportRow {
        key,
        samples: None,
        values,
    }
}

// ---------------------------------------------------------------------------
// Tree experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub category: Category,
    pub seed: u64,
    pub test_fraction: f64,
    pub metrics: Metrics,
    pub best_params: ModelParams,
    pub threshold: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    /// Per-category results at the main split fraction.
    pub table: ReportTable,
    /// Average metrics per test fraction.
    pub split_table: Option<ReportTable>,
    pub cells: Vec<CellResult>,
    /// Categories left out, with the reason.
    pub skipped: Vec<String>,
}

/// Grid search, out-of-fold threshold tuning and refit on all of `train`.
/// The threshold falls back to 0.5 when the out-of-fold scores hold a
/// single class.
pub fn train_category(
    train: &Dataset,
    category: Category,
    grid: &ParamGrid,
    folds: usize,
    seed: u64,
) -> Result<(EnsembleModel, GridSearchResult), HarnessError> {
    let (x, y) = (train.feature_matrix(), train.binary_target(category));
    let search = grid_search_cv(&x, &y, grid, folds, seed)?;
    let oof = cross_val_predict(&x, &y, &search.best, &search.folds)?;
    let threshold = match tune_threshold_scores(&oof, &y) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("{category} seed {seed}: threshold left at 0.5 ({e})");
            0.5
        }
    };
    let mut model = fit_model(&x, &y, &search.best)?;
    model.threshold = threshold;
    model.feature_names = train.feature_names();
    Ok((model, search))
}

fn run_cell(
    data: &Dataset,
    category: Category,
    seed: u64,
    fraction: f64,
    grid: &ParamGrid,
    folds: usize,
) -> Result<CellResult, HarnessError> {
    let (train, test) = split(data, fraction, seed, category)?;
    let (model, search) = train_category(&train, category, grid, folds, seed)?;
    let metrics = evaluate(&model, &test.feature_matrix(), &test.binary_target(category))?;
    Ok(CellResult {
        category,
        seed,
        test_fraction: fraction,
        metrics,
        best_params: search.best,
        threshold: model.threshold,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// The grid a tree spec runs, defaulting by model family.
pub fn model_grid(spec: &ExperimentSpec) -> Result<ParamGrid, HarnessError> {
    match &spec.model {
        ModelSpec::Rf { grid } => {
            let g = grid.clone().unwrap_or_else(ParamGrid::default_forest);
            if !matches!(g, ParamGrid::Forest(_)) {
                return Err(HarnessError::Spec("rf model needs a forest grid".into()));
            }
            Ok(g)
        }
        ModelSpec::Xgb { grid } => {
            let g = grid.clone().unwrap_or_else(ParamGrid::default_boosted);
            if !matches!(g, ParamGrid::Boosted(_)) {
                return Err(HarnessError::Spec("xgb model needs a boosted grid".into()));
            }
            Ok(g)
        }
        ModelSpec::Llm(_) => Err(HarnessError::Spec("not a tree model".into())),
    }
}

fn model_label(spec: &ExperimentSpec) -> &'static str {
    match spec.model {
        ModelSpec::Rf { .. } => "Random forest",
        ModelSpec::Xgb { .. } => "Gradient boosting",
        ModelSpec::Llm(_) => "LLM",
    }
}

const TREE_COLUMNS: [&str; 4] = ["accuracy", "f1", "precision", "recall"];

fn metric_values(a: &AggregateMetrics) -> Vec<Option<MeanStd>> {
    vec![Some(a.accuracy), Some(a.f1), Some(a.precision), Some(a.recall)]
}

/// Runs every (category, seed, fraction) cell in parallel and aggregates.
/// Categories that cannot be split (no positives or no negatives) are
/// skipped with a diagnostic.
pub fn run_tree_experiment(dataset: &Dataset, spec: &ExperimentSpec) -> Result<TreeReport, HarnessError> {
    spec.validate()?;
    let grid = model_grid(spec)?;
    let data = dataset.exclude_features(&spec.exclude_features)?;
    let seeds = spec.seeds();
    let mut fractions = vec![spec.split_fraction];
    for &f in &spec.compare_fractions {
        if !fractions.contains(&f) {
            fractions.push(f);
        }
    }
    let mut categories = Vec::new();
    let mut skipped = Vec::new();
    for c in spec.tasks.categories() {
        match split_indices(&data, spec.split_fraction, 0, c) {
            Ok(_) => categories.push(c),
            Err(e) => {
                log::warn!("skipping {c}: {e}");
                skipped.push(format!("{c}: {e}"));
            }
        }
    }
    let mut jobs: Vec<(Category, u64, f64)> = Vec::new();
    for &f in &fractions {
        for &c in &categories {
            for &s in &seeds {
                jobs.push((c, s, f));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(c, s, f)| run_cell(&data, c, s, f, &grid, spec.folds))
        .collect::<Result<Vec<_>, _>>()?;

    let per_category = |fraction: f64| -> Vec<ReportRow> {
        categories
            .iter()
            .map(|&c| {
                let runs: Vec<Metrics> = cells
                    .iter()
                    .filter(|r| r.category == c && r.test_fraction == fraction)
                    .map(|r| r.metrics)
                    .collect();
                ReportRow {
                    key: vec![c.name().to_string()],
                    samples: Some(data.positive_count(c)),
                    values: metric_values(&aggregate_metrics(&runs)),
                }
            })
            .collect()
    };
    let value_columns: Vec<String> = TREE_COLUMNS.iter().map(|s| s.to_string()).collect();
    let notes = vec![
        STD_NOTE.to_string(),
        format!("{} seeds: {:?}", seeds.len(), seeds),
        "Average row: mean of category means ± mean of category stds".to_string(),
    ];
    let mut rows = per_category(spec.split_fraction);
    let avg = average_row(&rows, vec![AVERAGE_KEY.into()], TREE_COLUMNS.len());
    rows.push(avg);
    let table = ReportTable {
        title: format!(
            "{} - {} - test fraction {}",
            model_label(spec),
            task_label(spec.tasks),
            spec.split_fraction
        ),
        notes: notes.clone(),
        key_columns: vec!["category".into()],
        value_columns: value_columns.clone(),
        rows,
    };
    let split_table = (!spec.compare_fractions.is_empty()).then(|| {
        let mut sorted = fractions.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        ReportTable {
            title: format!("{} - {} - split comparison", model_label(spec), task_label(spec.tasks)),
            notes: notes.clone(),
            key_columns: vec!["test_fraction".into()],
            value_columns: value_columns.clone(),
            rows: sorted
                .iter()
                .map(|&f| average_row(&per_category(f), vec![format!("{f}")], TREE_COLUMNS.len()))
                .collect(),
        }
    });
    Ok(TreeReport {
        table,
        split_table,
        cells,
        skipped,
    })
}

fn task_label(t: TaskSet) -> &'static str {
    match t {
        TaskSet::Shapes => "shapes",
        TaskSet::ShapeSizes => "shape sizes",
        TaskSet::Both => "shapes and shape sizes",
    }
}

// ---------------------------------------------------------------------------
// LLM experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub category: ShapeCategory,
    pub seed: u64,
    pub n_examples: usize,
    pub sampling: Sampling,
    pub format: PromptFormat,
    pub dataset_row: usize,
    pub truth: Vec<ShapeCategory>,
    pub parsed: Vec<ShapeCategory>,
    pub correct: bool,
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmReport {
    /// Binary presence accuracy of the target shape.
    pub table: ReportTable,
    /// Fraction of queries whose parsed shape set equals the true set.
    pub exact_table: ReportTable,
    pub queries: Vec<QueryRecord>,
    pub skipped: Vec<String>,
}

/// Equal numbers of positive and negative test rows for `target`.
pub fn balanced_subset(target: &[bool], candidates: &[usize], cap: Option<usize>, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let pos: Vec<usize> = candidates.iter().copied().filter(|&i| target[i]).collect();
    let neg: Vec<usize> = candidates.iter().copied().filter(|&i| !target[i]).collect();
    let mut k = pos.len().min(neg.len());
    if let Some(c) = cap {
        k = k.min(c);
    }
    let mut out: Vec<usize> = pos.choose_multiple(&mut rng, k).copied().collect();
    out.extend(neg.choose_multiple(&mut rng, k).copied());
    out.sort_unstable();
    out
}

fn config_label(n: usize, s: Sampling, f: PromptFormat) -> String {
    format!("N={n} {} {}", s.name(), f.name())
}

fn llm_tables(
    queries: &[QueryRecord],
    sweep: &LlmSweep,
    seeds: &[u64],
    dataset: &Dataset,
    title: &str,
) -> (ReportTable, ReportTable) {
    let mut configs = Vec::new();
    for &n in &sweep.n_examples {
        for &s in &sweep.strategies {
            for &f in &sweep.formats {
                configs.push((n, s, f));
            }
        }
    }
    let build = |exact: bool| {
        let mut rows = Vec::new();
        let mut by_config: BTreeMap<String, Vec<ReportRow>> = BTreeMap::new();
        for &(n, s, f) in &configs {
            let label = config_label(n, s, f);
            for &shape in ShapeCategory::ALL {
                let per_seed: Vec<f64> = seeds
                    .iter()
                    .filter_map(|&seed| {
                        let qs: Vec<&QueryRecord> = queries
                            .iter()
                            .filter(|q| {
                                q.category == shape
                                    && q.seed == seed
                                    && q.n_examples == n
                                    && q.sampling == s
                                    && q.format == f
                            })
                            .collect();
                        (!qs.is_empty()).then(|| {
                            qs.iter().filter(|q| if exact { q.exact_match } else { q.correct }).count() as f64
                                / qs.len() as f64
                        })
                    })
                    .collect();
                if per_seed.is_empty() {
                    continue;
                }
                let row = ReportRow {
                    key: vec![shape.name().to_string(), label.clone()],
                    samples: Some(dataset.positive_count(Category::Shape(shape))),
                    values: vec![Some(aggregate(&per_seed))],
                };
                by_config.entry(label.clone()).or_default().push(row.clone());
                rows.push(row);
            }
        }
        for &(n, s, f) in &configs {
            let label = config_label(n, s, f);
            if let Some(rs) = by_config.get(&label) {
                rows.push(average_row(rs, vec![AVERAGE_KEY.into(), label], 1));
            }
        }
        ReportTable {
            title: format!(
                "{title} - {}",
                if exact { "exact shape-set match" } else { "target presence accuracy" }
            ),
            notes: vec![
                STD_NOTE.to_string(),
                "balanced test subsets: equal positives and negatives per category".to_string(),
            ],
            key_columns: vec!["category".into(), "configuration".into()],
            value_columns: vec![if exact { "exact_match".into() } else { "accuracy".into() }],
            rows,
        }
    };
    (build(false), build(true))
}

/// Few-shot sweep over `(shape, seed, n_examples, sampling, format)`.
/// Queries run sequentially through `client`. With `only_target_class`,
/// examples share the query's class: they contain the target shape when the
/// query does and lack it otherwise.
pub fn run_llm_experiment(
    dataset: &Dataset,
    spec: &ExperimentSpec,
    client: &LlmClient,
    templates: &TemplateLibrary,
) -> Result<LlmReport, HarnessError> {
    spec.validate()?;
    let ModelSpec::Llm(sweep) = &spec.model else {
        return Err(HarnessError::Spec("not an LLM experiment".into()));
    };
    let seeds = spec.seeds();
    let title = format!("LLM {}", client.config().model_name);
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    let finish = |queries: &[QueryRecord], skipped: Vec<String>| {
        let (table, exact_table) = llm_tables(queries, sweep, &seeds, dataset, &title);
        LlmReport {
            table,
            exact_table,
            queries: queries.to_vec(),
            skipped,
        }
    };
    for (ci, &shape) in ShapeCategory::ALL.iter().enumerate() {
        if !sweep.shapes.contains(&shape) {
            continue;
        }
        let category = Category::Shape(shape);
        let target = dataset.binary_target(category);
        for &seed in &seeds {
            let idx = match split_indices(dataset, sweep.test_fraction, seed, category) {
                Ok(idx) => idx,
                Err(e) => {
                    skipped.push(format!("{shape} seed {seed}: {e}"));
                    continue;
                }
            };
            let unit = derive_seed(seed, ci as u64);
            let subset = balanced_subset(&target, &idx.test, sweep.max_per_class, unit);
            if subset.is_empty() {
                skipped.push(format!("{shape} seed {seed}: no balanced test subset"));
                continue;
            }
            let train = dataset.subset(&idx.train);
            let mut rng = rng_from_seed(derive_seed(unit, 1));
            for &n in &sweep.n_examples {
                for &sampling in &sweep.strategies {
                    for &format in &sweep.formats {
                        for &row in &subset {
                            let positive = target[row];
                            let mut cfg = FewShotConfig::new(n, sampling, format, shape, rng.random());
                            cfg.allow_any_count = true;
                            cfg.target_absent = sampling == Sampling::OnlyTargetClass && !positive;
                            let prompt = build_prompt(&cfg, &train, &dataset.records()[row], templates)?;
                            let response = match client.chat_complete(&prompt) {
                                Ok(r) => r,
                                Err(cause) => {
                                    return Err(HarnessError::Aborted {
                                        cause,
                                        partial: Box::new(finish(&queries, skipped)),
                                    })
                                }
                            };
                            let parsed = parse_answer(&response);
                            let truth: Vec<ShapeCategory> =
                                dataset.labels()[row].shapes().iter().copied().collect();
                            queries.push(QueryRecord {
                                category: shape,
                                seed,
                                n_examples: n,
                                sampling,
                                format,
                                dataset_row: row,
                                correct: parsed.contains(shape) == positive,
                                exact_match: parsed.shapes == truth,
                                truth,
                                parsed: parsed.shapes,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(finish(&queries, skipped))
}

// ---------------------------------------------------------------------------
// Synthetic data

/// A dataset whose labels are threshold rules on single features, with a gap
/// around every threshold so each shape is perfectly separable:
///
/// * Cube: `Polymer, % wt. > 1`
/// * Stick: `Temperature > 50`
/// * Sphere: `Surfactant, % wt. > 1`
/// * Flat: `Solvent, % vol. < 50`
/// * Amorphous: `Synthesis time > 60`
///
/// None of the rule columns is among [`NON_INFORMATIVE_FEATURES`], so the
/// default exclusions keep them. The remaining columns are noise. Sizes of
/// cube, stick and sphere follow `HCO3 ion` (< 100 small, < 200 medium, else
/// large). Rows whose rules fire for no shape are redrawn.
pub fn separable_dataset(n_rows: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let mut records = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    while records.len() < n_rows {
        // uniform draw from [lo, cut - gap] ∪ [cut + gap, hi], rounded to `step`
        let mut gapped = |lo: f64, cut: f64, hi: f64, gap: f64, step: f64| -> f64 {
            let v = if rng.random_bool(0.5) {
                rng.random_range(lo..=cut - gap)
            } else {
                rng.random_range(cut + gap..=hi)
            };
            (v / step).round() * step
        };
        let polymer_wt = gapped(0.0, 1.0, 2.0, 0.1, 0.001);
        let surfactant_wt = gapped(0.0, 1.0, 2.0, 0.1, 0.001);
        let solvent_vol = gapped(0.0, 50.0, 200.0, 10.0, 1.0);
        let temperature = gapped(20.0, 50.0, 90.0, 5.0, 1.0);
        let synthesis_time = gapped(5.0, 60.0, 180.0, 10.0, 1.0);
        let hco3_ion = gapped(0.0, 150.0, 300.0, 0.0, 1.0);
        let r = SynthesisRecord {
            ca_ion: rng.random_range(0..=200) as f64,
            co3_ion: rng.random_range(0..=200) as f64,
            hco3_ion,
            polymer_mwt: *[10.0, 25.0, 70.0].choose(&mut rng).expect("non-empty"),
            polymer_wt,
            surfactant_wt,
            solvent_vol,
            stirring: rng.random_range(0..=10) as f64 * 100.0,
            temperature,
            synthesis_time,
            polymer: *Polymer::ALL.choose(&mut rng).expect("non-empty"),
            surfactant: *Surfactant::ALL.choose(&mut rng).expect("non-empty"),
            solvent: *Solvent::ALL.choose(&mut rng).expect("non-empty"),
        };
        let mut shapes = Vec::new();
        if r.polymer_wt > 1.0 {
            shapes.push(ShapeCategory::Cube);
        }
        if r.temperature > 50.0 {
            shapes.push(ShapeCategory::Stick);
        }
        if r.surfactant_wt > 1.0 {
            shapes.push(ShapeCategory::Sphere);
        }
        if r.solvent_vol < 50.0 {
            shapes.push(ShapeCategory::Flat);
        }
        if r.synthesis_time > 60.0 {
            shapes.push(ShapeCategory::Amorphous);
        }
        if shapes.is_empty() {
            continue;
        }
        let size = if r.hco3_ion < 100.0 {
            0
        } else if r.hco3_ion < 200.0 {
            1
        } else {
            2
        };
        let sizes: Vec<ShapeSizeCategory> = ShapeSizeCategory::ALL
            .iter()
            .copied()
            .filter(|s| shapes.contains(&s.shape()))
            .filter(|s| (*s as usize) % 3 == size)
            .collect();
        labels.push(MorphologyLabel::new(shapes, sizes).expect("sizes follow shapes"));
        records.push(r);
    }
    Dataset::new(records, labels).expect("generated records are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[0.8]);
        assert_eq!((one.mean, one.std), (0.8, 0.0));
        let two = aggregate(&[0.7, 0.9]);
        assert!((two.mean - 0.8).abs() < 1e-12);
        assert!((two.std - 0.1414).abs() < 1e-4);
        assert_eq!(aggregate(&[0.9, 0.7, 0.75]), aggregate(&[0.75, 0.9, 0.7]));
    }

    #[test]
    fn balanced_subset_is_balanced() {
        let target: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let cand: Vec<usize> = (0..30).collect();
        let s = balanced_subset(&target, &cand, None, 1);
        let pos = s.iter().filter(|&&i| target[i]).count();
        assert_eq!(pos, 10);
        assert_eq!(s.len(), 20);
        assert_eq!(balanced_subset(&target, &cand, Some(3), 1).len(), 6);
    }

    #[test]
    fn synthetic_rules_hold() {
        let d = separable_dataset(200, 4);
        assert_eq!(d.len(), 200);
        for (r, l) in d.records().iter().zip(d.labels()) {
            assert_eq!(l.shapes().contains(&ShapeCategory::Cube), r.polymer_wt > 1.0);
            assert_eq!(l.shapes().contains(&ShapeCategory::Flat), r.solvent_vol < 50.0);
        }
        for &s in ShapeCategory::ALL {
            assert!(d.positive_count(Category::Shape(s)) > 20, "{s}");
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(TaskSet::Shapes, ModelSpec::Rf { grid: None });
        assert!(spec.validate().is_ok());
        spec.seeds = vec![1, 2];
        assert!(spec.validate().is_err());
        spec.seeds.clear();
        spec.repeats = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ExperimentSpec = serde_json::from_str(r#"{"tasks":"shapes","model":{"type":"rf"}}"#).unwrap();
        assert_eq!(spec.repeats, 5);
        assert_eq!(spec.split_fraction, 0.33);
        assert_eq!(spec.exclude_features.len(), 7);
        let llm: ExperimentSpec = serde_json::from_str(
            r#"{"tasks":"shapes","model":{"type":"llm","endpoint":"gpt-4","n_examples":[8]}}"#,
        )
        .unwrap();
        let ModelSpec::Llm(s) = llm.model else { panic!() };
        assert_eq!(s.endpoint.resolve().unwrap().requests_per_minute, 500);
    }
}

//! Criterion checks shared by the integration tests and the acceptance
//! runner. Each returns a short summary on success and a description of the
//! first disagreement on failure.

use std::collections::BTreeSet;
use std::path::PathBuf;

use morphoforge::data::Dataset;
use morphoforge::harness::{
    run_llm_experiment, run_tree_experiment, separable_dataset, EndpointSpec, ExperimentSpec, LlmReport, LlmSweep,
    MeanStd, ModelSpec, TaskSet, TreeReport, AVERAGE_KEY,
};
use morphoforge::llm::{Backend, EndpointConfig, LlmClient, ReplayBackend, SimulatedClock, Transcript};
use morphoforge::prompts::{PromptFormat, Sampling};
use morphoforge::trees::{ForestGrid, ParamGrid};
use std::sync::Arc;
use std::time::{Duration, Instant};

use morphoforge::attribution::{shap_values, tree_shap};
use morphoforge::data::{Matrix, Polymer, ShapeCategory, Solvent, Surfactant, SynthesisRecord};
use morphoforge::img_metrics::{pdi, psnr, ssim, GrayImage};
use morphoforge::prompts::{
    answer_line, parse_answer, render_tabular, render_textual, PromptExample, TemplateLibrary, SYSTEM_PREAMBLE,
};
use morphoforge::rng::rng_from_seed;
use morphoforge::stats::{fisher_exact, ks_critical_value, mann_whitney_u, ContingencyTable};
use morphoforge::trees::{
    fit_boosted, fit_boosted_with_trace, fit_forest, fit_tree, BoostParams, ForestParams, MaxFeatures, TreeParams,
};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

pub type Check = Result<String, String>;

/// Exact MWU p against enumeration of every tie-free arrangement with
/// `n + m <= max_total`.
pub fn mwu_enumeration(max_total: usize) -> Check {
    let mut compared = 0usize;
    for total in 2..=max_total {
        for n in 1..total {
            let m = total - n;
            let nm = (n * m) as f64;
            let mut masks = Vec::new();
            let mut mins = Vec::new();
            for mask in 0u32..(1 << total) {
                if mask.count_ones() as usize != n {
                    continue;
                }
                let rank_sum: usize = (0..total).filter(|&i| mask & (1 << i) != 0).map(|i| i + 1).sum();
                let u = rank_sum as f64 - (n * (n + 1)) as f64 / 2.0;
                masks.push(mask);
                mins.push(u.min(nm - u));
            }
            for &mask in &masks {
                // irregular spacing so values are not the ranks themselves
                let value = |i: usize| (i as f64 * 0.7).exp() - 3.0;
                let x: Vec<f64> = (0..total).filter(|&i| mask & (1 << i) != 0).map(value).collect();
                let y: Vec<f64> = (0..total).filter(|&i| mask & (1 << i) == 0).map(value).collect();
                let r = mann_whitney_u(&x, &y, 0.05).map_err(|e| e.to_string())?;
                let u_obs = mwu_statistic(&x, &y);
                if r.statistic != u_obs {
                    return Err(format!("n={n} m={m}: U {} vs {}", r.statistic, u_obs));
                }
                let hits = mins.iter().filter(|&&v| v <= u_obs).count();
                let oracle = hits as f64 / mins.len() as f64;
                let p = r.p_value.ok_or("missing p")?;
                if (p - oracle).abs() > 1e-9 {
                    return Err(format!("n={n} m={m} U={u_obs}: p {p} vs enumeration {oracle}"));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} arrangements agree"))
}

/// All 2×2 tables with `1 <= N <= max_n`.
pub fn all_tables(max_n: u64) -> Vec<(u64, u64, u64, u64)> {
    let mut out = Vec::new();
    for a in 0..=max_n {
        for b in 0..=max_n - a {
            for c in 0..=max_n - a - b {
                for d in 0..=max_n - a - b - c {
                    if a + b + c + d > 0 {
                        out.push((a, b, c, d));
                    }
                }
            }
        }
    }
    out
}

pub fn fisher_points(max_n: u64) -> Check {
    let tables = all_tables(max_n);
    let mut worst: f64 = 0.0;
    for &(a, b, c, d) in &tables {
        let (num, den) = fisher_point_exact(a, b, c, d);
        let exact = num as f64 / den as f64;
        let got = ContingencyTable::new(a, b, c, d).point_probability();
        let err = (got - exact).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!("table ({a},{b},{c},{d}): {got} vs exact {exact}"));
        }
    }
    Ok(format!("{} tables, max abs error {worst:.1e}", tables.len()))
}

pub fn fisher_margins(max_n: u64) -> Check {
    let tables = all_tables(max_n);
    let mut worst: f64 = 0.0;
    for &(a, b, c, d) in &tables {
        let t = ContingencyTable::new(a, b, c, d);
        let s: f64 = t.same_margin_tables().iter().map(|s| s.point_probability()).sum();
        worst = worst.max((s - 1.0).abs());
        if (s - 1.0).abs() > 1e-9 {
            return Err(format!("table ({a},{b},{c},{d}): same-margin sum {s}"));
        }
        let p = fisher_exact(t, 0.05).map_err(|e| e.to_string())?.p_value.ok_or("missing p")?;
        let oracle = fisher_p_exact(a, b, c, d);
        if (p - oracle).abs() > 1e-9 {
            return Err(format!("table ({a},{b},{c},{d}): p {p} vs exact {oracle}"));
        }
    }
    Ok(format!("{} tables, max |sum - 1| {worst:.1e}, p-values agree", tables.len()))
}

pub fn ks_threshold() -> Check {
    let c = ks_critical_value(0.05, 100, 100);
    // c(α)·sqrt((n+m)/(nm)) with c(α) = sqrt(-ln(α/2)/2)
    let direct = ((-(0.025f64).ln()) / 2.0).sqrt() * (200.0f64 / 10000.0).sqrt();
    if (c - 0.19207).abs() <= 1e-4 && (c - direct).abs() < 1e-12 {
        Ok(format!("threshold {c:.6}"))
    } else {
        Err(format!("threshold {c} (direct {direct})"))
    }
}

/// Random instance with ties: integer feature values in a small range and
/// labels from a noisy rule.
pub fn random_instance(seed: u64) -> (Matrix, Vec<bool>) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(10..=200);
    let p = rng.random_range(1..=10);
    let levels = rng.random_range(2..=30);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect())
        .collect();
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y: Vec<bool> = rows
        .iter()
        .map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-2.0..2.0) > 0.0)
        .collect();
    // both classes present
    y[0] = true;
    y[1] = false;
    (Matrix::from_rows(&rows), y)
}

pub fn root_splits(instances: u64) -> Check {
    for seed in 0..instances {
        let (x, y) = random_instance(seed);
        let params = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let tree = fit_tree(&x, &y, &params, seed).map_err(|e| e.to_string())?;
        let best = best_root_impurity(&x, &y);
        let parent = root_gini(&y);
        match (tree.nodes()[0].split, best) {
            (None, None) => {}
            (None, Some(b)) => {
                if parent - b > 1e-9 {
                    return Err(format!("instance {seed}: no split but gain {} available", parent - b));
                }
            }
            (Some(_), None) => return Err(format!("instance {seed}: split on constant data")),
            (Some(s), Some(b)) => {
                let col: Vec<f64> = (0..x.n_rows()).map(|i| x.get(i, s.feature)).collect();
                let below = col.iter().copied().filter(|&v| v < s.threshold).fold(f64::MIN, f64::max);
                let above = col.iter().copied().filter(|&v| v >= s.threshold).fold(f64::MAX, f64::min);
                if s.threshold != (below + above) / 2.0 {
                    return Err(format!("instance {seed}: threshold {} is not a midpoint", s.threshold));
                }
                let (mut nl, mut pl, mut nr, mut pr) = (0.0, 0.0, 0.0, 0.0);
                for (v, &t) in col.iter().zip(&y) {
                    let t = if t { 1.0 } else { 0.0 };
                    if *v < s.threshold {
                        nl += 1.0;
                        pl += t;
                    } else {
                        nr += 1.0;
                        pr += t;
                    }
                }
                let imp = nl - (pl * pl + (nl - pl) * (nl - pl)) / nl + nr - (pr * pr + (nr - pr) * (nr - pr)) / nr;
                if (imp - b).abs() > 1e-9 {
                    return Err(format!("instance {seed}: child impurity {imp} vs exhaustive {b}"));
                }
            }
        }
    }
    Ok(format!("{instances} instances match exhaustive search"))
}

pub fn forest_is_member_mean() -> Check {
    let (x, y) = random_instance(7);
    let params = ForestParams {
        n_estimators: 25,
        seed: 3,
        ..ForestParams::default()
    };
    let model = fit_forest(&x, &y, &params).map_err(|e| e.to_string())?;
    for row in x.rows() {
        let mut sum = 0.0;
        for t in &model.trees {
            sum += t.predict(row);
        }
        let mean = sum / model.trees.len() as f64;
        let p = model.predict_proba(row).map_err(|e| e.to_string())?;
        if p != mean {
            return Err(format!("forest {p} vs member mean {mean}"));
        }
    }
    Ok(format!("{} rows, bitwise equal", x.n_rows()))
}

/// Fixed synthetic set: two informative features with label noise.
pub fn boosting_set() -> (Matrix, Vec<bool>) {
    let mut rng = rng_from_seed(2024);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..300 {
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..10.0)).collect();
        let noisy = rng.random_bool(0.1);
        y.push(((r[0] > 5.0) ^ (r[1] > 3.0)) ^ noisy);
        rows.push(r);
    }
    (Matrix::from_rows(&rows), y)
}

pub fn boosting_loss_monotone() -> Check {
    let (x, y) = boosting_set();
    let params = BoostParams {
        n_estimators: 100,
        learning_rate: 0.1,
        max_depth: 3,
        ..BoostParams::default()
    };
    let (_, trace) = fit_boosted_with_trace(&x, &y, &params).map_err(|e| e.to_string())?;
    for (i, w) in trace.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(format!("loss rose at round {}: {} -> {}", i + 1, w[0], w[1]));
        }
    }
    Ok(format!("log-loss {:.4} -> {:.4}", trace[0], trace[trace.len() - 1]))
}

pub fn shap_local_accuracy() -> Check {
    let (x, y) = random_instance(11);
    let forest = fit_forest(
        &x,
        &y,
        &ForestParams {
            n_estimators: 30,
            seed: 5,
            ..ForestParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let boosted = fit_boosted(
        &x,
        &y,
        &BoostParams {
            n_estimators: 40,
            max_depth: 4,
            colsample_bytree: 0.8,
            seed: 5,
            ..BoostParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(99);
    let mut worst: f64 = 0.0;
    for model in [&forest, &boosted] {
        for _ in 0..100 {
            let row: Vec<f64> = (0..x.n_cols()).map(|_| rng.random_range(-1.0..16.0)).collect();
            let e = shap_values(model, &row).map_err(|e| e.to_string())?;
            let f = model.raw_output(&row).map_err(|e| e.to_string())?;
            let err = (e.output() - f).abs();
            worst = worst.max(err);
            if err >= 1e-9 {
                return Err(format!("{:?}: base + sum = {} vs f(x) = {f}", model.kind(), e.output()));
            }
        }
    }
    Ok(format!("200 instances, max error {worst:.1e}"))
}

pub fn shap_brute_force() -> Check {
    let mut rng = rng_from_seed(17);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=6);
        let tree = random_tree(&mut rng, m, 3);
        let row: Vec<f64> = (0..m).map(|_| rng.random_range(0..6) as f64).collect();
        let e = tree_shap(&tree, &row).map_err(|e| e.to_string())?;
        let oracle = brute_force_shapley(&tree, &row);
        for (j, (a, b)) in e.values.iter().zip(&oracle).enumerate() {
            worst = worst.max((a - b).abs());
            if (a - b).abs() > 1e-9 {
                return Err(format!("feature {j}: TreeSHAP {a} vs brute force {b}"));
            }
        }
        cases += 1;
    }
    // fitted depth-3 trees on real splits
    for seed in 0..20 {
        let (x, y) = random_instance(100 + seed);
        if x.n_cols() > 6 {
            continue;
        }
        let tree = fit_tree(
            &x,
            &y,
            &TreeParams {
                max_depth: Some(3),
                max_features: MaxFeatures::All,
                ..TreeParams::default()
            },
            seed,
        )
        .map_err(|e| e.to_string())?;
        for i in 0..x.n_rows().min(10) {
            let e = tree_shap(&tree, x.row(i)).map_err(|e| e.to_string())?;
            for (a, b) in e.values.iter().zip(brute_force_shapley(&tree, x.row(i))) {
                worst = worst.max((a - b).abs());
                if (a - b).abs() > 1e-9 {
                    return Err(format!("fitted tree {seed}: {a} vs {b}"));
                }
            }
        }
        cases += 1;
    }
    Ok(format!("{cases} trees, max error {worst:.1e}"))
}

pub fn shape_subsets() -> Vec<BTreeSet<ShapeCategory>> {
    (1u32..32)
        .map(|mask| {
            ShapeCategory::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &s)| s)
                .collect()
        })
        .collect()
}

pub fn answer_round_trip() -> Check {
    let mut rng = rng_from_seed(1);
    for set in shape_subsets() {
        // feed the shapes in a scrambled order
        let mut order: Vec<ShapeCategory> = set.iter().copied().collect();
        order.shuffle(&mut rng);
        let line = answer_line(&order);
        let parsed = parse_answer(&line);
        let got: BTreeSet<ShapeCategory> = parsed.shapes.iter().copied().collect();
        if got != set || parsed.fallback || !parsed.unknown.is_empty() {
            return Err(format!("{line:?} parsed as {parsed:?}"));
        }
    }
    Ok("31 subsets".into())
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn worked_textual_record() -> SynthesisRecord {
    SynthesisRecord {
        ca_ion: 57.0,
        co3_ion: 140.0,
        hco3_ion: 200.0,
        polymer_mwt: 25.0,
        polymer_wt: 0.155,
        surfactant_wt: 0.43,
        solvent_vol: 200.0,
        stirring: 1000.0,
        temperature: 68.0,
        synthesis_time: 8.0,
        polymer: Polymer::Pei,
        surfactant: Surfactant::Mtab,
        solvent: Solvent::Hexanol,
    }
}

pub fn worked_tabular_record() -> SynthesisRecord {
    SynthesisRecord {
        ca_ion: 148.0,
        co3_ion: 0.0,
        hco3_ion: 100.0,
        polymer_mwt: 0.0,
        polymer_wt: 0.0,
        surfactant_wt: 0.0,
        solvent_vol: 0.0,
        stirring: 0.0,
        temperature: 31.0,
        synthesis_time: 129.0,
        polymer: Polymer::NoPolymer,
        surfactant: Surfactant::NoSurfactant,
        solvent: Solvent::NoSolvent,
    }
}

fn single_example_prompt(synthesis: String, shapes: &[ShapeCategory]) -> String {
    let example = PromptExample {
        synthesis,
        answer: answer_line(shapes),
    };
    format!("{SYSTEM_PREAMBLE}\n\n{}\n", example.text())
}

pub fn fixture_prompts() -> Check {
    use ShapeCategory::*;
    let lib = TemplateLibrary::builtin();
    let template = lib.get("burettes").ok_or("no burettes template")?;
    let cases = [
        (
            "prompt_textual.txt",
            single_example_prompt(render_textual(&worked_textual_record(), template), &[Cube, Stick]),
        ),
        (
            "prompt_tabular.txt",
            single_example_prompt(render_tabular(&worked_tabular_record()), &[Flat]),
        ),
    ];
    for (name, built) in cases {
        let expected = std::fs::read_to_string(fixture_path(name)).map_err(|e| e.to_string())?;
        if built.as_bytes() != expected.as_bytes() {
            let at = built.bytes().zip(expected.bytes()).take_while(|(a, b)| a == b).count();
            return Err(format!(
                "{name} differs at byte {at}: built {:?} / fixture {:?}",
                &built[at.saturating_sub(20)..(at + 20).min(built.len())],
                &expected[at.saturating_sub(20)..(at + 20).min(expected.len())]
            ));
        }
    }
    Ok("2 fixtures byte-identical".into())
}

pub fn image_identity() -> Check {
    let mut rng = rng_from_seed(9);
    for i in 0..20 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = GrayImage::new(w, h, random_pixels(&mut rng, w * h), 255.0).map_err(|e| e.to_string())?;
        let s = ssim(&img, &img).map_err(|e| e.to_string())?;
        if s != 1.0 {
            return Err(format!("image {i}: ssim(x, x) = {s}"));
        }
    }
    Ok("20 images".into())
}

pub fn psnr_unit_offset() -> Check {
    let mut rng = rng_from_seed(10);
    let (w, h) = (32, 24);
    // one pixel pinned at 255 so the peak is the full 8-bit range
    let mut px: Vec<f64> = (0..w * h).map(|_| rng.random_range(1..=255) as f64).collect();
    px[0] = 255.0;
    let y: Vec<f64> = px.iter().map(|v| v - 1.0).collect();
    let a = GrayImage::new(w, h, px, 255.0).map_err(|e| e.to_string())?;
    let b = GrayImage::new(w, h, y, 255.0).map_err(|e| e.to_string())?;
    let db = psnr(&a, &b).map_err(|e| e.to_string())?.db();
    if (db - 48.13).abs() <= 0.01 {
        Ok(format!("{db:.4} dB"))
    } else {
        Err(format!("{db} dB"))
    }
}

pub fn pdi_values() -> Check {
    // sample std 10, mean 50
    let d = [40.0, 50.0, 60.0];
    let p = pdi(&d).map_err(|e| e.to_string())?;
    if p.value != 0.04 {
        return Err(format!("PdI {} (std {}, mean {})", p.value, p.std_diameter, p.mean_diameter));
    }
    let simple = [40.0, 60.0];
    let simple_std = pdi(&simple).map_err(|e| e.to_string())?;
    // std of {40, 60} is sqrt(200), mean 50: 200 / 2500 = 0.08
    if simple_std.value != 0.08 {
        return Err(format!("PdI of {{40, 60}} is {}", simple_std.value));
    }
    let mut rng = rng_from_seed(12);
    let base: Vec<f64> = (0..50).map(|_| rng.random_range(5.0..200.0)).collect();
    let p0 = pdi(&base).map_err(|e| e.to_string())?.value;
    for k in [0.5, 2.0, 10.0] {
        let scaled: Vec<f64> = base.iter().map(|v| v * k).collect();
        let pk = pdi(&scaled).map_err(|e| e.to_string())?.value;
        if (pk - p0).abs() > 1e-12 * p0.max(1.0) {
            return Err(format!("scale {k}: {pk} vs {p0}"));
        }
    }
    Ok(format!("PdI {}, scale invariant", p.value))
}

/// Small forest lattice used for the timed synthetic benchmark.
pub fn small_forest_grid() -> ParamGrid {
    ParamGrid::Forest(ForestGrid {
        n_estimators: vec![30],
        max_features: vec![MaxFeatures::Sqrt, MaxFeatures::All],
        max_depth: vec![Some(4), None],
        min_samples_leaf: vec![1],
        max_leaf_nodes: vec![None],
        bootstrap: true,
    })
}

/// Full tree harness on 300 separable rows, 5 seeds, every shape.
pub fn synthetic_benchmark(grid: ParamGrid, budget: Duration) -> Check {
    let data = separable_dataset(300, 42);
    let mut spec = ExperimentSpec::new(TaskSet::Shapes, ModelSpec::Rf { grid: Some(grid) });
    spec.compare_fractions.clear();
    let start = Instant::now();
    let report = run_tree_experiment(&data, &spec).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut worst = (String::new(), f64::INFINITY);
    for shape in ShapeCategory::ALL {
        let row = report.table.row(shape.name()).ok_or(format!("no row for {shape}"))?;
        let acc = report.table.value(row, "accuracy").ok_or("no accuracy")?;
        if acc.n != 5 {
            return Err(format!("{shape}: {} runs", acc.n));
        }
        if acc.mean < worst.1 {
            worst = (shape.name().to_string(), acc.mean);
        }
    }
    if report.table.row(AVERAGE_KEY).is_none() {
        return Err("no average row".into());
    }
    if worst.1 < 0.95 {
        return Err(format!("{} mean accuracy {:.4} < 0.95", worst.0, worst.1));
    }
    if elapsed > budget {
        return Err(format!("took {elapsed:.1?}, budget {budget:?}"));
    }
    Ok(format!("lowest category {} {:.4}, {elapsed:.1?}", worst.0, worst.1))
}

pub const SWEEP_DATASET: &str = "llm_sweep_dataset.csv";
pub const SWEEP_SPEC: &str = "llm_sweep_spec.json";
pub const SWEEP_TRANSCRIPT: &str = "llm_sweep_transcript.jsonl";
pub const SWEEP_REPORT: &str = "llm_sweep_report.csv";

/// The recorded sweep: one shape, N ∈ {2, 4, 8}, textual, 5 repeats.
pub fn sweep_spec() -> ExperimentSpec {
    let sweep = LlmSweep {
        endpoint: EndpointSpec::Preset("gpt-4".into()),
        n_examples: vec![2, 4, 8],
        strategies: vec![Sampling::OnlyTargetClass],
        formats: vec![PromptFormat::Textual],
        test_fraction: 0.2,
        max_per_class: Some(4),
        shapes: vec![ShapeCategory::Sphere],
    };
    ExperimentSpec::new(TaskSet::Shapes, ModelSpec::Llm(sweep))
}

pub fn sweep_client(backend: impl Backend + 'static, spec: &ExperimentSpec) -> LlmClient {
    let ModelSpec::Llm(sweep) = &spec.model else { unreachable!() };
    let cfg: EndpointConfig = sweep.endpoint.resolve().unwrap();
    LlmClient::new(cfg, Box::new(backend), Arc::new(SimulatedClock::default())).unwrap()
}

pub fn replay_sweep() -> Result<LlmReport, String> {
    let data = Dataset::load_csv(fixture_path(SWEEP_DATASET)).map_err(|e| e.to_string())?;
    let spec_text = std::fs::read_to_string(fixture_path(SWEEP_SPEC)).map_err(|e| e.to_string())?;
    let spec: ExperimentSpec = serde_json::from_str(&spec_text).map_err(|e| e.to_string())?;
    let transcript = Transcript::load(fixture_path(SWEEP_TRANSCRIPT)).map_err(|e| e.to_string())?;
    let backend = ReplayBackend::new(&transcript).map_err(|e| e.to_string())?;
    let client = sweep_client(backend, &spec);
    run_llm_experiment(&data, &spec, &client, &TemplateLibrary::builtin()).map_err(|e| e.to_string())
}

pub fn replay_determinism() -> Check {
    let first = replay_sweep()?;
    let second = replay_sweep()?;
    if first != second {
        return Err("two replays differ".into());
    }
    let expected = std::fs::read_to_string(fixture_path(SWEEP_REPORT)).map_err(|e| e.to_string())?;
    let got = first.table.to_csv();
    if got != expected {
        return Err(format!("replayed table differs from the recorded one:\n{got}\nvs\n{expected}"));
    }
    for n in [2, 4, 8] {
        let label = format!("N={n} only_target_class textual");
        let row = first
            .table
            .rows
            .iter()
            .find(|r| r.key[0] == "Sphere" && r.key[1] == label)
            .ok_or(format!("missing row {label}"))?;
        let v = row.values[0].ok_or("empty cell")?;
        if v.n != 5 {
            return Err(format!("{label}: {} repeats", v.n));
        }
    }
    Ok(format!("{} queries replayed offline, table identical", first.queries.len()))
}

pub const REFERENCE_DATASET_ENV: &str = "MORPHOFORGE_PAPER_DATASET";

fn average_of(report: &TreeReport, column: &str) -> Result<MeanStd, String> {
    let row = report.table.row(AVERAGE_KEY).ok_or("no average row")?;
    report.table.value(row, column).ok_or(format!("no {column} in average row"))
}

fn within(label: &str, got: f64, target: f64, tol: f64) -> Result<String, String> {
    if (got - target).abs() <= tol {
        Ok(format!("{label} {got:.3} (target {target} ± {tol})"))
    } else {
        Err(format!("{label} {got:.3} outside {target} ± {tol}"))
    }
}

/// Reproduction on the real dataset with the default grids: forest on the
/// shape task and boosting on the shape-size task, 5 seeds at 33%.
pub fn reference_dataset(path: &std::path::Path) -> Check {
    let data = Dataset::load_csv(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rf = ExperimentSpec::new(TaskSet::Shapes, ModelSpec::Rf { grid: None });
    rf.compare_fractions.clear();
    let rf_report = run_tree_experiment(&data, &rf).map_err(|e| e.to_string())?;
    let mut xgb = ExperimentSpec::new(TaskSet::ShapeSizes, ModelSpec::Xgb { grid: None });
    xgb.compare_fractions.clear();
    let xgb_report = run_tree_experiment(&data, &xgb).map_err(|e| e.to_string())?;
    let parts = [
        within("rf shape accuracy", average_of(&rf_report, "accuracy")?.mean, 0.80, 0.07),
        within("rf shape f1", average_of(&rf_report, "f1")?.mean, 0.66, 0.08),
        within("xgb shape-size accuracy", average_of(&xgb_report, "accuracy")?.mean, 0.77, 0.08),
    ];
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for p in parts {
        match p {
            Ok(s) => ok.push(s),
            Err(s) => bad.push(s),
        }
    }
    if bad.is_empty() {
        Ok(ok.join("; "))
    } else {
        Err(bad.join("; "))
    }
}

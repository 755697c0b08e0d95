use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use morphoforge::attribution::{importance_ranking, ranking_csv, shap_matrix};
use morphoforge::data::{
    one_hot, read_unlabeled_csv, split, Category, Dataset, Feature, Matrix, SynthesisRecord,
    NON_INFORMATIVE_FEATURES,
};
use morphoforge::harness::{
    model_grid, run_llm_experiment, run_tree_experiment, train_category, ExperimentSpec, HarnessError, LlmReport,
    ModelSpec,
};
use morphoforge::img_metrics::{pdi as pdi_of, psnr, read_diameters, ssim_with, GrayImage, SsimConstants};
use morphoforge::llm::{EndpointConfig, LlmClient, ReplayBackend, SimulatedClock, Transcript, TranscriptWriter, PRESETS};
use morphoforge::prompts::{build_prompt, parse_answer, FewShotConfig, PromptFormat, Sampling, TemplateLibrary};
use morphoforge::rng::derive_seed;
use morphoforge::stats::screen_features;
use morphoforge::trees::{evaluate, EnsembleModel, ParamGrid};
use serde::Serialize;
use serde_json::json;

use crate::config::{pick, read_json, FileConfig, ModelChoice};
use crate::manifest::{file_digest, now_ms, RunManifest};
use crate::*;

const TRANSCRIPT_FILE: &str = "transcript.jsonl";

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load_csv(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_records(path: &Path) -> Result<Vec<SynthesisRecord>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let records = read_unlabeled_csv(file).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(Failure::data(format!("{}: no data rows", path.display())));
    }
    Ok(records)
}

fn load_model(path: &Path) -> Result<EnsembleModel, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    EnsembleModel::from_json(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn digest(path: &Path) -> Result<String, Failure> {
    file_digest(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    write_file(path, text + "\n")
}

/// Writes to `out` when given, standard output otherwise.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::data(format!("stdout: {e}"))),
    }
}

fn finish(manifest: RunManifest, dir: &Path) -> Result<(), Failure> {
    manifest
        .write(dir)
        .map_err(|e| Failure::data(format!("{}: {e}", dir.display())))
}

/// Feature matrix for `records` in the column order the model was fitted on.
fn model_matrix(model: &EnsembleModel, records: &[SynthesisRecord]) -> Result<Matrix, Failure> {
    let features = model
        .feature_names
        .iter()
        .map(|n| Feature::from_name(n).ok_or_else(|| Failure::data(format!("model feature '{n}' is not a schema column"))))
        .collect::<Result<Vec<_>, _>>()?;
    if features.len() != model.n_features() {
        return Err(Failure::data(format!(
            "model names {} features but its trees use {}",
            features.len(),
            model.n_features()
        )));
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| one_hot(r, &features)).collect();
    Ok(Matrix::from_rows(&rows))
}

pub fn ingest(a: &IngestArgs) -> Result<(), Failure> {
    let data = load_dataset(&a.input)?;
    let mut s = String::new();
    s.push_str(&format!("rows {}\n", data.len()));
    s.push_str(&format!("feature columns {}\n", data.features().len()));
    s.push_str(&format!("shape instances {}\n", data.shape_instance_count()));
    s.push_str(&format!("shape-size instances {}\n", data.shape_size_instance_count()));
    for c in Category::all_shapes().into_iter().chain(Category::all_shape_sizes()) {
        s.push_str(&format!("{} {}\n", c.qualified(), data.positive_count(c)));
    }
    if !a.validate {
        print!("{s}");
    }
    if let Some(out) = &a.out {
        data.save_csv(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn stats(a: &StatsArgs, file: &FileConfig) -> Result<(), Failure> {
    let alpha = pick(a.alpha, file.alpha, 0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::usage(format!("alpha {alpha} outside (0,1)")));
    }
    let data = load_dataset(&a.input)?;
    let report = screen_features(&data, alpha)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| Failure::data(e.to_string()))?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&csv))?;
    if let Some(table) = &a.table {
        write_file(table, report.to_table_text(data.features()))?;
    }
    for (shape, why) in &report.skipped_shapes {
        log::warn!("{shape} skipped: {why}");
    }
    Ok(())
}

fn resolve_grid(flag_model: Option<ModelChoice>, grid_path: Option<&Path>, file: &FileConfig) -> Result<(ModelChoice, ParamGrid), Failure> {
    let grid = match grid_path {
        Some(p) => Some(read_json::<ParamGrid>(p, "grid")?),
        None => file.grid.clone(),
    };
    let family = |g: &ParamGrid| match g {
        ParamGrid::Forest(_) => ModelChoice::Rf,
        ParamGrid::Boosted(_) => ModelChoice::Xgb,
    };
    let model = flag_model.or(file.model).or(grid.as_ref().map(family)).unwrap_or(ModelChoice::Rf);
    let grid = grid.unwrap_or_else(|| match model {
        ModelChoice::Rf => ParamGrid::default_forest(),
        ModelChoice::Xgb => ParamGrid::default_boosted(),
    });
    if family(&grid) != model {
        return Err(Failure::usage(format!("grid is for {:?}, model is {model:?}", family(&grid))));
    }
    Ok((model, grid))
}

pub fn train(a: &TrainArgs, file: &FileConfig) -> Result<(), Failure> {
    let started = now_ms();
    let category: Category = a.task.parse().map_err(|e: morphoforge::data::DataError| Failure::usage(e.to_string()))?;
    let (model_choice, grid) = resolve_grid(a.model, a.grid.as_deref(), file)?;
    let folds = pick(a.folds, file.folds, 5);
    let seed = pick(a.seed, file.seed, 0);
    let test_fraction = a.test_fraction.or(file.test_fraction);
    let keep_all = a.keep_all_features || file.keep_all_features.unwrap_or(false);
    if folds < 2 {
        return Err(Failure::usage("--folds must be at least 2"));
    }
    if let Some(f) = test_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(Failure::usage(format!("test fraction {f} outside (0,1)")));
        }
    }

    let mut data = load_dataset(&a.input)?;
    if !keep_all {
        data = data.exclude_features(&NON_INFORMATIVE_FEATURES)?;
    }
    let (train, test) = match test_fraction {
        Some(f) => {
            let (tr, te) = split(&data, f, seed, category)?;
            (tr, Some(te))
        }
        None => (data, None),
    };
    let (model, search) = train_category(&train, category, &grid, folds, seed)?;
    let metrics = match &test {
        Some(te) => Some(evaluate(&model, &te.feature_matrix(), &te.binary_target(category))?),
        None => None,
    };

    create_dir(&a.out)?;
    write_file(&a.out.join("model.json"), model.to_json().map_err(|e| Failure::data(e.to_string()))? + "\n")?;
    write_json(&a.out.join("search.json"), &json!({ "grid": grid, "search": search }))?;
    if let Some(m) = &metrics {
        write_json(&a.out.join("metrics.json"), &json!({ "task": category.qualified(), "metrics": m, "n_test": test.as_ref().map(|t| t.len()) }))?;
    }
    println!("task {}", category.qualified());
    println!("best {}", search.best);
    println!("threshold {}", model.threshold);
    if let Some(m) = &metrics {
        println!("accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}", m.accuracy, m.precision, m.recall, m.f1);
    }

    let config = json!({
        "command": "train",
        "task": category.qualified(),
        "model": model_choice,
        "grid": grid,
        "folds": folds,
        "seed": seed,
        "test_fraction": test_fraction,
        "keep_all_features": keep_all,
    });
    let mut manifest = RunManifest::new(config, vec![seed], started);
    manifest.dataset_digest = Some(digest(&a.input)?);
    if let Some(g) = &a.grid {
        manifest.input_digests.insert("grid".into(), digest(g)?);
    }
    finish(manifest, &a.out)
}

pub fn predict_tree(a: &PredictTreeArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let records = load_records(&a.input)?;
    let x = model_matrix(&model, &records)?;
    let mut out = String::from("row,probability,predicted\n");
    for (i, row) in x.rows().enumerate() {
        let (p, label) = model.predict(row)?;
        out.push_str(&format!("{i},{p},{}\n", u8::from(label)));
    }
    emit(a.out.as_deref(), &out)
}

fn endpoint(spec: &str) -> Result<EndpointConfig, Failure> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") {
        return read_json(path, "endpoint");
    }
    EndpointConfig::preset(spec)
        .ok_or_else(|| Failure::usage(format!("unknown endpoint '{spec}'; presets: {}", PRESETS.join(", "))))
}

fn templates(dir: Option<&Path>) -> Result<TemplateLibrary, Failure> {
    match dir {
        Some(d) => TemplateLibrary::load_dir(d).map_err(|e| Failure::usage(e.to_string())),
        None => Ok(TemplateLibrary::builtin()),
    }
}

/// Replays `replay` on a simulated clock, or goes live. Live clients fail
/// here when the endpoint's key variable is unset.
fn llm_client(cfg: EndpointConfig, replay: Option<&Path>) -> Result<LlmClient, Failure> {
    match replay {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::usage(format!("replay transcript {} not found", path.display())));
            }
            let t = Transcript::load(path).map_err(|e| Failure::data(e.to_string()))?;
            let backend = ReplayBackend::new(&t).map_err(|e| Failure::data(e.to_string()))?;
            Ok(LlmClient::new(cfg, Box::new(backend), Arc::new(SimulatedClock::default()))?)
        }
        None => Ok(LlmClient::http(cfg)?),
    }
}

fn recording(client: LlmClient, path: &Path) -> Result<LlmClient, Failure> {
    let writer = TranscriptWriter::append_to(path).map_err(|e| Failure::data(e.to_string()))?;
    Ok(client.with_transcript(Arc::new(writer)))
}

pub fn predict_llm(a: &PredictLlmArgs, file: &FileConfig) -> Result<(), Failure> {
    let sampling = pick(a.sampling, file.sampling, Sampling::AtLeastOneTarget);
    if sampling == Sampling::OnlyTargetClass {
        return Err(Failure::usage(
            "only_target_class picks examples by the query's true label; it is available in `bench llm` only",
        ));
    }
    let target = match a.target.parse::<Category>() {
        Ok(Category::Shape(s)) => s,
        _ => return Err(Failure::usage(format!("'{}' is not a shape", a.target))),
    };
    let n_examples = pick(a.n_examples, file.n_examples, 4);
    let format = pick(a.format, file.format, PromptFormat::Textual);
    let seed = pick(a.seed, file.seed, 0);
    let endpoint_id = a.endpoint.clone().or(file.endpoint.clone()).unwrap_or_else(|| "gpt-4".into());
    let library = templates(a.templates.as_deref().or(file.templates.as_deref()))?;
    let cfg = endpoint(&endpoint_id)?;

    let train = load_dataset(&a.train)?;
    let queries = load_records(&a.query)?;
    let mut client = llm_client(cfg, a.replay.as_deref())?;
    if let Some(rec) = &a.record {
        client = recording(client, rec)?;
    }

    let mut out = String::from("row,target,present,shapes,fallback\n");
    for (i, query) in queries.iter().enumerate() {
        let fs = FewShotConfig::new(n_examples, sampling, format, target, derive_seed(seed, i as u64));
        let prompt = build_prompt(&fs, &train, query, &library)?;
        let reply = client.chat_complete(&prompt)?;
        let parsed = parse_answer(&reply);
        let names: Vec<&str> = parsed.shapes.iter().map(|s| s.name()).collect();
        out.push_str(&format!(
            "{i},{},{},\"{}\",{}\n",
            target.name(),
            u8::from(parsed.contains(target)),
            names.join(", "),
            u8::from(parsed.fallback)
        ));
    }
    emit(a.out.as_deref(), &out)
}

#[derive(Serialize)]
struct RowExplanation {
    row: usize,
    base_value: f64,
    values: Vec<f64>,
    output: f64,
}

pub fn importance(a: &ImportanceArgs, file: &FileConfig) -> Result<(), Failure> {
    let started = now_ms();
    let top = pick(a.top, file.top, 10);
    let model = load_model(&a.model)?;
    let records = load_records(&a.data)?;
    let x = model_matrix(&model, &records)?;
    let explanations = shap_matrix(&model, &x)?;
    let ranking = importance_ranking(&explanations, &model.feature_names);
    let csv = ranking_csv(&ranking);
    let shown: String = csv.lines().take(top + 1).map(|l| format!("{l}\n")).collect();
    print!("{shown}");

    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("importance.csv"), &csv)?;
        let rows: Vec<RowExplanation> = explanations
            .iter()
            .enumerate()
            .map(|(row, e)| RowExplanation {
                row,
                base_value: e.base_value,
                values: e.values.clone(),
                output: e.output(),
            })
            .collect();
        write_json(
            &dir.join("explanations.json"),
            &json!({ "feature_names": model.feature_names, "rows": rows }),
        )?;
        let config = json!({ "command": "importance", "top": top });
        let mut manifest = RunManifest::new(config, Vec::new(), started);
        manifest.dataset_digest = Some(digest(&a.data)?);
        manifest.input_digests.insert("model".into(), digest(&a.model)?);
        finish(manifest, dir)?;
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let spec: ExperimentSpec = read_json(path, "spec")?;
    spec.validate()?;
    Ok(spec)
}

fn bench_manifest(spec: &ExperimentSpec, command: &str, started: u128) -> RunManifest {
    let config = json!({ "command": command, "spec": spec });
    RunManifest::new(config, spec.seeds(), started)
}

pub fn bench_trees(a: &BenchTreesArgs) -> Result<(), Failure> {
    let started = now_ms();
    let mut spec = load_spec(&a.spec)?;
    // embed the grid actually run, defaults included
    let grid = model_grid(&spec)?;
    match &mut spec.model {
        ModelSpec::Rf { grid: g } | ModelSpec::Xgb { grid: g } => *g = Some(grid),
        ModelSpec::Llm(_) => return Err(Failure::usage("spec has an llm model; use `bench llm`")),
    }
    let data = load_dataset(&a.input)?;
    let report = run_tree_experiment(&data, &spec)?;
    for s in &report.skipped {
        log::warn!("skipped: {s}");
    }

    create_dir(&a.out)?;
    write_file(&a.out.join("report.csv"), report.table.to_csv())?;
    write_file(&a.out.join("report.txt"), report.table.to_text())?;
    if let Some(t) = &report.split_table {
        write_file(&a.out.join("split_report.csv"), t.to_csv())?;
        write_file(&a.out.join("split_report.txt"), t.to_text())?;
    }
    write_json(&a.out.join("cells.json"), &json!({ "cells": report.cells, "skipped": report.skipped }))?;
    print!("{}", report.table.to_text());

    let mut manifest = bench_manifest(&spec, "bench trees", started);
    manifest.dataset_digest = Some(digest(&a.input)?);
    manifest.input_digests.insert("spec".into(), digest(&a.spec)?);
    finish(manifest, &a.out)
}

fn write_llm_report(dir: &Path, report: &LlmReport) -> Result<(), Failure> {
    write_file(&dir.join("report.csv"), report.table.to_csv())?;
    write_file(&dir.join("report.txt"), report.table.to_text())?;
    write_file(&dir.join("exact_report.csv"), report.exact_table.to_csv())?;
    write_file(&dir.join("exact_report.txt"), report.exact_table.to_text())?;
    write_json(&dir.join("queries.json"), &json!({ "queries": report.queries, "skipped": report.skipped }))
}

pub fn bench_llm(a: &BenchLlmArgs, file: &FileConfig) -> Result<(), Failure> {
    let started = now_ms();
    let spec = load_spec(&a.spec)?;
    let ModelSpec::Llm(sweep) = &spec.model else {
        return Err(Failure::usage("spec has a tree model; use `bench trees`"));
    };
    let cfg = sweep.endpoint.resolve()?;
    let library = templates(a.templates.as_deref().or(file.templates.as_deref()))?;
    let data = load_dataset(&a.input)?;
    let mut client = llm_client(cfg, a.replay.as_deref())?;
    create_dir(&a.out)?;
    if a.replay.is_none() {
        let path = a.out.join(TRANSCRIPT_FILE);
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        }
        client = recording(client, &path)?;
    }

    let mut manifest = bench_manifest(&spec, "bench llm", started);
    manifest.dataset_digest = Some(digest(&a.input)?);
    manifest.input_digests.insert("spec".into(), digest(&a.spec)?);
    if let Some(r) = &a.replay {
        manifest.input_digests.insert("replay".into(), digest(r)?);
    }

    match run_llm_experiment(&data, &spec, &client, &library) {
        Ok(report) => {
            for s in &report.skipped {
                log::warn!("skipped: {s}");
            }
            write_llm_report(&a.out, &report)?;
            print!("{}", report.table.to_text());
            finish(manifest, &a.out)
        }
        Err(HarnessError::Aborted { cause, partial }) => {
            write_llm_report(&a.out, &partial)?;
            finish(manifest, &a.out)?;
            Err(Failure {
                code: EXIT_EXTERNAL,
                message: format!("aborted after {} queries, partial report written: {cause}", partial.queries.len()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn imgmetric(a: &ImgmetricArgs, file: &FileConfig) -> Result<(), Failure> {
    let max_value = pick(a.max_value, file.max_value, 255.0);
    let x = GrayImage::load(&a.a, max_value)?;
    let y = GrayImage::load(&a.b, max_value)?;
    match a.metric.as_str() {
        "ssim" => {
            let d = SsimConstants::default();
            let k = SsimConstants {
                k1: pick(a.k1, file.k1, d.k1),
                k2: pick(a.k2, file.k2, d.k2),
            };
            println!("{}", ssim_with(&x, &y, k)?);
        }
        _ => println!("{}", psnr(&x, &y)?),
    }
    Ok(())
}

pub fn pdi(a: &PdiArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.diameters).map_err(|e| Failure::data(format!("{}: {e}", a.diameters.display())))?;
    let p = pdi_of(&read_diameters(&text)?)?;
    let out = serde_json::to_string_pretty(&p).map_err(|e| Failure::data(e.to_string()))?;
    println!("{out}");
    Ok(())
}


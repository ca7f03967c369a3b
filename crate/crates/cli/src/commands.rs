use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use mmixer::data::container::{self, Dataset, Manifest};
use mmixer::data::generate;
use mmixer::experiments::{self, GridRow};
use mmixer::model::checkpoint;
use mmixer::train::{self, check_dataset, dataset_shape, evaluate, grad_check, train_aux_heads, GradCheckSpec};
use mmixer::{AsoKind, CellKind, Metrics, MixerModel, Scalar, TaskSpec, TrainConfig};

use crate::manifest::{dataset_hash, DatasetRef, RunManifest};
use crate::{AblateArgs, EvalArgs, Failure, GenDataArgs, GradcheckArgs, Precision, ReportArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn to_json<S: Serialize>(value: &S) -> serde_json::Value {
    serde_json::to_value(value).expect("plain data serializes")
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct Data {
    train: Dataset,
    test: Dataset,
    reference: DatasetRef,
}

impl Data {
    fn num_classes(&self) -> usize {
        self.train.manifest.num_classes()
    }
}

fn load_data(dir: &Path) -> Result<Data, Failure> {
    let read = |name: &str| {
        let path = dir.join(name);
        container::read_container(&path).with_context(|| format!("loading dataset {}", path.display()))
    };
    let train = read("train.mmix")?;
    let test = read("test.mmix")?;
    if train.manifest.num_classes() != test.manifest.num_classes() {
        return Err(Failure::Run(anyhow!(
            "train and test splits disagree on the class count ({} vs {})",
            train.manifest.num_classes(),
            test.manifest.num_classes()
        )));
    }
    let reference = DatasetRef {
        dir: dir.to_path_buf(),
        sha256: dataset_hash(dir)?,
    };
    Ok(Data { train, test, reference })
}

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    let mut spec: TaskSpec = match &a.config {
        Some(path) => {
            let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TaskSpec::default(),
    };
    if let Some(v) = a.m {
        spec.m = v;
    }
    if let Some(v) = a.modalities {
        spec.n_modalities = v;
    }
    if let Some(v) = a.t {
        spec.seq_len = v;
    }
    if let Some(v) = a.df {
        spec.d_f = v;
    }
    if let Some(v) = a.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.mode {
        spec.temporal_mode = v;
    }
    if let Some(v) = a.train_per_class {
        spec.train_per_class = v;
    }
    if let Some(v) = a.test_per_class {
        spec.test_per_class = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(usage)?;

    let mut run = RunManifest::start("gen-data", "f32", spec.seed);
    let (train_set, test_set) = generate(&spec)?;
    for (name, samples) in [("train", &train_set), ("test", &test_set)] {
        let manifest = Manifest::for_samples(samples, spec.modality_names(), spec.class_names(), Some(spec.clone()));
        let path = a.out.join(format!("{name}.mmix"));
        container::write_container(samples, &manifest, &path)?;
        run.outputs.push(path.clone());
        run.outputs.push(container::manifest_path(&path));
    }
    run.config = to_json(&spec);
    run.dataset = Some(DatasetRef {
        dir: a.out.clone(),
        sha256: dataset_hash(&a.out)?,
    });

    println!(
        "K = {} classes ({} modalities x m = {}), T = {}, d_f = {}, {} mode, noise {}",
        spec.num_classes(),
        spec.n_modalities,
        spec.m,
        spec.seq_len,
        spec.d_f,
        spec.temporal_mode,
        spec.noise_sigma
    );
    println!(
        "train {} ({} per class), test {} ({} per class)",
        train_set.len(),
        spec.train_per_class,
        test_set.len(),
        spec.test_per_class
    );
    println!("single-modality Bayes bound {:.4}", spec.single_modality_bound());
    run.write(&a.out)?;
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!("epoch  train_loss  train_acc  test_loss  test_acc");
    println!("{:>5}  {:>10.4}", 0, m.initial_train_loss);
    for e in &m.epochs {
        println!(
            "{:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {:>8.4}",
            e.epoch, e.train_loss, e.train_acc, e.test_loss, e.test_acc
        );
    }
    println!("selected epoch {} with test accuracy {:.4}", m.best_epoch, m.best_test_acc);
    if let Some(aux) = &m.aux {
        for (i, (tr, te)) in aux.train_acc.iter().zip(&aux.test_acc).enumerate() {
            println!("probe modality {}: train {tr:.4}, test {te:.4}", i + 1);
        }
    }
}

fn train_as<T: Scalar>(a: &TrainArgs, config: &TrainConfig, data: &Data) -> Result<Metrics, Failure> {
    let k = data.num_classes();
    let (mut model, mut metrics) = train::train::<T>(config, &data.train.samples, &data.test.samples, k)?;
    if a.aux {
        metrics.aux = Some(train_aux_heads(&mut model, &data.train.samples, &data.test.samples, config)?);
        if let Some(path) = &config.checkpoint_path {
            checkpoint::save(&model, path)?;
        }
        if let Some(path) = &config.metrics_path {
            metrics.write(path)?;
        }
    }
    Ok(metrics)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let precision = Precision::from_env()?;
    let mut config = a.model.resolve()?;
    let data = load_data(&a.data)?;
    config.checkpoint_path = Some(a.out.join("model.mmxr"));
    config.metrics_path = Some(a.out.join("metrics.json"));
    let mut run = RunManifest::start("train", precision.as_str(), config.seed);
    run.config = to_json(&config);
    run.dataset = Some(data.reference.clone());

    let metrics = match precision {
        Precision::F32 => train_as::<f32>(a, &config, &data)?,
        Precision::F64 => train_as::<f64>(a, &config, &data)?,
    };
    print_metrics(&metrics);

    let json = a.out.join("metrics.json");
    let (epochs_csv, class_csv, aux_csv) = Metrics::csv_paths(&json);
    run.outputs = vec![a.out.join("model.mmxr"), json, epochs_csv, class_csv];
    if a.aux {
        run.outputs.push(aux_csv);
    }
    run.write(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: String,
    checkpoint: Option<PathBuf>,
    cell_kind: CellKind,
    aso_kind: AsoKind,
    samples: usize,
    accuracy: f64,
    loss: f64,
    chance: f64,
    per_class: Vec<train::ClassAccuracy>,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    label: usize,
    predicted: usize,
}

fn eval_as<T: Scalar>(a: &EvalArgs, config: &TrainConfig, data: &Data, run: &mut RunManifest) -> Outcome {
    let split = if a.split == "train" { &data.train } else { &data.test };
    let samples = &split.samples;
    let k = data.num_classes();
    let model = match &a.checkpoint {
        Some(path) => checkpoint::load::<T>(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?,
        None => {
            let (n, d_f) = dataset_shape(samples)?;
            MixerModel::<T>::new(config.dims(n, d_f, k), config.cell_kind, config.aso_kind, config.seed)?
        }
    };
    check_dataset(samples, &model.dims, &a.split)?;
    let ev = evaluate(&model, samples)?;
    let report = EvalReport {
        split: a.split.clone(),
        checkpoint: a.checkpoint.clone(),
        cell_kind: model.cell_kind,
        aso_kind: model.aso_kind,
        samples: samples.len(),
        accuracy: ev.accuracy,
        loss: ev.loss,
        chance: 1.0 / k as f64,
        per_class: ev.per_class.clone(),
    };
    println!(
        "{} {} on {} ({} samples): accuracy {:.4}, loss {:.4}, chance {:.4}",
        report.cell_kind, report.aso_kind, report.split, report.samples, report.accuracy, report.loss, report.chance
    );
    if let Some(out) = &a.out {
        let json = out.join("eval.json");
        write_json(&json, &report)?;
        let rows: Vec<PredictionRow> = samples
            .iter()
            .zip(&ev.predictions)
            .map(|(s, &p)| PredictionRow {
                id: &s.id,
                label: s.label,
                predicted: p,
            })
            .collect();
        let csv = out.join("predictions.csv");
        write_csv(&csv, &rows)?;
        run.outputs = vec![json, csv];
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let precision = Precision::from_env()?;
    let config = a.model.resolve()?;
    let data = load_data(&a.data)?;
    let mut run = RunManifest::start("eval", precision.as_str(), config.seed);
    run.config = to_json(&config);
    run.dataset = Some(data.reference.clone());
    match precision {
        Precision::F32 => eval_as::<f32>(a, &config, &data, &mut run)?,
        Precision::F64 => eval_as::<f64>(a, &config, &data, &mut run)?,
    }
    if let Some(out) = &a.out {
        run.write(out)?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if !(a.tol.is_finite() && a.tol > 0.0) {
        return Err(usage(format!("--tol must be positive, got {}", a.tol)));
    }
    let cells = a.cell.map_or(CellKind::ALL.to_vec(), |c| vec![c]);
    let asos = a.aso.map_or(AsoKind::ALL.to_vec(), |k| vec![k]);
    let mut reports = Vec::new();
    for &cell in &cells {
        for &aso in &asos {
            let spec = GradCheckSpec {
                cell_kind: cell,
                aso_kind: aso,
                seed: a.seed,
                ..GradCheckSpec::default()
            };
            let r = grad_check(&spec, a.tol)?;
            println!(
                "{:<11} {:<5} worst {:.3e} at {:<22} {}",
                cell.to_string(),
                aso.to_string(),
                r.worst_error,
                r.worst_block,
                if r.passed { "ok" } else { "FAILED" }
            );
            reports.push(r);
        }
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if let Some(out) = &a.out {
        let json = out.join("gradcheck.json");
        write_json(&json, &reports)?;
        let mut run = RunManifest::start("gradcheck", "f64", a.seed);
        run.config = serde_json::json!({ "tol": a.tol, "cells": cells, "asos": asos, "spec": GradCheckSpec::default() });
        run.outputs = vec![json];
        run.write(out)?;
    }
    if failed > 0 {
        return Err(Failure::Run(anyhow!(
            "{failed} of {} networks exceed relative error {:e}",
            reports.len(),
            a.tol
        )));
    }
    println!("all {} networks within {:e}", reports.len(), a.tol);
    Ok(())
}

fn print_table(rows: &[GridRow]) {
    println!("{:<20} {:<11} {:<5} {:>8} {:>8}  per-seed", "row", "cell", "aso", "mean", "std");
    for r in rows {
        let seeds: Vec<String> = r.test_acc.iter().map(|a| format!("{a:.4}")).collect();
        println!(
            "{:<20} {:<11} {:<5} {:>8.4} {:>8.4}  {}",
            r.label,
            r.cell_kind.to_string(),
            r.aso_kind.to_string(),
            r.mean,
            r.std,
            seeds.join(" ")
        );
        if let Some(aux) = &r.aux_test_acc {
            let n = aux.first().map_or(0, Vec::len);
            for i in 0..n {
                let accs: Vec<f64> = aux.iter().map(|s| s[i]).collect();
                let (m, s) = experiments::mean_std(&accs);
                println!("{:<20} probe modality {} test {m:.4} ± {s:.4}", "", i + 1);
            }
        }
    }
}

pub fn ablate(a: &AblateArgs) -> Outcome {
    let precision = Precision::from_env()?;
    let config = a.model.resolve()?;
    let seeds = if a.seeds.is_empty() { vec![config.seed] } else { a.seeds.clone() };
    let data = load_data(&a.data)?;
    let (tr, te, k) = (&data.train.samples, &data.test.samples, data.num_classes());
    let rows = match precision {
        Precision::F32 => experiments::run_grid::<f32>(a.grid, &config, &seeds, tr, te, k)?,
        Precision::F64 => experiments::run_grid::<f64>(a.grid, &config, &seeds, tr, te, k)?,
    };
    print_table(&rows);
    let json = a.out.join(format!("ablate_{}.json", a.grid));
    let csv = a.out.join(format!("ablate_{}.csv", a.grid));
    experiments::write_table(&rows, &json, &csv)?;

    let mut run = RunManifest::start("ablate", precision.as_str(), seeds[0]);
    run.config = serde_json::json!({ "grid": a.grid, "seeds": seeds, "base": config });
    run.dataset = Some(data.reference);
    run.outputs = vec![json, csv];
    run.write(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow<'a> {
    run: &'a str,
    cell: CellKind,
    aso: AsoKind,
    epoch: usize,
    train_loss: f64,
    train_acc: Option<f64>,
    test_loss: Option<f64>,
    test_acc: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    run: &'a str,
    cell: CellKind,
    aso: AsoKind,
    precision: &'a str,
    epochs: usize,
    initial_train_loss: f64,
    best_epoch: usize,
    best_test_acc: f64,
    final_train_acc: Option<f64>,
    final_test_acc: Option<f64>,
    probe_test_acc: String,
}

pub fn report(a: &ReportArgs) -> Outcome {
    let mut runs = Vec::new();
    for p in &a.metrics {
        let path = if p.is_dir() { p.join("metrics.json") } else { p.clone() };
        let m = Metrics::read(&path).with_context(|| format!("reading metrics {}", path.display()))?;
        let name = path
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        runs.push((name, m));
    }

    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for (name, m) in &runs {
        curves.push(CurveRow {
            run: name,
            cell: m.cell_kind,
            aso: m.aso_kind,
            epoch: 0,
            train_loss: m.initial_train_loss,
            train_acc: None,
            test_loss: None,
            test_acc: None,
        });
        for e in &m.epochs {
            curves.push(CurveRow {
                run: name,
                cell: m.cell_kind,
                aso: m.aso_kind,
                epoch: e.epoch,
                train_loss: e.train_loss,
                train_acc: Some(e.train_acc),
                test_loss: Some(e.test_loss),
                test_acc: Some(e.test_acc),
            });
        }
        let last = m.final_epoch();
        summary.push(SummaryRow {
            run: name,
            cell: m.cell_kind,
            aso: m.aso_kind,
            precision: &m.precision,
            epochs: m.epochs.len(),
            initial_train_loss: m.initial_train_loss,
            best_epoch: m.best_epoch,
            best_test_acc: m.best_test_acc,
            final_train_acc: last.map(|e| e.train_acc),
            final_test_acc: last.map(|e| e.test_acc),
            probe_test_acc: m
                .aux
                .as_ref()
                .map(|x| x.test_acc.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
        });
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let curves_csv = a.out.join("curves.csv");
    let summary_csv = a.out.join("summary.csv");
    write_csv(&curves_csv, &curves)?;
    write_csv(&summary_csv, &summary)?;
    println!("{} runs, {} curve rows -> {}", runs.len(), curves.len(), a.out.display());

    let mut run = RunManifest::start("report", "f32", 0);
    run.config = serde_json::json!({ "metrics": a.metrics });
    run.outputs = vec![curves_csv, summary_csv];
    run.write(&a.out)?;
    Ok(())
}

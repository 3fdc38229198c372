//! Subcommand implementations. Each computes its results first and then
//! writes every output file from the calling thread.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use besvm::analysis::{pearson_r, scaling_bench, scaling_slope};
use besvm::embedding::{embed_dataset_with, BasisSet, EmbeddingDocument, NormalizerSource};
use besvm::features::Normalizer;
use besvm::pipeline::{
    fit, fit_feature_normalizers, normalize_exemplar, select_basis_ids, FittedModel, Method,
    ModelBody, PipelineFolds,
};
use besvm::solver::cv::cross_validate;
use besvm::{embedding, Execution};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{BasisKind, ExperimentConfig, ResolvedMeasures};
use crate::data::{self, balanced_prefix, Samples};
use crate::error::{CliError, Result};
use crate::report::{
    output_path, read_labeled_columns, read_text, write_csv, write_records, write_text, BasisRow,
    BenchRow, CorrelationRow, MetricRow, SpectrumRow, TimingRow,
};

pub const MODEL_FILE_VERSION: u32 = 1;

/// A trained model with the experiment that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub experiment: ExperimentConfig,
    pub model: FittedModel,
}

/// A fitted embedding with the feature normalization applied before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub feature_normalizers: Vec<Normalizer>,
    pub embedding: EmbeddingDocument,
}

/// Wall times per phase; written apart from the deterministic reports.
#[derive(Debug, Default)]
pub struct Timings {
    rows: Vec<TimingRow>,
}

impl Timings {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.rows.push(TimingRow {
            phase: phase.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

/// Training and optional test samples with their measures.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub measures: ResolvedMeasures,
    pub train: Samples,
    pub test: Option<Samples>,
}

pub fn prepare(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Prepared> {
    let measures = cfg.resolve_measures()?;
    let raw = timings.time("load", || data::load(&cfg.dataset, cfg.seed))?;
    let (train, test) = timings.time("features", || {
        let train = raw.train.to_samples(&measures.cells)?;
        let test = raw
            .test
            .as_ref()
            .map(|t| t.to_samples(&measures.cells))
            .transpose()?;
        Ok((train, test))
    })?;
    info!(
        "{} training samples, {} test samples",
        train.len(),
        test.as_ref().map_or(0, Samples::len)
    );
    Ok(Prepared {
        measures,
        train,
        test,
    })
}

fn accuracy_rows(
    split: &str,
    classes: &[usize],
    predicted: &[usize],
    labels: &[usize],
) -> Vec<MetricRow> {
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut rows = vec![MetricRow::new(
        split,
        "accuracy",
        "all",
        correct as f64 / labels.len().max(1) as f64,
    )];
    for &c in classes {
        let (hit, total) = predicted
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .fold((0usize, 0usize), |(h, t), (p, l)| {
                (h + usize::from(p == l), t + 1)
            });
        if total > 0 {
            rows.push(MetricRow::new(
                split,
                "accuracy",
                c,
                hit as f64 / total as f64,
            ));
        }
    }
    rows
}

/// Distinct training samples the decision function depends on.
fn supporting_exemplars(model: &FittedModel) -> Option<usize> {
    match &model.body {
        ModelBody::Linear { .. } => None,
        ModelBody::Embedded { basis, .. } => Some(basis.len()),
        ModelBody::Kernel { model, .. } => {
            let support: BTreeSet<usize> = model
                .machines
                .iter()
                .flat_map(|m| m.support.iter().copied())
                .collect();
            Some(support.len())
        }
    }
}

fn model_rows(model: &FittedModel, train: usize, test: usize) -> Vec<MetricRow> {
    let mut rows = vec![
        MetricRow::new("model", "classes", "all", model.classes().len() as f64),
        MetricRow::new(
            "model",
            "parameters_per_class",
            "all",
            model.parameters_per_class() as f64,
        ),
    ];
    if let Some(basis) = model.basis() {
        rows.push(MetricRow::new(
            "model",
            "basis_size",
            "all",
            basis.len() as f64,
        ));
    }
    if let Some(s) = supporting_exemplars(model) {
        rows.push(MetricRow::new(
            "model",
            "supporting_exemplars",
            "all",
            s as f64,
        ));
    }
    rows.push(MetricRow::new("model", "train_size", "all", train as f64));
    rows.push(MetricRow::new("model", "test_size", "all", test as f64));
    rows
}

fn write_timings(dir: &Path, name: &str, timings: &Timings) -> Result<PathBuf> {
    let path = output_path(dir, name)?;
    write_csv(&path, &timings.rows)?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))
}

/// Accuracy of repeated fits whose basis selection is seeded with
/// `seed + t`; trial 0 is the saved model with accuracy `first`.
fn basis_trials(
    cfg: &ExperimentConfig,
    data: &Prepared,
    first: f64,
    exec: Execution,
) -> Result<Vec<MetricRow>> {
    let (split, eval) = match &data.test {
        Some(t) => ("test", t),
        None => ("train", &data.train),
    };
    let mut accuracies = vec![first];
    for t in 1..cfg.basis.trials {
        let mut pipeline = cfg.pipeline(cfg.method, &data.measures);
        pipeline.basis = cfg.basis.strategy(cfg.seed.wrapping_add(t as u64));
        let model = fit(&pipeline, &data.train.exemplars, &data.train.labels, exec)?;
        let predicted = model.predict_batch(&eval.exemplars, exec)?;
        let correct = predicted
            .iter()
            .zip(&eval.labels)
            .filter(|(p, l)| p == l)
            .count();
        accuracies.push(correct as f64 / eval.len() as f64);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let mut rows: Vec<MetricRow> = accuracies
        .iter()
        .enumerate()
        .map(|(t, &a)| MetricRow::new(split, "accuracy_trial", t, a))
        .collect();
    rows.push(MetricRow::new(split, "accuracy_trial", "mean", mean));
    Ok(rows)
}

/// Fits the configured model; writes `model.json`, `config.json`,
/// `metrics.csv` and `timings.csv`.
pub fn run_train(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let pipeline = cfg.pipeline(cfg.method, &data.measures);
    let model = timings.time("fit", || {
        Ok(fit(
            &pipeline,
            &data.train.exemplars,
            &data.train.labels,
            exec,
        )?)
    })?;

    let mut rows = Vec::new();
    let predicted = timings.time("predict_train", || {
        Ok(model.predict_batch(&data.train.exemplars, exec)?)
    })?;
    rows.extend(accuracy_rows(
        "train",
        model.classes(),
        &predicted,
        &data.train.labels,
    ));
    if let Some(test) = &data.test {
        let predicted = timings.time("predict_test", || {
            Ok(model.predict_batch(&test.exemplars, exec)?)
        })?;
        rows.extend(accuracy_rows(
            "test",
            model.classes(),
            &predicted,
            &test.labels,
        ));
    }
    if cfg.basis.trials > 1 {
        let first = rows
            .iter()
            .rev()
            .find(|r| r.metric == "accuracy" && r.key == "all");
        let first = first.map_or(0.0, |r| r.value);
        rows.extend(timings.time("trials", || basis_trials(cfg, &data, first, exec))?);
    }
    rows.extend(model_rows(
        &model,
        data.train.len(),
        data.test.as_ref().map_or(0, Samples::len),
    ));

    let file = ModelFile {
        format_version: MODEL_FILE_VERSION,
        experiment: cfg.clone(),
        model,
    };
    let dir = &cfg.output.dir;
    let model_path = output_path(dir, "model.json")?;
    write_text(&model_path, &json(&file)?)?;
    let config_path = output_path(dir, "config.json")?;
    write_text(&config_path, &cfg.to_canonical_json()?)?;
    let metrics_path = output_path(dir, "metrics.csv")?;
    write_csv(&metrics_path, &rows)?;
    let timings_path = write_timings(dir, "timings.csv", &timings)?;
    Ok(vec![model_path, config_path, metrics_path, timings_path])
}

/// Evaluates a saved model on the test split of its experiment (or the
/// training split when there is none); writes `eval_metrics.csv`.
pub fn run_eval(
    model_path: &Path,
    overrides: &[(String, String)],
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let file: ModelFile = serde_json::from_str(&read_text(model_path)?)
        .map_err(|source| CliError::Core(besvm::Error::Json(source)))?;
    let cfg = file.experiment.with_overrides(overrides)?;
    let mut timings = Timings::default();
    let data = prepare(&cfg, &mut timings)?;
    if data.measures.bound != file.model.config.measures {
        return Err(CliError::Config(
            "measures differ from those the model was trained with".into(),
        ));
    }
    let (split, samples) = match &data.test {
        Some(t) => ("test", t),
        None => ("train", &data.train),
    };
    let predicted = timings.time("predict", || {
        Ok(file.model.predict_batch(&samples.exemplars, exec)?)
    })?;
    let mut rows = accuracy_rows(split, file.model.classes(), &predicted, &samples.labels);
    rows.extend(model_rows(
        &file.model,
        data.train.len(),
        data.test.as_ref().map_or(0, Samples::len),
    ));

    let metrics_path = output_path(&cfg.output.dir, "eval_metrics.csv")?;
    write_csv(&metrics_path, &rows)?;
    let timings_path = write_timings(&cfg.output.dir, "eval_timings.csv", &timings)?;
    Ok(vec![metrics_path, timings_path])
}

/// Training samples after feature normalization, with the normalizers.
fn normalized_train(
    cfg: &ExperimentConfig,
    train: &Samples,
) -> Result<(Vec<Normalizer>, Vec<besvm::embedding::Exemplar>)> {
    let normalizers = fit_feature_normalizers(cfg.normalization.features, &train.exemplars)?;
    let samples = train
        .exemplars
        .iter()
        .map(|x| normalize_exemplar(&normalizers, x))
        .collect::<besvm::Result<Vec<_>>>()?;
    Ok((normalizers, samples))
}

fn select_basis(
    cfg: &ExperimentConfig,
    data: &Prepared,
    exec: Execution,
) -> Result<(Vec<Normalizer>, BasisSet)> {
    let (normalizers, samples) = normalized_train(cfg, &data.train)?;
    let strategy = cfg.basis.strategy(cfg.seed);
    let ids = select_basis_ids(
        &strategy,
        &data.measures.bound,
        &samples,
        &data.train.labels,
        exec,
    )?;
    let basis = BasisSet::from_ids(&samples, &data.train.labels, &ids)?;
    if basis.is_empty() {
        return Err(CliError::Config("basis is empty".into()));
    }
    Ok((normalizers, basis))
}

/// Writes the selected basis as `basis.csv`.
pub fn run_select_basis(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let (_, basis) = select_basis(cfg, &data, exec)?;
    let rows: Vec<BasisRow> = basis
        .entries
        .iter()
        .enumerate()
        .map(|(position, e)| BasisRow {
            position,
            sample_id: e.id,
            class: e.class_id,
        })
        .collect();
    let path = output_path(&cfg.output.dir, "basis.csv")?;
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

fn embedded_records<'a>(
    matrix: &'a ndarray::Array2<f64>,
    labels: &'a [usize],
) -> impl Iterator<Item = Vec<String>> + 'a {
    matrix.rows().into_iter().zip(labels).map(|(row, l)| {
        std::iter::once(l.to_string())
            .chain(row.iter().map(|v| v.to_string()))
            .collect()
    })
}

/// Fits the empirical-map embedding of the configured basis and measures;
/// writes `embedding.json` and the embedded splits as CSV.
pub fn run_embed(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let (feature_normalizers, basis) = timings.time("basis", || select_basis(cfg, &data, exec))?;
    let embed =
        |samples: &Samples, source: NormalizerSource<'_>| -> Result<embedding::EmbeddedDataset> {
            let normalized = samples
                .exemplars
                .iter()
                .map(|x| normalize_exemplar(&feature_normalizers, x))
                .collect::<besvm::Result<Vec<_>>>()?;
            Ok(embed_dataset_with(
                &basis,
                &data.measures.bound,
                &normalized,
                &samples.labels,
                source,
                exec,
            )?)
        };
    let train = timings.time("embed_train", || {
        embed(&data.train, NormalizerSource::Fit(cfg.normalization.map))
    })?;
    let test = data
        .test
        .as_ref()
        .map(|t| {
            timings.time("embed_test", || {
                embed(t, NormalizerSource::Frozen(&train.normalizers))
            })
        })
        .transpose()?;

    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..train.matrix.ncols()).map(|j| format!("f{j}")))
        .collect();
    let dir = &cfg.output.dir;
    let mut written = Vec::new();
    let train_path = output_path(dir, "embedded_train.csv")?;
    write_records(
        &train_path,
        &header,
        embedded_records(&train.matrix, &train.labels),
    )?;
    written.push(train_path);
    if let Some(test) = &test {
        let test_path = output_path(dir, "embedded_test.csv")?;
        write_records(
            &test_path,
            &header,
            embedded_records(&test.matrix, &test.labels),
        )?;
        written.push(test_path);
    }
    let doc = EmbeddingFile {
        feature_normalizers,
        embedding: EmbeddingDocument::new(data.measures.bound.clone(), basis, train.normalizers),
    };
    let doc_path = output_path(dir, "embedding.json")?;
    write_text(&doc_path, &json(&doc)?)?;
    written.push(doc_path);
    written.push(write_timings(dir, "embed_timings.csv", &timings)?);
    Ok(written)
}

/// Negative-eigenvalue statistics of the basis self-similarity matrix of
/// each measure; writes `spectrum.csv`, and `correlations.csv` when an
/// accuracy table is given.
pub fn run_analyze(
    cfg: &ExperimentConfig,
    accuracy: Option<&Path>,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let (_, basis) = select_basis(cfg, &data, exec)?;
    let rows = data
        .measures
        .bound
        .iter()
        .zip(&data.measures.labels)
        .map(|(m, label)| {
            let (ng_rat, ng_eng) = embedding::basis_negative_stats(&basis, m)?;
            Ok(SpectrumRow {
                label: label.clone(),
                ng_rat,
                ng_eng,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let correlations = accuracy.map(|path| correlate(&rows, path)).transpose()?;
    let path = output_path(&cfg.output.dir, "spectrum.csv")?;
    write_csv(&path, &rows)?;
    let mut written = vec![path];
    if let Some(c) = correlations {
        let path = output_path(&cfg.output.dir, "correlations.csv")?;
        write_csv(&path, &c)?;
        written.push(path);
    }
    Ok(written)
}

fn correlate(rows: &[SpectrumRow], accuracy: &Path) -> Result<Vec<CorrelationRow>> {
    let table = read_labeled_columns(accuracy)?;
    let matched = table
        .labels
        .iter()
        .map(|l| {
            rows.iter().find(|r| &r.label == l).ok_or_else(|| {
                CliError::Config(format!(
                    "{}: label {l} is not among the analyzed measures",
                    accuracy.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ng_rat: Vec<f64> = matched.iter().map(|r| r.ng_rat).collect();
    let ng_eng: Vec<f64> = matched.iter().map(|r| r.ng_eng).collect();
    let mut out = Vec::new();
    for (name, values) in &table.columns {
        for (statistic, stat) in [("NgRat", &ng_rat), ("NgEng", &ng_eng)] {
            out.push(CorrelationRow {
                statistic: statistic.into(),
                accuracy_column: name.clone(),
                pearson_r: pearson_r(stat, values)?,
            });
        }
    }
    Ok(out)
}

/// Contiguous-fold cross-validation on the training split; writes
/// `cv_metrics.csv`.
pub fn run_cv(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let pipeline = cfg.pipeline(cfg.method, &data.measures);
    let folds = PipelineFolds {
        config: &pipeline,
        samples: &data.train.exemplars,
        labels: &data.train.labels,
        exec: Execution::Sequential,
    };
    let report = timings.time("cv", || {
        Ok(cross_validate(
            &folds,
            &data.train.labels,
            cfg.cv.folds,
            exec,
        )?)
    })?;
    let mut rows: Vec<MetricRow> = report
        .fold_accuracies
        .iter()
        .enumerate()
        .map(|(f, &a)| MetricRow::new("cv", "accuracy", format!("fold{f}"), a))
        .collect();
    rows.push(MetricRow::new(
        "cv",
        "accuracy",
        "mean",
        report.mean_accuracy,
    ));
    let path = output_path(&cfg.output.dir, "cv_metrics.csv")?;
    write_csv(&path, &rows)?;
    let timings_path = write_timings(&cfg.output.dir, "cv_timings.csv", &timings)?;
    Ok(vec![path, timings_path])
}

/// Single-threaded training time of BE-SVM and the kernel SVM over growing
/// prefixes of the training split; writes `bench.csv`.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let exec = Execution::Sequential;
    let sizes = &cfg.bench.sizes;
    if sizes.is_empty() {
        return Err(CliError::Config("bench.sizes is empty".into()));
    }
    let mut timings = Timings::default();
    let data = prepare(cfg, &mut timings)?;
    let classes = besvm::basis::class_members(&data.train.labels)
        .iter()
        .filter(|m| !m.is_empty())
        .count();
    let basis_size = |n: usize| match cfg.basis.strategy {
        BasisKind::All => n,
        _ => cfg.basis.per_class * classes,
    };
    for &n in sizes {
        if n > data.train.len() {
            return Err(CliError::Config(format!(
                "bench size {n} exceeds the {} training samples",
                data.train.len()
            )));
        }
        if basis_size(n) > n {
            return Err(CliError::Config(format!(
                "basis size {} exceeds n = {n}",
                basis_size(n)
            )));
        }
    }
    let subsets: Vec<Samples> = sizes
        .iter()
        .map(|&n| data.train.subset(&balanced_prefix(&data.train.labels, n)))
        .collect();

    let mut rows = Vec::new();
    for (method, name) in [(Method::BeSvm, "be-svm"), (Method::KernelSvm, "kernel-svm")] {
        let pipeline = cfg.pipeline(method, &data.measures);
        let points = scaling_bench(sizes, cfg.bench.warmup, cfg.bench.repeats, |n| {
            let i = sizes
                .iter()
                .position(|&s| s == n)
                .expect("size from the list");
            fit(&pipeline, &subsets[i].exemplars, &subsets[i].labels, exec).map(|_| ())
        })?;
        if let Some(slope) = scaling_slope(&points) {
            info!("{name}: log-log slope {slope:.3}");
        }
        rows.extend(points.iter().map(|p| BenchRow {
            method: name.into(),
            n: p.n,
            b: if method == Method::KernelSvm {
                p.n
            } else {
                basis_size(p.n)
            },
            time_ms: p.time_ms,
        }));
    }
    let path = output_path(&cfg.output.dir, "bench.csv")?;
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

//! Experiment configuration: one JSON document, with dotted-path overrides.

use std::path::{Path, PathBuf};

use besvm::basis::{KMedoidsInit, DEFAULT_KMEDOIDS_ITER};
use besvm::embedding::{BoundMeasure, SpectrumFixMode, DEFAULT_EIGEN_TOL};
use besvm::features::NormalizationKind;
use besvm::pipeline::{BasisStrategy, Method, PipelineConfig};
use besvm::similarity::SimilarityMeasure;
use besvm::solver::kernel::KernelSvmParams;
use besvm::solver::linear::{LinearSvmParams, Loss};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::labels::{format_measure_label, parse_measure_label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub measures: Vec<MeasureSpec>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub cv: CvSpec,
    #[serde(default)]
    pub bench: BenchSpec,
    /// Seeds synthetic data, random basis selection and the solver.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two concentric noisy rings in the plane.
    TwoRings {
        n_per_class: usize,
        #[serde(default)]
        test_per_class: usize,
        #[serde(default = "default_radii")]
        radii: [f64; 2],
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Gaussian blobs around the given centres.
    Blobs {
        centers: Vec<Vec<f64>>,
        n_per_class: usize,
        #[serde(default)]
        test_per_class: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// Synthetic RGB texture images.
    Textured {
        train_count: usize,
        #[serde(default)]
        test_count: usize,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    /// `label,f1,f2,...` files.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
    /// CIFAR-10 binary batches in `dir`; `train_batches` are the indices of
    /// the `data_batch_<i>.bin` files used for training.
    Cifar {
        dir: PathBuf,
        #[serde(default = "default_batches")]
        train_batches: Vec<usize>,
        /// Evaluate on `test_batch.bin`.
        #[serde(default = "default_true")]
        test: bool,
        /// Keep only the first records of the training set.
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn is_image(&self) -> bool {
        matches!(
            self,
            DatasetSpec::Textured { .. } | DatasetSpec::Cifar { .. }
        )
    }
}

fn default_radii() -> [f64; 2] {
    [1.0, 3.0]
}

fn default_noise() -> f64 {
    0.1
}

fn default_sigma() -> f64 {
    1.0
}

fn default_side() -> usize {
    32
}

fn default_classes() -> usize {
    3
}

fn default_batches() -> Vec<usize> {
    vec![1]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    /// HOG cell size for measures given without a label.
    pub cell_size: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { cell_size: 8 }
    }
}

/// A measure label such as `H4(1,0)`, or an explicit measure object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Label(String),
    Measure(SimilarityMeasure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    #[default]
    Random,
    IndexStride,
    KernelKMedoids,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Greedy,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub strategy: BasisKind,
    pub per_class: usize,
    /// Measure index used by k-medoids.
    pub measure: usize,
    pub max_iter: usize,
    pub init: InitKind,
    /// Number of basis draws reported by `train`; trial `t` seeds the
    /// selection with `seed + t`.
    pub trials: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            strategy: BasisKind::Random,
            per_class: 100,
            measure: 0,
            max_iter: DEFAULT_KMEDOIDS_ITER,
            init: InitKind::Greedy,
            trials: 1,
        }
    }
}

impl BasisSpec {
    pub fn strategy(&self, seed: u64) -> BasisStrategy {
        let per_class = self.per_class;
        match self.strategy {
            BasisKind::Random => BasisStrategy::Random { per_class, seed },
            BasisKind::IndexStride => BasisStrategy::IndexStride { per_class },
            BasisKind::All => BasisStrategy::All,
            BasisKind::KernelKMedoids => BasisStrategy::KernelKMedoids {
                per_class,
                measure: self.measure,
                max_iter: self.max_iter,
                init: match self.init {
                    InitKind::Greedy => KMedoidsInit::Greedy,
                    InitKind::Random => KMedoidsInit::Random { seed },
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSpec {
    pub features: NormalizationKind,
    pub map: NormalizationKind,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            features: NormalizationKind::Unnorm,
            map: NormalizationKind::BeSvm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// Misclassification cost; `null` picks the method default (2 for the
    /// kernel SVM, 1 otherwise).
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub loss: Loss,
    /// Relative duality-gap tolerance of the linear solver.
    pub epsilon: f64,
    /// Sweep limit of the linear solver.
    pub max_iter: usize,
    /// Regularized bias; `null` enables it only for the raw linear method.
    pub bias: Option<bool>,
    pub kernel: KernelSpec,
    /// Spectrum fix of the kernel-SVM training Gram; `null` rejects
    /// indefinite Gram matrices.
    pub kernel_fix: Option<SpectrumFixMode>,
    pub nystrom_fix: SpectrumFixMode,
    pub eigen_tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let linear = LinearSvmParams::default();
        SolverSpec {
            c: None,
            loss: linear.loss,
            epsilon: linear.epsilon,
            max_iter: linear.max_iter,
            bias: None,
            kernel: KernelSpec::default(),
            kernel_fix: None,
            nystrom_fix: SpectrumFixMode::Clip,
            eigen_tol: DEFAULT_EIGEN_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub check_psd: bool,
    pub psd_tol: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        let k = KernelSvmParams::default();
        KernelSpec {
            tol: k.tol,
            max_iter: k.max_iter,
            check_psd: k.check_psd,
            psd_tol: k.psd_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSpec {
    pub folds: usize,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    /// Training-set sizes, strictly increasing.
    pub sizes: Vec<usize>,
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sizes: vec![250, 500, 1000],
            warmup: 1,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
        }
    }
}

/// Measures bound to feature views.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMeasures {
    pub bound: Vec<BoundMeasure>,
    /// HOG cell size of each view; empty for vector data.
    pub cells: Vec<usize>,
    pub labels: Vec<String>,
}

impl ExperimentConfig {
    /// Reads a config file and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|source| CliError::ConfigJson {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            serde_json::from_value(value).map_err(|source| CliError::ConfigJson {
                path: path.to_path_buf(),
                source,
            })?;
        config.with_overrides(overrides)
    }

    /// Applies dotted-path overrides on the canonical form of `self`.
    pub fn with_overrides(self, overrides: &[(String, String)]) -> Result<Self> {
        let config = if overrides.is_empty() {
            self
        } else {
            let mut value = self.to_value()?;
            for (key, raw) in overrides {
                apply_override(&mut value, key, raw)?;
            }
            serde_json::from_value(value)
                .map_err(|e| CliError::Config(format!("after overrides: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Result<Value> {
        serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pretty JSON with every default spelled out.
    pub fn to_canonical_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.method != Method::Linear && self.measures.is_empty() {
            return Err(CliError::Config("at least one measure is required".into()));
        }
        if self.basis.strategy != BasisKind::All && self.basis.per_class == 0 {
            return Err(CliError::Config(
                "basis is empty: basis.per_class must be at least 1".into(),
            ));
        }
        if self.basis.trials == 0 {
            return Err(CliError::Config("basis.trials must be at least 1".into()));
        }
        if self.features.cell_size == 0 {
            return Err(CliError::Config(
                "features.cell_size must be at least 1".into(),
            ));
        }
        if let DatasetSpec::Cifar { train_batches, .. } = &self.dataset {
            if train_batches.is_empty() || train_batches.iter().any(|b| !(1..=5).contains(b)) {
                return Err(CliError::Config(
                    "dataset.train_batches must be a non-empty subset of 1..=5".into(),
                ));
            }
        }
        self.resolve_measures()?;
        Ok(())
    }

    /// Binds every measure to a view: one HOG grid per distinct cell size for
    /// image data, the single vector view otherwise.
    pub fn resolve_measures(&self) -> Result<ResolvedMeasures> {
        let image = self.dataset.is_image();
        let mut resolved = ResolvedMeasures {
            bound: Vec::new(),
            cells: Vec::new(),
            labels: Vec::new(),
        };
        for spec in &self.measures {
            let (measure, cell) = match spec {
                MeasureSpec::Label(label) => {
                    let parsed = parse_measure_label(label)?;
                    if !image {
                        return Err(CliError::Config(format!(
                            "measure label {label} needs an image dataset"
                        )));
                    }
                    (parsed.measure, Some(parsed.cell_size))
                }
                MeasureSpec::Measure(m) => (*m, image.then_some(self.features.cell_size)),
            };
            measure.validate()?;
            let view = match cell {
                Some(c) => match resolved.cells.iter().position(|&x| x == c) {
                    Some(v) => v,
                    None => {
                        resolved.cells.push(c);
                        resolved.cells.len() - 1
                    }
                },
                None => 0,
            };
            resolved.bound.push(BoundMeasure::new(measure, view));
            resolved.labels.push(format_measure_label(&measure, cell));
        }
        if image && resolved.cells.is_empty() {
            resolved.cells.push(self.features.cell_size);
        }
        Ok(resolved)
    }

    /// Library pipeline settings for `measures`.
    pub fn pipeline(&self, method: Method, measures: &ResolvedMeasures) -> PipelineConfig {
        let s = &self.solver;
        let linear = LinearSvmParams {
            c: s.c.unwrap_or(1.0),
            loss: s.loss,
            epsilon: s.epsilon,
            max_iter: s.max_iter,
            bias: s.bias.unwrap_or(method == Method::Linear),
            seed: self.seed,
        };
        let kernel = KernelSvmParams {
            c: s.c.unwrap_or(KernelSvmParams::default().c),
            tol: s.kernel.tol,
            max_iter: s.kernel.max_iter,
            check_psd: s.kernel.check_psd,
            psd_tol: s.kernel.psd_tol,
        };
        PipelineConfig {
            method,
            measures: measures.bound.clone(),
            basis: self.basis.strategy(self.seed),
            feature_normalization: self.normalization.features,
            map_normalization: self.normalization.map,
            linear,
            kernel,
            nystrom_fix: s.nystrom_fix,
            kernel_fix: s.kernel_fix,
            eigen_tol: s.eigen_tol,
        }
    }
}

/// Sets the leaf at dotted `key` to `raw`, read as JSON when it parses and
/// as a string otherwise. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!(
                "override {key}: {part} is inside a non-object value"
            ))
        })?;
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {key}: parent is not an object")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `--a.b=value` arguments from the rest of the command line.
pub fn split_override_args(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let parsed = arg
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .filter(|(key, _)| key.contains('.'));
        match parsed {
            Some((key, value)) => overrides.push((key.to_string(), value.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))
}

//! End-to-end training and prediction for BE-SVM and its baselines.

use std::borrow::Borrow;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::basis::{self, KMedoidsInit, DEFAULT_KMEDOIDS_ITER};
use crate::embedding::{
    apply_block_normalizers, fit_block_normalizers, map_samples, nystrom_projection, spectrum_fix,
    BasisSet, BlockLayout, BoundMeasure, Exemplar, SpectrumFixMode, DEFAULT_EIGEN_TOL,
};
use crate::error::{Error, Result};
use crate::features::{NormalizationKind, Normalizer};
use crate::par::{self, Execution};
use crate::similarity::{gram_with, symmetrize, Representation, SimilarityMeasure};
use crate::solver::cv::FoldModel;
use crate::solver::kernel::{train_one_vs_one, KernelModel, KernelSvmParams};
use crate::solver::linear::{train_one_vs_rest, LinearModel, LinearSvmParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Linear SVM on the normalized empirical kernel map.
    #[default]
    BeSvm,
    /// Linear SVM on the raw (flattened) features of view 0.
    Linear,
    /// Linear SVM on Nyström features built from the basis.
    Nystrom,
    /// One-vs-one kernel SVM on the summed measure Gram matrices.
    KernelSvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum BasisStrategy {
    Random {
        per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    IndexStride {
        per_class: usize,
    },
    KernelKMedoids {
        per_class: usize,
        /// Index of the measure used for clustering.
        #[serde(default)]
        measure: usize,
        #[serde(default = "default_kmedoids_iter")]
        max_iter: usize,
        #[serde(default)]
        init: KMedoidsInit,
    },
    /// Every training sample.
    All,
}

fn default_kmedoids_iter() -> usize {
    DEFAULT_KMEDOIDS_ITER
}

impl Default for BasisStrategy {
    fn default() -> Self {
        BasisStrategy::Random {
            per_class: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    pub measures: Vec<BoundMeasure>,
    pub basis: BasisStrategy,
    /// Applied to every view before any similarity is evaluated.
    pub feature_normalization: NormalizationKind,
    /// Applied per measure block of the empirical (or Nyström) map.
    pub map_normalization: NormalizationKind,
    pub linear: LinearSvmParams,
    pub kernel: KernelSvmParams,
    /// Eigenvalue fix of the basis Gram matrix for the Nyström embedding.
    pub nystrom_fix: SpectrumFixMode,
    /// Optional fix of the training Gram matrix for the kernel SVM; without
    /// one, indefinite Gram matrices are rejected.
    pub kernel_fix: Option<SpectrumFixMode>,
    pub eigen_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::BeSvm,
            measures: vec![SimilarityMeasure::Linear.into()],
            basis: BasisStrategy::default(),
            feature_normalization: NormalizationKind::Unnorm,
            map_normalization: NormalizationKind::BeSvm,
            linear: LinearSvmParams::default(),
            kernel: KernelSvmParams::default(),
            nystrom_fix: SpectrumFixMode::Clip,
            kernel_fix: None,
            eigen_tol: DEFAULT_EIGEN_TOL,
        }
    }
}

impl PipelineConfig {
    /// BE-SVM over `measures` with the given basis strategy.
    pub fn be_svm(measures: Vec<BoundMeasure>, basis: BasisStrategy) -> Self {
        PipelineConfig {
            measures,
            basis,
            ..Default::default()
        }
    }

    /// Linear SVM with bias on raw features.
    pub fn linear_raw() -> Self {
        PipelineConfig {
            method: Method::Linear,
            linear: LinearSvmParams {
                bias: true,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method != Method::Linear && self.measures.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one measure is required".into(),
            ));
        }
        for m in &self.measures {
            m.measure.validate()?;
        }
        if let BasisStrategy::KernelKMedoids { measure, .. } = self.basis {
            if measure >= self.measures.len() {
                return Err(Error::InvalidParameter(format!(
                    "k-medoids measure index {measure} out of range ({} measures)",
                    self.measures.len()
                )));
            }
        }
        self.linear.validate()
    }
}

/// Training indices chosen as basis.
pub fn select_basis_ids<E>(
    strategy: &BasisStrategy,
    measures: &[BoundMeasure],
    samples: &[E],
    labels: &[usize],
    exec: Execution,
) -> Result<Vec<usize>>
where
    E: Borrow<Exemplar> + Sync,
{
    match *strategy {
        BasisStrategy::Random { per_class, seed } => basis::select_random(labels, per_class, seed),
        BasisStrategy::IndexStride { per_class } => basis::select_index_stride(labels, per_class),
        BasisStrategy::All => Ok((0..samples.len()).collect()),
        BasisStrategy::KernelKMedoids {
            per_class,
            measure,
            max_iter,
            init,
        } => {
            let bound = measures.get(measure).ok_or_else(|| {
                Error::InvalidParameter(format!("k-medoids measure index {measure} out of range"))
            })?;
            basis::select_kmedoids_per_class(labels, per_class, max_iter, init, |ids| {
                let views: Vec<&Representation> = ids
                    .iter()
                    .map(|&i| samples[i].borrow().view(bound.view))
                    .collect::<Result<_>>()?;
                // g[i, j] = s(i, j); the point-to-medoid similarity is s(medoid, point).
                let g = gram_with(&bound.measure, &views, &views, exec)?;
                Ok(g.reversed_axes())
            })
        }
    }
}

/// The part of a fitted model that depends on the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelBody {
    Linear {
        model: LinearModel,
    },
    Embedded {
        basis: BasisSet,
        /// Per-measure Nyström projections; absent for BE-SVM.
        projections: Option<Vec<Array2<f64>>>,
        map_normalizers: Vec<Normalizer>,
        model: LinearModel,
    },
    Kernel {
        train: Vec<Exemplar>,
        model: KernelModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub config: PipelineConfig,
    /// One normalizer per view, fitted on the training features.
    pub feature_normalizers: Vec<Normalizer>,
    pub body: ModelBody,
}

fn view_count<E: Borrow<Exemplar>>(samples: &[E]) -> Result<usize> {
    let count = samples.first().map(|s| s.borrow().views.len()).unwrap_or(0);
    if samples.iter().any(|s| s.borrow().views.len() != count) {
        return Err(Error::RepresentationMismatch(
            "samples have differing view counts".into(),
        ));
    }
    Ok(count)
}

/// One normalizer per view, fitted on `samples`.
pub fn fit_feature_normalizers<E: Borrow<Exemplar>>(
    kind: NormalizationKind,
    samples: &[E],
) -> Result<Vec<Normalizer>> {
    (0..view_count(samples)?)
        .map(|v| {
            let dim = samples[0].borrow().views[v].as_flat().len();
            if kind == NormalizationKind::Unnorm {
                return Ok(Normalizer::Identity { dim });
            }
            let mut m = Array2::zeros((samples.len(), dim));
            for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
                let flat = s.borrow().views[v].as_flat();
                if flat.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: flat.len(),
                    });
                }
                row.assign(&ndarray::ArrayView1::from(flat));
            }
            Normalizer::fit(kind, m.view())
        })
        .collect()
}

/// Applies per-view feature normalizers to a copy of `x`.
pub fn normalize_exemplar(normalizers: &[Normalizer], x: &Exemplar) -> Result<Exemplar> {
    if x.views.len() != normalizers.len() {
        return Err(Error::RepresentationMismatch(format!(
            "expected {} views, got {}",
            normalizers.len(),
            x.views.len()
        )));
    }
    let mut out = x.clone();
    for (view, n) in out.views.iter_mut().zip(normalizers) {
        if !matches!(n, Normalizer::Identity { .. }) {
            n.apply_in_place(view.as_flat_mut())?;
        } else if view.as_flat().len() != n.dim() {
            return Err(Error::DimensionMismatch {
                expected: n.dim(),
                got: view.as_flat().len(),
            });
        }
    }
    Ok(out)
}

fn raw_matrix<E: Borrow<Exemplar>>(samples: &[E]) -> Result<Array2<f64>> {
    let dim = samples
        .first()
        .map(|s| s.borrow().views[0].as_flat().len())
        .unwrap_or(0);
    let mut m = Array2::zeros((samples.len(), dim));
    for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
        let flat = s.borrow().view(0)?.as_flat();
        if flat.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: flat.len(),
            });
        }
        row.assign(&ndarray::ArrayView1::from(flat));
    }
    Ok(m)
}

/// Multiplies each measure block of `mapped` by its Nyström projection.
fn project_blocks(
    mapped: &Array2<f64>,
    layout: &BlockLayout,
    projections: &[Array2<f64>],
) -> Array2<f64> {
    let mut out = Array2::zeros(mapped.dim());
    for (m, p) in projections.iter().enumerate() {
        let range = layout.range(m);
        // Row form of ψ = P k with P symmetric.
        let block = mapped.slice(s![.., range.clone()]).dot(&p.t());
        out.slice_mut(s![.., range]).assign(&block);
    }
    out
}

fn kernel_gram<A, B>(
    measures: &[BoundMeasure],
    rows: &[A],
    cols: &[B],
    exec: Execution,
) -> Result<Array2<f64>>
where
    A: Borrow<Exemplar> + Sync,
    B: Borrow<Exemplar> + Sync,
{
    let mut total = Array2::zeros((rows.len(), cols.len()));
    for m in measures {
        let r: Vec<&Representation> = rows
            .iter()
            .map(|x| x.borrow().view(m.view))
            .collect::<Result<_>>()?;
        let c: Vec<&Representation> = cols
            .iter()
            .map(|x| x.borrow().view(m.view))
            .collect::<Result<_>>()?;
        total += &gram_with(&m.measure, &r, &c, exec)?;
    }
    Ok(total)
}

/// Trains the configured model on `samples`.
pub fn fit<E>(
    config: &PipelineConfig,
    samples: &[E],
    labels: &[usize],
    exec: Execution,
) -> Result<FittedModel>
where
    E: Borrow<Exemplar> + Sync,
{
    config.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: labels.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::DegenerateInput("no training samples".into()));
    }
    let feature_normalizers = fit_feature_normalizers(config.feature_normalization, samples)?;
    let normalized: Vec<Exemplar> = par::try_map_range(exec, samples.len(), |i| {
        normalize_exemplar(&feature_normalizers, samples[i].borrow())
    })?;

    let body = match config.method {
        Method::Linear => {
            let x = raw_matrix(&normalized)?;
            ModelBody::Linear {
                model: train_one_vs_rest(x.view(), labels, &config.linear, exec)?,
            }
        }
        Method::BeSvm | Method::Nystrom => {
            let ids = select_basis_ids(&config.basis, &config.measures, &normalized, labels, exec)?;
            let basis = BasisSet::from_ids(&normalized, labels, &ids)?;
            let layout = BlockLayout::uniform(config.measures.len(), basis.len());
            let mut mapped = map_samples(&basis, &config.measures, &normalized, exec)?;
            let projections = if config.method == Method::Nystrom {
                let basis_maps = map_samples(&basis, &config.measures, &basis.exemplars(), exec)?;
                let projections = (0..config.measures.len())
                    .map(|m| {
                        // basis_maps[j, i] = s(b_i, b_j)
                        let k_mm = basis_maps.slice(s![.., layout.range(m)]).t().to_owned();
                        nystrom_projection(k_mm.view(), config.nystrom_fix, config.eigen_tol)
                    })
                    .collect::<Result<Vec<_>>>()?;
                mapped = project_blocks(&mapped, &layout, &projections);
                Some(projections)
            } else {
                None
            };
            let map_normalizers =
                fit_block_normalizers(mapped.view(), &layout, config.map_normalization)?;
            apply_block_normalizers(&mut mapped, &layout, &map_normalizers)?;
            let model = train_one_vs_rest(mapped.view(), labels, &config.linear, exec)?;
            ModelBody::Embedded {
                basis,
                projections,
                map_normalizers,
                model,
            }
        }
        Method::KernelSvm => {
            let mut k = kernel_gram(&config.measures, &normalized, &normalized, exec)?;
            if let Some(fix) = config.kernel_fix {
                k = spectrum_fix(symmetrize(&k).view(), fix)?;
            }
            let model = train_one_vs_one(k.view(), labels, &config.kernel, exec)?;
            ModelBody::Kernel {
                train: normalized,
                model,
            }
        }
    };
    Ok(FittedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        feature_normalizers,
        body,
    })
}

impl FittedModel {
    pub fn classes(&self) -> &[usize] {
        match &self.body {
            ModelBody::Linear { model } | ModelBody::Embedded { model, .. } => &model.classes,
            ModelBody::Kernel { model, .. } => &model.classes,
        }
    }

    /// Number of learned coefficients per class: the embedding width for
    /// linear models, the number of support vectors for kernel models.
    pub fn parameters_per_class(&self) -> usize {
        match &self.body {
            ModelBody::Linear { model } | ModelBody::Embedded { model, .. } => model.dim(),
            ModelBody::Kernel { model, .. } => {
                let mut sv: Vec<usize> = model
                    .machines
                    .iter()
                    .flat_map(|m| m.support.iter().copied())
                    .collect();
                sv.sort_unstable();
                sv.dedup();
                sv.len()
            }
        }
    }

    pub fn basis(&self) -> Option<&BasisSet> {
        match &self.body {
            ModelBody::Embedded { basis, .. } => Some(basis),
            _ => None,
        }
    }

    /// Normalized features the linear model sees, one row per sample.
    pub fn transform<E>(&self, samples: &[E], exec: Execution) -> Result<Array2<f64>>
    where
        E: Borrow<Exemplar> + Sync,
    {
        let normalized: Vec<Exemplar> = par::try_map_range(exec, samples.len(), |i| {
            normalize_exemplar(&self.feature_normalizers, samples[i].borrow())
        })?;
        match &self.body {
            ModelBody::Linear { .. } => raw_matrix(&normalized),
            ModelBody::Embedded {
                basis,
                projections,
                map_normalizers,
                ..
            } => {
                let measures = &self.config.measures;
                let layout = BlockLayout::uniform(measures.len(), basis.len());
                let mut mapped = map_samples(basis, measures, &normalized, exec)?;
                if let Some(p) = projections {
                    mapped = project_blocks(&mapped, &layout, p);
                }
                apply_block_normalizers(&mut mapped, &layout, map_normalizers)?;
                Ok(mapped)
            }
            ModelBody::Kernel { train, .. } => {
                kernel_gram(&self.config.measures, &normalized, train, exec)
            }
        }
    }

    pub fn predict_batch<E>(&self, samples: &[E], exec: Execution) -> Result<Vec<usize>>
    where
        E: Borrow<Exemplar> + Sync,
    {
        let features = self.transform(samples, exec)?;
        match &self.body {
            ModelBody::Linear { model } | ModelBody::Embedded { model, .. } => {
                model.predict_rows(features.view())
            }
            ModelBody::Kernel { model, .. } => model.predict_rows(features.view()),
        }
    }

    pub fn predict(&self, x: &Exemplar) -> Result<usize> {
        Ok(self.predict_batch(std::slice::from_ref(x), Execution::Sequential)?[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FittedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Adapter running the pipeline inside cross-validation; every fitted
/// statistic is computed from the training split only.
pub struct PipelineFolds<'a, E> {
    pub config: &'a PipelineConfig,
    pub samples: &'a [E],
    pub labels: &'a [usize],
    pub exec: Execution,
}

impl<E: Borrow<Exemplar> + Sync> FoldModel for PipelineFolds<'_, E> {
    fn fit_predict(&self, train: &[usize], test: &[usize]) -> Result<Vec<usize>> {
        let train_x: Vec<&Exemplar> = train.iter().map(|&i| self.samples[i].borrow()).collect();
        let train_y: Vec<usize> = train.iter().map(|&i| self.labels[i]).collect();
        let model = fit(self.config, &train_x, &train_y, self.exec)?;
        let test_x: Vec<&Exemplar> = test.iter().map(|&i| self.samples[i].borrow()).collect();
        model.predict_batch(&test_x, self.exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_blobs, make_two_rings};
    use crate::solver::cv::{accuracy, cross_validate};

    fn exemplars(points: &Array2<f64>) -> Vec<Exemplar> {
        points
            .rows()
            .into_iter()
            .map(|r| Exemplar::from(r.to_vec()))
            .collect()
    }

    fn rbf() -> Vec<BoundMeasure> {
        vec![SimilarityMeasure::Rbf { gamma: 1.0 }.into()]
    }

    #[test]
    fn every_method_fits_separable_blobs() {
        let centers = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]];
        let data = make_blobs(&centers, 20, 0.4, 2).unwrap();
        let x = exemplars(&data.points);
        let configs = [
            PipelineConfig::be_svm(
                rbf(),
                BasisStrategy::Random {
                    per_class: 5,
                    seed: 1,
                },
            ),
            PipelineConfig::be_svm(rbf(), BasisStrategy::IndexStride { per_class: 5 }),
            PipelineConfig::be_svm(
                rbf(),
                BasisStrategy::KernelKMedoids {
                    per_class: 3,
                    measure: 0,
                    max_iter: 10,
                    init: KMedoidsInit::Greedy,
                },
            ),
            PipelineConfig {
                method: Method::Nystrom,
                ..PipelineConfig::be_svm(rbf(), BasisStrategy::All)
            },
            PipelineConfig {
                method: Method::KernelSvm,
                measures: rbf(),
                ..Default::default()
            },
            PipelineConfig {
                feature_normalization: NormalizationKind::ZScore,
                ..PipelineConfig::linear_raw()
            },
        ];
        for config in &configs {
            let model = fit(config, &x, &data.labels, Execution::Parallel).unwrap();
            let predicted = model.predict_batch(&x, Execution::Sequential).unwrap();
            assert_eq!(
                accuracy(&predicted, &data.labels),
                1.0,
                "{:?}",
                config.method
            );

            let reloaded = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(reloaded, model);
            assert_eq!(
                reloaded.transform(&x, Execution::Sequential).unwrap(),
                model.transform(&x, Execution::Parallel).unwrap()
            );
        }
    }

    #[test]
    fn be_svm_separates_rings_where_linear_fails() {
        let data = make_two_rings(100, (1.0, 2.0), 0.05, 3).unwrap();
        let x = exemplars(&data.points);
        let be = PipelineConfig::be_svm(
            rbf(),
            BasisStrategy::Random {
                per_class: 10,
                seed: 0,
            },
        );
        let folds = PipelineFolds {
            config: &be,
            samples: &x,
            labels: &data.labels,
            exec: Execution::Sequential,
        };
        assert!(
            cross_validate(&folds, &data.labels, 5, Execution::Parallel)
                .unwrap()
                .mean_accuracy
                >= 0.95
        );
        let lin = PipelineConfig::linear_raw();
        let folds = PipelineFolds {
            config: &lin,
            samples: &x,
            labels: &data.labels,
            exec: Execution::Sequential,
        };
        assert!(
            cross_validate(&folds, &data.labels, 5, Execution::Parallel)
                .unwrap()
                .mean_accuracy
                <= 0.6
        );
    }

    #[test]
    fn parameter_count_is_basis_size_times_measures() {
        let data = make_blobs(&[vec![0.0], vec![3.0]], 10, 0.2, 1).unwrap();
        let x = exemplars(&data.points);
        let config = PipelineConfig::be_svm(
            vec![
                SimilarityMeasure::Linear.into(),
                SimilarityMeasure::Rbf { gamma: 0.5 }.into(),
            ],
            BasisStrategy::Random {
                per_class: 3,
                seed: 0,
            },
        );
        let model = fit(&config, &x, &data.labels, Execution::Sequential).unwrap();
        assert_eq!(model.parameters_per_class(), 12);
        assert_eq!(model.basis().unwrap().per_class_counts(), vec![3, 3]);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = make_blobs(&[vec![0.0], vec![3.0]], 4, 0.2, 1).unwrap();
        let x = exemplars(&data.points);
        let undersized = PipelineConfig::be_svm(
            rbf(),
            BasisStrategy::Random {
                per_class: 5,
                seed: 0,
            },
        );
        assert!(matches!(
            fit(&undersized, &x, &data.labels, Execution::Sequential),
            Err(Error::ClassUndersized { .. })
        ));
        let no_measures = PipelineConfig::be_svm(vec![], BasisStrategy::All);
        assert!(fit(&no_measures, &x, &data.labels, Execution::Sequential).is_err());
        let grid_measure = PipelineConfig::be_svm(
            vec![SimilarityMeasure::Rigid { h_r: 1 }.into()],
            BasisStrategy::All,
        );
        assert!(matches!(
            fit(&grid_measure, &x, &data.labels, Execution::Sequential),
            Err(Error::RepresentationMismatch(_))
        ));
        let single = vec![0; x.len()];
        assert!(matches!(
            fit(
                &PipelineConfig::linear_raw(),
                &x,
                &single,
                Execution::Sequential
            ),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn cv_does_not_leak_test_rows_into_statistics() {
        let data = make_blobs(&[vec![0.0, 0.0], vec![3.0, 3.0]], 15, 0.5, 9).unwrap();
        let x = exemplars(&data.points);
        let config = PipelineConfig {
            feature_normalization: NormalizationKind::BeSvm,
            ..PipelineConfig::be_svm(
                rbf(),
                BasisStrategy::Random {
                    per_class: 4,
                    seed: 2,
                },
            )
        };
        let train: Vec<usize> = (0..20).collect();
        let fit_on = |samples: &[Exemplar]| {
            let tx: Vec<&Exemplar> = train.iter().map(|&i| &samples[i]).collect();
            fit(&config, &tx, &data.labels[..20], Execution::Sequential).unwrap()
        };
        let base = fit_on(&x);
        let mut mutated = x.clone();
        for e in &mut mutated[20..] {
            e.views[0]
                .as_flat_mut()
                .iter_mut()
                .for_each(|v| *v += 100.0);
        }
        assert_eq!(fit_on(&mutated), base);
    }
}

//! Explicit feature spaces: the normalized empirical kernel map over a basis
//! set (one block per similarity measure) and the Nyström embedding with
//! eigenvalue fixes for indefinite inputs.

use std::borrow::Borrow;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, sym_eigen, EigenDecomposition, JACOBI_TOL};
use crate::error::{Error, Result};
use crate::features::{FeatureGrid, NormalizationKind, NormalizationStats, Normalizer};
use crate::par::{self, Execution};
use crate::similarity::{symmetrize, Representation, SimilarityMeasure};

pub const FORMAT_VERSION: u32 = 1;
/// Relative eigenvalue cut-off used when inverting square roots.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

/// A sample with one or more representations (for example HOG grids at two
/// cell sizes). Measures pick the view they operate on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub views: Vec<Representation>,
}

impl Exemplar {
    pub fn view(&self, index: usize) -> Result<&Representation> {
        self.views.get(index).ok_or_else(|| {
            Error::RepresentationMismatch(format!(
                "exemplar has {} views, view {index} requested",
                self.views.len()
            ))
        })
    }
}

impl From<Representation> for Exemplar {
    fn from(r: Representation) -> Self {
        Exemplar { views: vec![r] }
    }
}

impl From<Vec<f64>> for Exemplar {
    fn from(v: Vec<f64>) -> Self {
        Representation::Vector(v).into()
    }
}

impl From<FeatureGrid> for Exemplar {
    fn from(g: FeatureGrid) -> Self {
        Representation::Grid(g).into()
    }
}

/// A similarity measure applied to one view of each exemplar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundMeasure {
    pub measure: SimilarityMeasure,
    #[serde(default)]
    pub view: usize,
}

impl BoundMeasure {
    pub fn new(measure: SimilarityMeasure, view: usize) -> Self {
        BoundMeasure { measure, view }
    }

    /// Similarity of basis element `b` to sample `x`; `x` is the deformed side.
    pub fn eval(&self, b: &Exemplar, x: &Exemplar) -> Result<f64> {
        self.measure.eval(b.view(self.view)?, x.view(self.view)?)
    }
}

impl From<SimilarityMeasure> for BoundMeasure {
    fn from(measure: SimilarityMeasure) -> Self {
        BoundMeasure { measure, view: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisEntry {
    /// Index of the exemplar in the data it was selected from.
    pub id: usize,
    pub class_id: usize,
    pub exemplar: Exemplar,
}

/// Ordered basis shared by every measure of an embedding.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BasisSet {
    pub entries: Vec<BasisEntry>,
}

impl BasisSet {
    /// Basis made of `data[i]` for each `i` in `ids`, in that order.
    pub fn from_ids<E: Borrow<Exemplar>>(
        data: &[E],
        labels: &[usize],
        ids: &[usize],
    ) -> Result<Self> {
        let entries = ids
            .iter()
            .map(|&id| {
                let exemplar = data.get(id).ok_or_else(|| {
                    Error::InvalidParameter(format!("basis id {id} out of range ({})", data.len()))
                })?;
                Ok(BasisEntry {
                    id,
                    class_id: labels[id],
                    exemplar: exemplar.borrow().clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(BasisSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).collect()
    }

    /// Number of basis elements per class id, indexed by class.
    pub fn per_class_counts(&self) -> Vec<usize> {
        let classes = self
            .entries
            .iter()
            .map(|e| e.class_id + 1)
            .max()
            .unwrap_or(0);
        let mut counts = vec![0; classes];
        for e in &self.entries {
            counts[e.class_id] += 1;
        }
        counts
    }

    pub fn exemplars(&self) -> Vec<&Exemplar> {
        self.entries.iter().map(|e| &e.exemplar).collect()
    }
}

/// Column offsets of the per-measure blocks: block `m` spans
/// `offsets[m]..offsets[m + 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn uniform(blocks: usize, width: usize) -> Self {
        BlockLayout {
            offsets: (0..=blocks).map(|m| m * width).collect(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn width(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }
}

/// Unnormalized empirical map: for each measure, the similarities of every
/// basis element to `x`, concatenated in measure order.
pub fn empirical_map(
    basis: &BasisSet,
    measures: &[BoundMeasure],
    x: &Exemplar,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; basis.len() * measures.len()];
    fill_map(basis, measures, x, &mut out)?;
    Ok(out)
}

fn fill_map(
    basis: &BasisSet,
    measures: &[BoundMeasure],
    x: &Exemplar,
    out: &mut [f64],
) -> Result<()> {
    let b = basis.len();
    for (m, measure) in measures.iter().enumerate() {
        let xv = x.view(measure.view)?;
        for (j, entry) in basis.entries.iter().enumerate() {
            out[m * b + j] = measure
                .measure
                .eval(entry.exemplar.view(measure.view)?, xv)?;
        }
    }
    Ok(())
}

/// Row `i` is the unnormalized empirical map of `samples[i]`.
pub fn map_samples<E>(
    basis: &BasisSet,
    measures: &[BoundMeasure],
    samples: &[E],
    exec: Execution,
) -> Result<Array2<f64>>
where
    E: Borrow<Exemplar> + Sync,
{
    for m in measures {
        m.measure.validate()?;
    }
    let mut out = Array2::zeros((samples.len(), basis.len() * measures.len()));
    par::try_fill_rows(exec, &mut out, |i, row| {
        fill_map(basis, measures, samples[i].borrow(), row)
    })?;
    Ok(out)
}

/// Fits one normalizer per measure block.
pub fn fit_block_normalizers(
    mapped: ArrayView2<'_, f64>,
    layout: &BlockLayout,
    kind: NormalizationKind,
) -> Result<Vec<Normalizer>> {
    if layout.width() != mapped.ncols() {
        return Err(Error::DimensionMismatch {
            expected: layout.width(),
            got: mapped.ncols(),
        });
    }
    (0..layout.blocks())
        .map(|m| {
            Normalizer::fit(kind, mapped.slice(s![.., layout.range(m)])).map_err(|e| match e {
                Error::DegenerateInput(msg) => Error::DegenerateInput(format!("block {m}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Per-block centring and inverse-average-norm scaling statistics.
pub fn fit_embedding_normalizer(
    mapped: ArrayView2<'_, f64>,
    layout: &BlockLayout,
) -> Result<Vec<NormalizationStats>> {
    fit_block_normalizers(mapped, layout, NormalizationKind::BeSvm)?
        .into_iter()
        .map(|n| match n {
            Normalizer::BeSvm(stats) => Ok(stats),
            _ => unreachable!("BE-SVM kind yields centre/scale statistics"),
        })
        .collect()
}

pub fn apply_block_normalizers(
    matrix: &mut Array2<f64>,
    layout: &BlockLayout,
    normalizers: &[Normalizer],
) -> Result<()> {
    if normalizers.len() != layout.blocks() {
        return Err(Error::DimensionMismatch {
            expected: layout.blocks(),
            got: normalizers.len(),
        });
    }
    for mut row in matrix.rows_mut() {
        let row = row.as_slice_mut().expect("row-major");
        for (m, n) in normalizers.iter().enumerate() {
            n.apply_in_place(&mut row[layout.range(m)])?;
        }
    }
    Ok(())
}

/// Where block normalizers come from when embedding a dataset.
#[derive(Debug, Clone, Copy)]
pub enum NormalizerSource<'a> {
    /// Fit on the samples being embedded (training mode).
    Fit(NormalizationKind),
    /// Reuse previously fitted normalizers (test mode).
    Frozen(&'a [Normalizer]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    pub matrix: Array2<f64>,
    pub labels: Vec<usize>,
    pub layout: BlockLayout,
    pub normalizers: Vec<Normalizer>,
}

/// Embeds `samples` with BE-SVM block normalization, fitting it when `stats`
/// is `None`.
pub fn embed_dataset<E>(
    basis: &BasisSet,
    measures: &[BoundMeasure],
    samples: &[E],
    labels: &[usize],
    stats: Option<&[Normalizer]>,
) -> Result<EmbeddedDataset>
where
    E: Borrow<Exemplar> + Sync,
{
    let source = match stats {
        Some(s) => NormalizerSource::Frozen(s),
        None => NormalizerSource::Fit(NormalizationKind::BeSvm),
    };
    embed_dataset_with(
        basis,
        measures,
        samples,
        labels,
        source,
        Execution::default(),
    )
}

pub fn embed_dataset_with<E>(
    basis: &BasisSet,
    measures: &[BoundMeasure],
    samples: &[E],
    labels: &[usize],
    source: NormalizerSource<'_>,
    exec: Execution,
) -> Result<EmbeddedDataset>
where
    E: Borrow<Exemplar> + Sync,
{
    if labels.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: labels.len(),
        });
    }
    let layout = BlockLayout::uniform(measures.len(), basis.len());
    let mut matrix = map_samples(basis, measures, samples, exec)?;
    let normalizers = match source {
        NormalizerSource::Fit(kind) => fit_block_normalizers(matrix.view(), &layout, kind)?,
        NormalizerSource::Frozen(n) => n.to_vec(),
    };
    apply_block_normalizers(&mut matrix, &layout, &normalizers)?;
    Ok(EmbeddedDataset {
        matrix,
        labels: labels.to_vec(),
        layout,
        normalizers,
    })
}

/// Portable description of a fitted empirical-map embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDocument {
    pub format_version: u32,
    pub measures: Vec<BoundMeasure>,
    pub basis: BasisSet,
    pub normalizers: Vec<Normalizer>,
}

impl EmbeddingDocument {
    pub fn new(measures: Vec<BoundMeasure>, basis: BasisSet, normalizers: Vec<Normalizer>) -> Self {
        EmbeddingDocument {
            format_version: FORMAT_VERSION,
            measures,
            basis,
            normalizers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EmbeddingDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported embedding format version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }

    /// Normalized embedding of one exemplar.
    pub fn embed(&self, x: &Exemplar) -> Result<Vec<f64>> {
        let mut v = empirical_map(&self.basis, &self.measures, x)?;
        let layout = BlockLayout::uniform(self.measures.len(), self.basis.len());
        for (m, n) in self.normalizers.iter().enumerate() {
            n.apply_in_place(&mut v[layout.range(m)])?;
        }
        Ok(v)
    }
}

/// Eigenvalue surgery turning a symmetric matrix into a PSD one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumFixMode {
    /// Negative eigenvalues set to zero.
    #[default]
    Clip,
    /// Eigenvalues replaced by their absolute values.
    Flip,
    /// Every eigenvalue shifted up by the magnitude of the most negative one.
    Shift,
    /// Eigenvalues squared (the matrix times its transpose).
    Square,
}

impl SpectrumFixMode {
    fn fix_values(self, values: &mut [f64]) {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (-min).max(0.0);
        for l in values.iter_mut() {
            *l = match self {
                SpectrumFixMode::Clip => l.max(0.0),
                SpectrumFixMode::Flip => l.abs(),
                SpectrumFixMode::Shift => *l + shift,
                SpectrumFixMode::Square => *l * *l,
            };
        }
    }
}

fn fixed_eigen(a: ArrayView2<'_, f64>, mode: SpectrumFixMode) -> Result<EigenDecomposition> {
    let mut eig = sym_eigen(a, JACOBI_TOL)?;
    mode.fix_values(eig.values.as_slice_mut().expect("contiguous"));
    Ok(eig)
}

/// PSD version of a symmetric matrix by eigenvalue surgery.
pub fn spectrum_fix(a: ArrayView2<'_, f64>, mode: SpectrumFixMode) -> Result<Array2<f64>> {
    Ok(fixed_eigen(a, mode)?.reassemble())
}

fn inv_sqrt_from_eigen(eig: &EigenDecomposition, tol: f64) -> Result<Array2<f64>> {
    let max = eig.values.iter().copied().fold(0.0f64, f64::max);
    let max_abs = eig.values.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let cutoff = tol * max;
    if let Some(&neg) = eig.values.iter().find(|&&l| l < -tol * max_abs) {
        return Err(Error::NotPositiveSemidefinite { value: neg });
    }
    Ok(eig.reassemble_with(|l| {
        if l > cutoff && l > 0.0 {
            1.0 / l.sqrt()
        } else {
            0.0
        }
    }))
}

/// Pseudo-inverse square root `V Λ^{-1/2} V^T`, treating eigenvalues below
/// `tol * λ_max` as zero.
pub fn inv_sqrt_psd(a: ArrayView2<'_, f64>, tol: f64) -> Result<Array2<f64>> {
    inv_sqrt_from_eigen(&sym_eigen(a, JACOBI_TOL)?, tol)
}

/// The Nyström projection `fix(sym(K_mm))^{-1/2}`; embeddings are
/// `projection · k_m(x)`.
pub fn nystrom_projection(
    k_mm: ArrayView2<'_, f64>,
    fix: SpectrumFixMode,
    tol: f64,
) -> Result<Array2<f64>> {
    if k_mm.nrows() != k_mm.ncols() {
        return Err(Error::DimensionMismatch {
            expected: k_mm.nrows(),
            got: k_mm.ncols(),
        });
    }
    let sym = symmetrize(&k_mm.to_owned());
    inv_sqrt_from_eigen(&fixed_eigen(sym.view(), fix)?, tol)
}

/// Nyström feature matrix `Ψ = fix(K_mm)^{-1/2} K_mn` (m × n).
pub fn nystrom_embed(
    k_mm: ArrayView2<'_, f64>,
    k_mn: ArrayView2<'_, f64>,
    fix: SpectrumFixMode,
    tol: f64,
) -> Result<Array2<f64>> {
    if k_mn.nrows() != k_mm.nrows() {
        return Err(Error::DimensionMismatch {
            expected: k_mm.nrows(),
            got: k_mn.nrows(),
        });
    }
    Ok(nystrom_projection(k_mm, fix, tol)?.dot(&k_mn))
}

/// Inverse square root of the covariance of the columns of `K_mn`.
pub fn covariance_projection(k_mn: ArrayView2<'_, f64>, tol: f64) -> Result<Array2<f64>> {
    let (m, n) = k_mn.dim();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 columns, got {n}"
        )));
    }
    let mean = k_mn.sum_axis(ndarray::Axis(1)) / n as f64;
    let centered = &k_mn - &mean.insert_axis(ndarray::Axis(1));
    let cov = centered.dot(&centered.t()) / (n - 1) as f64;
    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("all columns are identical".into()));
    }
    debug_assert_eq!(cov.nrows(), m);
    inv_sqrt_psd(symmetrize(&cov).view(), tol)
}

/// `Ψ = cov(columns of K_mn)^{-1/2} K_mn`.
pub fn covariance_normalizer_embed(k_mn: ArrayView2<'_, f64>, tol: f64) -> Result<Array2<f64>> {
    Ok(covariance_projection(k_mn, tol)?.dot(&k_mn))
}

/// Eigenvalues of the symmetrized self-similarity matrix of a basis.
pub fn basis_spectrum(basis: &BasisSet, measure: &BoundMeasure) -> Result<Vec<f64>> {
    let exemplars = basis.exemplars();
    let views: Vec<&Representation> = exemplars
        .iter()
        .map(|e| e.view(measure.view))
        .collect::<Result<_>>()?;
    let s = crate::similarity::gram(&measure.measure, &views, &views)?;
    let eig = sym_eigen(symmetrize(&s).view(), JACOBI_TOL)?;
    Ok(eig.values.to_vec())
}

/// Negative-eigenvalue statistics of a basis self-similarity matrix.
pub fn basis_negative_stats(basis: &BasisSet, measure: &BoundMeasure) -> Result<(f64, f64)> {
    let values = basis_spectrum(basis, measure)?;
    Ok((
        analysis::neg_ratio(&values)?,
        analysis::neg_energy(&values)?,
    ))
}

//! Cross-validation, two-kernel line search and greedy measure augmentation.

use ndarray::{Array2, ArrayView2};

use crate::datasets::{even_fold_sizes, split_folds, FoldSplit};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::kernel::{train_one_vs_one, KernelSvmParams};

/// A learner that can be fitted on one subset of a dataset and evaluated on
/// another. Implementations must fit every data-dependent statistic
/// (normalization, basis) on `train` only.
pub trait FoldModel {
    fn fit_predict(&self, train: &[usize], test: &[usize]) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// `folds`-fold cross-validation over contiguous, near-equal folds.
pub fn cross_validate<M>(
    model: &M,
    labels: &[usize],
    folds: usize,
    exec: Execution,
) -> Result<CvReport>
where
    M: FoldModel + Sync + ?Sized,
{
    if folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    let split = split_folds(labels.len(), &even_fold_sizes(labels.len(), folds)?)?;
    cross_validate_split(model, labels, &split, exec)
}

/// Cross-validation over an explicit fold assignment.
pub fn cross_validate_split<M>(
    model: &M,
    labels: &[usize],
    split: &FoldSplit,
    exec: Execution,
) -> Result<CvReport>
where
    M: FoldModel + Sync + ?Sized,
{
    if split.assignments().len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: split.assignments().len(),
        });
    }
    let fold_accuracies = par::try_map_range(exec, split.fold_count(), |f| {
        let test = split.members(f);
        if test.is_empty() {
            return Err(Error::EmptyFold { fold: f });
        }
        let train = split.complement(f);
        let predicted = model.fit_predict(&train, &test)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        Ok(accuracy(&predicted, &truth))
    })?;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok(CvReport {
        fold_accuracies,
        mean_accuracy,
    })
}

/// One-vs-one kernel SVM over a precomputed full kernel matrix.
pub struct PrecomputedKernel<'a> {
    pub kernel: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub params: KernelSvmParams,
}

impl FoldModel for PrecomputedKernel<'_> {
    fn fit_predict(&self, train: &[usize], test: &[usize]) -> Result<Vec<usize>> {
        let k_train = Array2::from_shape_fn((train.len(), train.len()), |(a, b)| {
            self.kernel[[train[a], train[b]]]
        });
        let labels: Vec<usize> = train.iter().map(|&i| self.labels[i]).collect();
        let model = train_one_vs_one(k_train.view(), &labels, &self.params, Execution::Sequential)?;
        let k_test = Array2::from_shape_fn((test.len(), train.len()), |(a, b)| {
            self.kernel[[test[a], train[b]]]
        });
        model.predict_rows(k_test.view())
    }
}

/// `α ∈ {0, 0.1, …, 1}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub accuracy: f64,
    /// `(α, accuracy)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Picks the α maximizing CV accuracy of a kernel SVM on `α K1 + (1 − α) K2`;
/// ties go to the smallest α.
pub fn mkl_line_search(
    k1: ArrayView2<'_, f64>,
    k2: ArrayView2<'_, f64>,
    labels: &[usize],
    params: &KernelSvmParams,
    grid: &[f64],
    folds: usize,
    exec: Execution,
) -> Result<LineSearchResult> {
    if k1.dim() != k2.dim() {
        return Err(Error::DimensionMismatch {
            expected: k1.nrows(),
            got: k2.nrows(),
        });
    }
    if grid.is_empty() || grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidParameter(
            "alpha grid must be a nonempty subset of [0, 1]".into(),
        ));
    }
    let curve = grid
        .iter()
        .map(|&alpha| {
            let combined = &k1 * alpha + &k2 * (1.0 - alpha);
            let model = PrecomputedKernel {
                kernel: combined.view(),
                labels,
                params: *params,
            };
            Ok((
                alpha,
                cross_validate(&model, labels, folds, exec)?.mean_accuracy,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = curve[0];
    for &(alpha, acc) in &curve[1..] {
        if acc > best.1 || (acc == best.1 && alpha < best.0) {
            best = (alpha, acc);
        }
    }
    Ok(LineSearchResult {
        alpha: best.0,
        accuracy: best.1,
        curve,
    })
}

pub const DEFAULT_MIN_GAIN: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    /// Candidate indices in the order they were added.
    pub selected: Vec<usize>,
    /// Accuracy after each addition.
    pub accuracies: Vec<f64>,
}

/// Starting from the empty set, repeatedly adds the candidate whose
/// inclusion maximizes `evaluate(selected ∪ {candidate})` (ties to the lowest
/// candidate index). The first candidate is always added; later ones only if
/// they improve accuracy by more than `min_gain`.
pub fn greedy_measure_augmentation<F>(
    candidates: usize,
    min_gain: f64,
    mut evaluate: F,
) -> Result<GreedyResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if candidates == 0 {
        return Err(Error::InvalidParameter("no candidate measures".into()));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut accuracies: Vec<f64> = Vec::new();
    while selected.len() < candidates {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..candidates).filter(|c| !selected.contains(c)) {
            let mut trial = selected.clone();
            trial.push(c);
            let acc = evaluate(&trial)?;
            if best.is_none_or(|(_, a)| acc > a) {
                best = Some((c, acc));
            }
        }
        let (c, acc) = best.expect("at least one remaining candidate");
        if let Some(&current) = accuracies.last() {
            if acc - current <= min_gain {
                break;
            }
        }
        log::info!("greedy augmentation added candidate {c} (accuracy {acc:.4})");
        selected.push(c);
        accuracies.push(acc);
    }
    Ok(GreedyResult {
        selected,
        accuracies,
    })
}

//! Box-constrained dual SVM on a precomputed kernel matrix, trained by SMO
//! with maximal-violating-pair working sets, and its one-vs-one wrapper.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::analysis::{check_psd, check_symmetric};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::linear::distinct_classes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// Stop once the maximal KKT violation falls below this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Reject kernel matrices that are not positive semidefinite.
    pub check_psd: bool,
    /// Relative tolerance of the PSD check.
    pub psd_tol: f64,
}

impl Default for KernelSvmParams {
    fn default() -> Self {
        KernelSvmParams {
            c: 2.0,
            tol: 1e-5,
            max_iter: 1_000_000,
            check_psd: true,
            psd_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryKernelSvm {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl BinaryKernelSvm {
    /// `Σ_i α_i y_i k_i + b` for kernel values `k_i` against the training set.
    pub fn decision(&self, y: &[f64], k_row: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(y)
            .zip(k_row)
            .map(|((a, yi), k)| a * yi * k)
            .sum::<f64>()
            + self.bias
    }
}

/// Checks square shape, symmetry and (optionally) positive semidefiniteness.
pub fn validate_kernel(k: ArrayView2<'_, f64>, params: &KernelSvmParams) -> Result<()> {
    check_symmetric(k)?;
    if params.check_psd {
        check_psd(k, params.psd_tol)?;
    }
    Ok(())
}

/// Solves `min ½ αᵀ Y K Y α − Σα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`.
pub fn train_kernel_svm_dual(
    k: ArrayView2<'_, f64>,
    y: &[f64],
    params: &KernelSvmParams,
) -> Result<BinaryKernelSvm> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "C must be positive, got {}",
            params.c
        )));
    }
    let n = k.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    validate_kernel(k, params)?;
    Ok(smo(k, y, params))
}

fn smo(k: ArrayView2<'_, f64>, y: &[f64], params: &KernelSvmParams) -> BinaryKernelSvm {
    let n = y.len();
    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let (m_up, m_low) = loop {
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j = t;
            }
        }
        if i == usize::MAX
            || j == usize::MAX
            || m_up - m_low < params.tol
            || iterations >= params.max_iter
        {
            break (m_up, m_low);
        }
        iterations += 1;

        let curvature = (k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]]).max(1e-12);
        let mut d = (m_up - m_low) / curvature;
        d = d.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        d = d.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
        alpha[i] = (alpha[i] + y[i] * d).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * d).clamp(0.0, c);
        for t in 0..n {
            grad[t] += y[t] * d * (k[[t, i]] - k[[t, j]]);
        }
    };
    if iterations >= params.max_iter {
        log::warn!(
            "SMO stopped at the iteration limit with violation {}",
            m_up - m_low
        );
    }

    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| -y[t] * grad[t])
        .collect();
    let bias = if free.is_empty() {
        (m_up + m_low) / 2.0
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    BinaryKernelSvm {
        alpha,
        bias,
        iterations,
    }
}

/// Primal minus dual objective for a binary solution; nonnegative up to
/// rounding and close to zero at the optimum.
pub fn duality_gap(k: ArrayView2<'_, f64>, y: &[f64], model: &BinaryKernelSvm, c: f64) -> f64 {
    let n = y.len();
    let f: Vec<f64> = (0..n)
        .map(|t| model.decision(y, &k.row(t).to_vec()))
        .collect();
    let quad: f64 = (0..n)
        .map(|t| model.alpha[t] * y[t] * (f[t] - model.bias))
        .sum();
    let hinge: f64 = (0..n).map(|t| (1.0 - y[t] * f[t]).max(0.0)).sum();
    let primal = 0.5 * quad + c * hinge;
    let dual = model.alpha.iter().sum::<f64>() - 0.5 * quad;
    primal - dual
}

/// Binary machine for the class pair `(positive, negative)`, storing only
/// support vectors as indices into the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: usize,
    pub negative: usize,
    pub support: Vec<usize>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl PairMachine {
    pub fn decision(&self, k_row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&s, c)| c * k_row[s])
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub classes: Vec<usize>,
    pub train_size: usize,
    pub machines: Vec<PairMachine>,
}

impl KernelModel {
    /// Majority vote over pair machines given kernel values between `x` and
    /// every training sample; ties go to the lowest class id.
    pub fn predict(&self, k_row: &[f64]) -> Result<(usize, Vec<usize>)> {
        if k_row.len() != self.train_size {
            return Err(Error::DimensionMismatch {
                expected: self.train_size,
                got: k_row.len(),
            });
        }
        let mut votes = vec![0usize; self.classes.len()];
        for m in &self.machines {
            let winner = if m.decision(k_row) > 0.0 {
                m.positive
            } else {
                m.negative
            };
            votes[self.classes.binary_search(&winner).expect("known class")] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        Ok((self.classes[best], votes))
    }

    /// Predictions for each row of a test × train kernel matrix.
    pub fn predict_rows(&self, k_test: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        k_test
            .rows()
            .into_iter()
            .map(|r| Ok(self.predict(&r.to_vec())?.0))
            .collect()
    }
}

/// One machine per class pair `a < b`, with `a` as the positive class.
pub fn train_one_vs_one(
    k: ArrayView2<'_, f64>,
    labels: &[usize],
    params: &KernelSvmParams,
    exec: Execution,
) -> Result<KernelModel> {
    let n = k.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let classes = distinct_classes(labels)?;
    validate_kernel(k, params)?;
    let pairs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
        .map(|(a, b)| (classes[a], classes[b]))
        .collect();
    let machines = par::map_range(exec, pairs.len(), |p| {
        let (pos, neg) = pairs[p];
        let idx: Vec<usize> = (0..n)
            .filter(|&i| labels[i] == pos || labels[i] == neg)
            .collect();
        let sub = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| k[[idx[a], idx[b]]]);
        let y: Vec<f64> = idx
            .iter()
            .map(|&i| if labels[i] == pos { 1.0 } else { -1.0 })
            .collect();
        let m = smo(sub.view(), &y, params);
        let (support, coef) = idx
            .iter()
            .zip(&y)
            .zip(&m.alpha)
            .filter(|(_, &a)| a > 0.0)
            .map(|((&i, &yi), &a)| (i, a * yi))
            .unzip();
        PairMachine {
            positive: pos,
            negative: neg,
            support,
            coef,
            bias: m.bias,
        }
    });
    Ok(KernelModel {
        classes,
        train_size: n,
        machines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_blobs;
    use crate::similarity::{gram, SimilarityMeasure};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight(c: f64) -> KernelSvmParams {
        KernelSvmParams {
            c,
            tol: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn two_point_examples() {
        let k = Array2::<f64>::eye(2);
        let y = [1.0, -1.0];
        let m = train_kernel_svm_dual(k.view(), &y, &tight(10.0)).unwrap();
        assert!((m.alpha[0] - 1.0).abs() < 1e-9 && (m.alpha[1] - 1.0).abs() < 1e-9);
        assert!((m.decision(&y, &[1.0, 0.0]) - 1.0).abs() < 1e-9);
        let m = train_kernel_svm_dual(k.view(), &y, &tight(0.5)).unwrap();
        assert!((m.alpha[0] - 0.5).abs() < 1e-9 && (m.alpha[1] - 0.5).abs() < 1e-9);
        assert!(matches!(
            train_kernel_svm_dual(k.view(), &[1.0, 1.0], &tight(1.0)),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn rejects_indefinite_kernels() {
        let k = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            train_kernel_svm_dual(k.view(), &[1.0, -1.0], &tight(1.0)),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let unchecked = KernelSvmParams {
            check_psd: false,
            ..tight(1.0)
        };
        assert!(train_kernel_svm_dual(k.view(), &[1.0, -1.0], &unchecked).is_ok());
        let asym = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(matches!(
            train_kernel_svm_dual(asym.view(), &[1.0, -1.0], &tight(1.0)),
            Err(Error::AsymmetricInput { .. })
        ));
    }

    fn rbf_gram(points: &Array2<f64>) -> Array2<f64> {
        let rows: Vec<_> = points
            .rows()
            .into_iter()
            .map(|r| crate::similarity::Representation::Vector(r.to_vec()))
            .collect();
        gram(&SimilarityMeasure::Rbf { gamma: 1.0 }, &rows, &rows).unwrap()
    }

    #[test]
    fn one_vs_one_examples() {
        let centers = vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]];
        let data = make_blobs(&centers, 20, 0.3, 8).unwrap();
        let k = rbf_gram(&data.points);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let model = train_one_vs_one(k.view(), &data.labels, &KernelSvmParams::default(), exec)
                .unwrap();
            assert_eq!(model.machines.len(), 3);
            assert_eq!(model.predict_rows(k.view()).unwrap(), data.labels);
        }
        let two: Vec<usize> = data.labels.iter().map(|&l| l.min(1)).collect();
        let model = train_one_vs_one(
            k.view(),
            &two,
            &KernelSvmParams::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(model.machines.len(), 1);

        let ten: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let eye = Array2::<f64>::eye(20);
        let model = train_one_vs_one(
            eye.view(),
            &ten,
            &KernelSvmParams::default(),
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(model.machines.len(), 45);
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        let model = KernelModel {
            classes: vec![0, 1, 2],
            train_size: 1,
            machines: vec![
                PairMachine {
                    positive: 0,
                    negative: 1,
                    support: vec![],
                    coef: vec![],
                    bias: 1.0,
                },
                PairMachine {
                    positive: 0,
                    negative: 2,
                    support: vec![],
                    coef: vec![],
                    bias: -1.0,
                },
                PairMachine {
                    positive: 1,
                    negative: 2,
                    support: vec![],
                    coef: vec![],
                    bias: 1.0,
                },
            ],
        };
        assert_eq!(model.predict(&[0.0]).unwrap(), (0, vec![1, 1, 1]));
        assert!(model.predict(&[0.0, 1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kkt_and_duality(seed in 0u64..100_000, n in 2usize..30, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let mut y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            y[0] = 1.0;
            y[1] = -1.0;
            let k = rbf_gram(&points);
            let params = KernelSvmParams { c, tol: 1e-8, ..Default::default() };
            let m = train_kernel_svm_dual(k.view(), &y, &params).unwrap();
            prop_assert!(m.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            let balance: f64 = m.alpha.iter().zip(&y).map(|(a, yi)| a * yi).sum();
            prop_assert!(balance.abs() < 1e-6);
            let gap = duality_gap(k.view(), &y, &m, c);
            prop_assert!(gap >= -1e-9);
            prop_assert!(gap <= 1e-5 * n as f64 * c, "gap {gap}");
        }
    }
}

//! ℓ2-regularized linear SVM trained by dual coordinate descent, with a
//! one-vs-rest multiclass wrapper.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `max(0, 1 - y f)^2`
    #[default]
    SquaredHinge,
    /// `max(0, 1 - y f)`
    Hinge,
}

impl Loss {
    pub fn eval(self, margin: f64) -> f64 {
        let slack = (1.0 - margin).max(0.0);
        match self {
            Loss::SquaredHinge => slack * slack,
            Loss::Hinge => slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub loss: Loss,
    /// Relative duality-gap tolerance.
    pub epsilon: f64,
    /// Maximum number of sweeps over the data.
    pub max_iter: usize,
    /// Append a constant 1 feature whose (regularized) weight acts as bias.
    pub bias: bool,
    /// Seed of the per-sweep coordinate permutation.
    pub seed: u64,
}

impl Default for LinearSvmParams {
    fn default() -> Self {
        LinearSvmParams {
            c: 1.0,
            loss: Loss::SquaredHinge,
            epsilon: 1e-6,
            max_iter: 1000,
            bias: false,
            seed: 0,
        }
    }
}

impl LinearSvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLinearSvm {
    pub w: Vec<f64>,
    pub bias: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl BinaryLinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_binary_labels(y: &[f64]) -> Result<()> {
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidParameter(format!(
            "binary labels must be ±1, got {bad}"
        )));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// `½(‖w‖² + b²) + C Σ loss(y_i (w·x_i + b))`; the bias is regularized
/// because it is the weight of an appended constant feature.
pub fn primal_objective(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    w: &[f64],
    bias: f64,
    params: &LinearSvmParams,
) -> f64 {
    let reg = 0.5 * (dot(w, w) + bias * bias);
    let loss: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &yi)| {
            params
                .loss
                .eval(yi * (row.dot(&ArrayView1::from(w)) + bias))
        })
        .sum();
    reg + params.c * loss
}

/// Trains one binary machine; `y` holds ±1 labels.
pub fn train_binary(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    params: &LinearSvmParams,
) -> Result<BinaryLinearSvm> {
    params.validate()?;
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    check_binary_labels(y)?;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    let extra = if params.bias { 1.0 } else { 0.0 };

    let (diag, upper) = match params.loss {
        Loss::SquaredHinge => (0.5 / params.c, f64::INFINITY),
        Loss::Hinge => (0.0, params.c),
    };
    let qbar: Vec<f64> = (0..n).map(|i| dot(row(i), row(i)) + extra + diag).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < params.max_iter {
        order.shuffle(&mut rng);
        for &i in &order {
            if qbar[i] <= 0.0 {
                continue;
            }
            let xi = row(i);
            let g = y[i] * (dot(&w, xi) + b * extra) - 1.0 + diag * alpha[i];
            let projected = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            if projected == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / qbar[i]).clamp(0.0, upper);
            let step = (alpha[i] - old) * y[i];
            if step != 0.0 {
                for (wj, xij) in w.iter_mut().zip(xi) {
                    *wj += step * xij;
                }
                b += step * extra;
            }
        }
        sweeps += 1;

        let reg = 0.5 * (dot(&w, &w) + b * b);
        let loss: f64 = (0..n)
            .map(|i| params.loss.eval(y[i] * (dot(&w, row(i)) + b)))
            .sum();
        let primal = reg + params.c * loss;
        let dual = alpha.iter().sum::<f64>() - reg - 0.5 * diag * dot(&alpha, &alpha);
        if primal - dual <= params.epsilon * primal.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("linear SVM stopped after {sweeps} sweeps without reaching the gap tolerance");
    }
    Ok(BinaryLinearSvm {
        w,
        bias: b,
        sweeps,
        converged,
    })
}

/// One weight vector (and bias) per class; the predicted class maximizes
/// `w_c · x + b_c`, ties going to the lowest class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: Vec<usize>,
    pub weights: Array2<f64>,
    pub biases: Vec<f64>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let xv = ArrayView1::from(x);
        Ok(self
            .weights
            .rows()
            .into_iter()
            .zip(&self.biases)
            .map(|(w, b)| w.dot(&xv) + b)
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let values = self.decision_values(x)?;
        Ok((self.classes[argmax(&values)], values))
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        x.rows()
            .into_iter()
            .map(|r| Ok(self.predict(&r.to_vec())?.0))
            .collect()
    }
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sorted distinct labels; errors if fewer than two.
pub fn distinct_classes(labels: &[usize]) -> Result<Vec<usize>> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(classes)
}

/// One binary machine per class (that class against the rest).
pub fn train_one_vs_rest(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    params: &LinearSvmParams,
    exec: Execution,
) -> Result<LinearModel> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let classes = distinct_classes(labels)?;
    let machines = par::try_map_range(exec, classes.len(), |c| {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == classes[c] { 1.0 } else { -1.0 })
            .collect();
        train_binary(x, &y, params)
    })?;
    let mut weights = Array2::zeros((classes.len(), x.ncols()));
    for (mut row, m) in weights.rows_mut().into_iter().zip(&machines) {
        row.assign(&ArrayView1::from(&m.w));
    }
    Ok(LinearModel {
        biases: machines.iter().map(|m| m.bias).collect(),
        classes,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_blobs;
    use ndarray::array;
    use proptest::prelude::*;

    fn tight() -> LinearSvmParams {
        LinearSvmParams {
            epsilon: 1e-12,
            max_iter: 100_000,
            ..Default::default()
        }
    }

    #[test]
    fn closed_form_examples() {
        let x = array![[1.0], [-1.0]];
        let y = [1.0, -1.0];
        let w = train_binary(x.view(), &y, &tight()).unwrap().w[0];
        assert!((w - 0.8).abs() < 1e-6);
        let p = LinearSvmParams {
            c: 100.0,
            ..tight()
        };
        let w = train_binary(x.view(), &y, &p).unwrap().w[0];
        assert!((w - 400.0 / 401.0).abs() < 1e-6);
        let x2 = array![[2.0], [-2.0]];
        let w = train_binary(x2.view(), &y, &tight()).unwrap().w[0];
        assert!((w - 8.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_single_class_and_bad_parameters() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            train_binary(x.view(), &[1.0, 1.0], &tight()),
            Err(Error::SingleClass)
        ));
        assert!(train_binary(x.view(), &[1.0, 0.0], &tight()).is_err());
        let bad = LinearSvmParams { c: 0.0, ..tight() };
        assert!(train_binary(x.view(), &[1.0, -1.0], &bad).is_err());
        assert!(matches!(
            train_one_vs_rest(x.view(), &[3, 3], &tight(), Execution::Sequential),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn squared_hinge_matches_definition() {
        for (m, want) in [(2.0, 0.0), (1.0, 0.0), (0.5, 0.25), (-1.0, 4.0)] {
            assert_eq!(Loss::SquaredHinge.eval(m), want);
            assert_eq!(Loss::Hinge.eval(m), want.sqrt());
        }
    }

    #[test]
    fn hinge_loss_closed_form() {
        // ½w² + 2C max(0, 1 - w) is minimized at w = 1 when C ≥ 1/2.
        let x = array![[1.0], [-1.0]];
        let p = LinearSvmParams {
            loss: Loss::Hinge,
            ..tight()
        };
        let w = train_binary(x.view(), &[1.0, -1.0], &p).unwrap().w[0];
        assert!((w - 1.0).abs() < 1e-6);
        let p = LinearSvmParams { c: 0.25, ..p };
        let w = train_binary(x.view(), &[1.0, -1.0], &p).unwrap().w[0];
        assert!((w - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bias_shifts_decision() {
        let x = array![[3.0], [4.0], [1.0], [0.0]];
        let y = [1.0, 1.0, -1.0, -1.0];
        let p = LinearSvmParams {
            bias: true,
            c: 100.0,
            ..tight()
        };
        let m = train_binary(x.view(), &y, &p).unwrap();
        for (row, &yi) in x.rows().into_iter().zip(&y) {
            assert!(m.decision(&row.to_vec()) * yi > 0.0);
        }
        assert!(m.bias < 0.0);
    }

    #[test]
    fn one_vs_rest_examples() {
        let centers = vec![vec![0.0, 0.0], vec![6.0, 0.0], vec![0.0, 6.0]];
        let data = make_blobs(&centers, 30, 0.5, 4).unwrap();
        let p = LinearSvmParams {
            bias: true,
            ..Default::default()
        };
        for exec in [Execution::Sequential, Execution::Parallel] {
            let model = train_one_vs_rest(data.points.view(), &data.labels, &p, exec).unwrap();
            assert_eq!(model.predict_rows(data.points.view()).unwrap(), data.labels);
        }

        let x = array![[1.0, 0.5], [-1.0, 0.2], [2.0, -1.0], [-0.5, -0.3]];
        let labels = [1, 0, 1, 0];
        let model = train_one_vs_rest(x.view(), &labels, &tight(), Execution::Sequential).unwrap();
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == 1 { 1.0 } else { -1.0 })
            .collect();
        let binary = train_binary(x.view(), &y, &tight()).unwrap();
        for probe in [[1.0, 1.0], [-1.0, 0.0], [0.3, -2.0], [-0.2, 0.9]] {
            let want = if binary.decision(&probe) > 0.0 { 1 } else { 0 };
            assert_eq!(model.predict(&probe).unwrap().0, want);
        }
    }

    #[test]
    fn predict_examples() {
        let model = LinearModel {
            classes: vec![0, 1, 2],
            weights: Array2::eye(3),
            biases: vec![0.0; 3],
        };
        assert_eq!(model.predict(&[0.0, 0.0, 1.0]).unwrap().0, 2);
        for scale in [0.1, 1.0, 7.0] {
            assert_eq!(
                model
                    .predict(&[0.3 * scale, 0.9 * scale, -0.2 * scale])
                    .unwrap()
                    .0,
                1
            );
        }
        assert!(matches!(
            model.predict(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let zero = LinearModel {
            weights: Array2::zeros((3, 3)),
            ..model
        };
        assert_eq!(zero.predict(&[1.0, 2.0, 3.0]).unwrap().0, 0);
    }

    #[test]
    fn duplicating_rows_keeps_objective_consistent() {
        // Doubling every row is equivalent to doubling C.
        let x = array![
            [1.0, 0.2],
            [0.5, 1.0],
            [-1.0, 0.1],
            [-0.3, -1.0],
            [0.2, -0.1]
        ];
        let y = [1.0, 1.0, -1.0, -1.0, 1.0];
        let doubled = ndarray::concatenate![ndarray::Axis(0), x, x];
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let a = train_binary(doubled.view(), &y2, &tight()).unwrap();
        let p = LinearSvmParams { c: 2.0, ..tight() };
        let b = train_binary(x.view(), &y, &p).unwrap();
        let oa = primal_objective(doubled.view(), &y2, &a.w, a.bias, &tight());
        let ob = primal_objective(x.view(), &y, &b.w, b.bias, &p);
        assert!((oa - ob).abs() < 1e-8 * ob);
    }

    /// Exact optimum of the squared-hinge primal: enumerate the set of
    /// margin-violating samples and solve the resulting linear system.
    fn brute_force_objective(x: &Array2<f64>, y: &[f64], c: f64) -> f64 {
        let (n, d) = x.dim();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let mut a = Array2::<f64>::eye(d);
            let mut rhs = vec![0.0; d];
            for i in (0..n).filter(|&i| mask & (1 << i) != 0) {
                for p in 0..d {
                    rhs[p] += 2.0 * c * y[i] * x[[i, p]];
                    for q in 0..d {
                        a[[p, q]] += 2.0 * c * x[[i, p]] * x[[i, q]];
                    }
                }
            }
            let w = solve(a, rhs);
            let params = LinearSvmParams {
                c,
                ..Default::default()
            };
            best = best.min(primal_objective(x.view(), y, &w, 0.0, &params));
        }
        best
    }

    fn solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Vec<f64> {
        let d = b.len();
        for k in 0..d {
            let p = (k..d)
                .max_by(|&i, &j| a[[i, k]].abs().total_cmp(&a[[j, k]].abs()))
                .unwrap();
            for j in 0..d {
                a.swap([k, j], [p, j]);
            }
            b.swap(k, p);
            for i in k + 1..d {
                let f = a[[i, k]] / a[[k, k]];
                for j in k..d {
                    a[[i, j]] -= f * a[[k, j]];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; d];
        for k in (0..d).rev() {
            let s: f64 = (k + 1..d).map(|j| a[[k, j]] * x[j]).sum();
            x[k] = (b[k] - s) / a[[k, k]];
        }
        x
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force_oracle(
            n in 2usize..=8,
            d in 1usize..=3,
            c in 0.05f64..10.0,
            seed in 0u64..1_000_000,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let mut y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            y[0] = 1.0;
            y[1] = -1.0;
            let params = LinearSvmParams { c, ..tight() };
            let m = train_binary(x.view(), &y, &params).unwrap();
            let got = primal_objective(x.view(), &y, &m.w, m.bias, &params);
            let oracle = brute_force_objective(&x, &y, c);
            prop_assert!(got <= oracle + 1e-6 * oracle.max(1.0), "got {got}, oracle {oracle}");
        }
    }
}

//! Spectral and margin diagnostics.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by the spectral routines.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Default relative off-diagonal threshold of the Jacobi iteration.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 50;
/// Eigenvalues within `SIGN_TOL * max|λ|` of zero count as neither sign.
pub const SIGN_TOL: f64 = 1e-10;

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenDecomposition {
    /// `V f(Λ) V^T`.
    pub fn reassemble_with(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &l) in scaled.columns_mut().into_iter().zip(&self.values) {
            col *= f(l);
        }
        scaled.dot(&self.vectors.t())
    }

    pub fn reassemble(&self) -> Array2<f64> {
        self.reassemble_with(|l| l)
    }
}

/// Errors unless `a` is square and symmetric within `SYMMETRY_TOL` relative
/// to its largest entry.
pub fn check_symmetric(a: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut deviation = 0.0f64;
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            deviation = deviation.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if deviation > SYMMETRY_TOL * scale || deviation.is_nan() {
        return Err(Error::AsymmetricInput { deviation });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Iterates until the
/// off-diagonal Frobenius norm drops below `tol * |A|_F`.
pub fn sym_eigen(a: ArrayView2<'_, f64>, tol: f64) -> Result<EigenDecomposition> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = a.to_owned();
    // Work on the exactly symmetric part.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = frob == 0.0;
    let mut sweep = 0;
    while !converged {
        if off_norm(&m) <= tol * frob {
            converged = true;
            break;
        }
        if sweep == JACOBI_MAX_SWEEPS {
            break;
        }
        sweep += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[[p, p]], m[[q, q]]);
                let g = 100.0 * apq.abs();
                // Negligible against both diagonal entries.
                if sweep > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[[p, q]] = 0.0;
                    m[[q, p]] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { sweeps: sweep });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Semi-definiteness test by diagonally pivoted Cholesky: succeeds when every
/// pivot and the final Schur complement are nonnegative within
/// `tol * max diag`.
pub fn check_psd(a: ArrayView2<'_, f64>, tol: f64) -> Result<()> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut s = a.to_owned();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(s[[i, i]].abs()));
    let threshold = tol * scale.max(f64::MIN_POSITIVE);
    let mut active: Vec<usize> = (0..n).collect();
    while !active.is_empty() {
        let (pos, &piv) = active
            .iter()
            .enumerate()
            .max_by(|a, b| s[[*a.1, *a.1]].total_cmp(&s[[*b.1, *b.1]]))
            .expect("nonempty");
        let d = s[[piv, piv]];
        if d <= threshold {
            // Remaining Schur complement must vanish.
            for &i in &active {
                for &j in &active {
                    let v = s[[i, j]];
                    if (i == j && v < -threshold) || (i != j && v.abs() > threshold) {
                        return Err(Error::NotPositiveSemidefinite { value: v });
                    }
                }
            }
            return Ok(());
        }
        active.swap_remove(pos);
        for &i in &active {
            let f = s[[i, piv]] / d;
            if f == 0.0 {
                continue;
            }
            for &j in &active {
                s[[i, j]] -= f * s[[piv, j]];
            }
        }
    }
    Ok(())
}

fn sign_threshold(eigenvalues: &[f64]) -> f64 {
    SIGN_TOL * eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()))
}

/// Fraction of eigenvalues that are negative beyond round-off.
pub fn neg_ratio(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    let tol = sign_threshold(eigenvalues);
    let count = eigenvalues.iter().filter(|&&l| l < -tol).count();
    Ok(count as f64 / eigenvalues.len() as f64)
}

/// Negative eigenvalue mass relative to positive eigenvalue mass.
pub fn neg_energy(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    let tol = sign_threshold(eigenvalues);
    let neg = eigenvalues
        .iter()
        .filter(|&&l| l < -tol)
        .fold(0.0, |acc, l| acc + l.abs());
    let pos: f64 = eigenvalues.iter().filter(|&&l| l > tol).sum();
    if pos <= 0.0 {
        return Err(Error::NoPositiveEigenvalue);
    }
    Ok(neg / pos)
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two points".into(),
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn signed_coefficients(coef: ArrayView1<'_, f64>, y: &[f64]) -> Result<Array1<f64>> {
    if coef.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: coef.len(),
            got: y.len(),
        });
    }
    Ok(Array1::from_iter(coef.iter().zip(y).map(|(a, y)| a * y)))
}

fn inverse_form(q: f64) -> Result<f64> {
    if q > 0.0 && q.is_finite() {
        Ok(1.0 / q)
    } else {
        Err(Error::NonPositiveQuadraticForm(q))
    }
}

fn check_shape(m: ArrayView2<'_, f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

/// Kernel SVM margin `(α^T Y K Y α)^-1`.
pub fn margin_k(alpha: ArrayView1<'_, f64>, y: &[f64], k: ArrayView2<'_, f64>) -> Result<f64> {
    let v = signed_coefficients(alpha, y)?;
    check_shape(k, v.len(), v.len())?;
    inverse_form(v.dot(&k.dot(&v)))
}

/// Empirical-map margin `(β^T Y S^T S Y β)^-1` for the basis-by-sample
/// similarity matrix `S`.
pub fn margin_be(beta: ArrayView1<'_, f64>, y: &[f64], s_bx: ArrayView2<'_, f64>) -> Result<f64> {
    let v = signed_coefficients(beta, y)?;
    check_shape(s_bx, s_bx.nrows(), v.len())?;
    let u = s_bx.dot(&v);
    inverse_form(u.dot(&u))
}

/// Nyström margin `(α^T Y K_XB K_BB^+ K_BX Y α)^-1`, with the pseudo-inverse
/// dropping eigenvalues below `SIGN_TOL * max|λ|`.
pub fn margin_nystrom(
    alpha: ArrayView1<'_, f64>,
    y: &[f64],
    k_xb: ArrayView2<'_, f64>,
    k_bb: ArrayView2<'_, f64>,
    k_bx: ArrayView2<'_, f64>,
) -> Result<f64> {
    let v = signed_coefficients(alpha, y)?;
    let b = k_bb.nrows();
    check_shape(k_bb, b, b)?;
    check_shape(k_xb, v.len(), b)?;
    check_shape(k_bx, b, v.len())?;
    let eig = sym_eigen(k_bb, JACOBI_TOL)?;
    let tol = sign_threshold(eig.values.as_slice().expect("contiguous"));
    let pinv = eig.reassemble_with(|l| if l.abs() > tol { 1.0 / l } else { 0.0 });
    let right = k_bx.dot(&v);
    let left = k_xb.t().dot(&v);
    inverse_form(left.dot(&pinv.dot(&right)))
}

/// Wall time of `f`, best of `repeats` runs after `warmup` discarded runs.
pub fn time_best<T>(
    warmup: usize,
    repeats: usize,
    mut f: impl FnMut() -> Result<T>,
) -> Result<Duration> {
    for _ in 0..warmup {
        f()?;
    }
    let mut best = Duration::MAX;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub n: usize,
    pub time_ms: f64,
}

/// Best-of wall time of `run(n)` for each problem size; sizes must increase.
pub fn scaling_bench(
    n_values: &[usize],
    warmup: usize,
    repeats: usize,
    mut run: impl FnMut(usize) -> Result<()>,
) -> Result<Vec<ScalingPoint>> {
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "benchmark sizes must be strictly increasing".into(),
        ));
    }
    n_values
        .iter()
        .map(|&n| {
            let t = time_best(warmup, repeats, || run(n))?;
            Ok(ScalingPoint {
                n,
                time_ms: t.as_secs_f64() * 1e3,
            })
        })
        .collect()
}

/// Log-log slope of a scaling table.
pub fn scaling_slope(points: &[ScalingPoint]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.time_ms)).collect();
    log_log_slope(&pairs)
}

/// Least-squares slope of `log(time)` against `log(size)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, t)| (x.ln(), t.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

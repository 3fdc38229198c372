//! Cell-grid image descriptors and global centre/scale normalization.
//!
//! The descriptor is a 31-dimensional HOG-style cell: 18 contrast-sensitive
//! orientation bins, 9 contrast-insensitive bins and 4 block-energy
//! (texture) features. Each cell is normalized against the energies of the
//! four 2×2 cell blocks it belongs to, with clamped block lookup at the grid
//! border so that every cell of every image is treated the same way.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::datasets::Image;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const HOG_CELL_DIM: usize = 31;
const ORIENTATIONS: usize = 9;
const HOG_EPS: f64 = 1e-4;
const HOG_TRUNCATION: f64 = 0.2;
const TEXTURE_WEIGHT: f64 = 0.2357;

/// Grid of fixed-length cell descriptors; cells outside the grid read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    cell_dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, cell_dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || cell_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {rows}x{cols}x{cell_dim}"
            )));
        }
        if data.len() != rows * cols * cell_dim {
            return Err(Error::DimensionMismatch {
                expected: rows * cols * cell_dim,
                got: data.len(),
            });
        }
        Ok(FeatureGrid {
            rows,
            cols,
            cell_dim,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, cell_dim: usize) -> Self {
        FeatureGrid {
            rows,
            cols,
            cell_dim,
            data: vec![0.0; rows * cols * cell_dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_dim(&self) -> usize {
        self.cell_dim
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.cell_dim;
        &self.data[start..start + self.cell_dim]
    }

    /// `None` for out-of-grid positions (zero padding).
    #[inline]
    pub fn cell_at(&self, row: isize, col: isize) -> Option<&[f64]> {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            None
        } else {
            Some(self.cell(row as usize, col as usize))
        }
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.cols + col) * self.cell_dim;
        &mut self.data[start..start + self.cell_dim]
    }

    /// Row-major concatenation of all cells.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Computes the 31-dim cell grid of an image (any channel count; the
/// channel with the strongest gradient wins at each pixel).
pub fn compute_hog_grid(image: &Image, cell_size: usize) -> Result<FeatureGrid> {
    if cell_size == 0 {
        return Err(Error::InvalidParameter("cell size must be positive".into()));
    }
    let (h, w) = (image.height(), image.width());
    for dim in [h, w] {
        if dim == 0 || dim % cell_size != 0 {
            return Err(Error::DimensionNotDivisible { dim, cell_size });
        }
    }
    let (rows, cols) = (h / cell_size, w / cell_size);
    let ncells = rows * cols;

    let unit: Vec<(f64, f64)> = (0..ORIENTATIONS)
        .map(|o| {
            let a = o as f64 * std::f64::consts::PI / ORIENTATIONS as f64;
            (a.cos(), a.sin())
        })
        .collect();

    // Orientation histograms with bilinear spatial interpolation.
    let mut hist = vec![0.0f64; ncells * 2 * ORIENTATIONS];
    let cs = cell_size as f64;
    for y in 0..h {
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let mut best = (0.0, 0.0, -1.0);
            for c in 0..image.channels() {
                let dx = image.get(c, y, xr) as f64 - image.get(c, y, xl) as f64;
                let dy = image.get(c, yd, x) as f64 - image.get(c, yu, x) as f64;
                let v = dx * dx + dy * dy;
                if v > best.2 {
                    best = (dx, dy, v);
                }
            }
            let (dx, dy, v) = best;
            if v <= 0.0 {
                continue;
            }
            let mut best_dot = 0.0;
            let mut bin = 0;
            for (o, &(uu, vv)) in unit.iter().enumerate() {
                let dot = uu * dx + vv * dy;
                if dot > best_dot {
                    best_dot = dot;
                    bin = o;
                } else if -dot > best_dot {
                    best_dot = -dot;
                    bin = o + ORIENTATIONS;
                }
            }
            let magnitude = v.sqrt();

            let xp = (x as f64 + 0.5) / cs - 0.5;
            let yp = (y as f64 + 0.5) / cs - 0.5;
            let (ixp, iyp) = (xp.floor() as isize, yp.floor() as isize);
            let (vx0, vy0) = (xp - ixp as f64, yp - iyp as f64);
            let (vx1, vy1) = (1.0 - vx0, 1.0 - vy0);
            for (cy, wy) in [(iyp, vy1), (iyp + 1, vy0)] {
                for (cx, wx) in [(ixp, vx1), (ixp + 1, vx0)] {
                    if cy >= 0 && cx >= 0 && (cy as usize) < rows && (cx as usize) < cols {
                        let cell = cy as usize * cols + cx as usize;
                        hist[cell * 2 * ORIENTATIONS + bin] += wx * wy * magnitude;
                    }
                }
            }
        }
    }

    // Cell energies over contrast-insensitive orientations.
    let energy: Vec<f64> = (0..ncells)
        .map(|cell| {
            let hc = &hist[cell * 2 * ORIENTATIONS..(cell + 1) * 2 * ORIENTATIONS];
            (0..ORIENTATIONS)
                .map(|o| (hc[o] + hc[o + ORIENTATIONS]).powi(2))
                .sum()
        })
        .collect();
    let energy_at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        energy[r * cols + c]
    };

    let mut grid = FeatureGrid::zeros(rows, cols, HOG_CELL_DIM);
    for r in 0..rows {
        for c in 0..cols {
            let (ri, ci) = (r as isize, c as isize);
            // The four 2x2 blocks containing this cell.
            let norms: [f64; 4] = [(0, 0), (0, -1), (-1, 0), (-1, -1)].map(|(dr, dc)| {
                let (r0, c0) = (ri + dr, ci + dc);
                let sum = energy_at(r0, c0)
                    + energy_at(r0, c0 + 1)
                    + energy_at(r0 + 1, c0)
                    + energy_at(r0 + 1, c0 + 1);
                1.0 / (sum + HOG_EPS).sqrt()
            });
            let hc =
                &hist[(r * cols + c) * 2 * ORIENTATIONS..(r * cols + c + 1) * 2 * ORIENTATIONS];
            let out = grid.cell_mut(r, c);
            let mut texture = [0.0f64; 4];
            for o in 0..2 * ORIENTATIONS {
                let mut sum = 0.0;
                for (k, &n) in norms.iter().enumerate() {
                    let v = (hc[o] * n).min(HOG_TRUNCATION);
                    sum += v;
                    texture[k] += v;
                }
                out[o] = 0.5 * sum;
            }
            for o in 0..ORIENTATIONS {
                let s = hc[o] + hc[o + ORIENTATIONS];
                let sum: f64 = norms.iter().map(|&n| (s * n).min(HOG_TRUNCATION)).sum();
                out[2 * ORIENTATIONS + o] = 0.5 * sum;
            }
            for (k, t) in texture.iter().enumerate() {
                out[3 * ORIENTATIONS + k] = TEXTURE_WEIGHT * t;
            }
        }
    }
    Ok(grid)
}

/// Order-preserving batch extraction.
pub fn compute_hog_grids(images: &[Image], cell_size: usize) -> Result<Vec<FeatureGrid>> {
    par::try_map_range(Execution::default(), images.len(), |i| {
        compute_hog_grid(&images[i], cell_size)
    })
}

/// Mean vector and inverse average centred ℓ2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// Fits centring plus scaling by the inverse mean ℓ2 norm of the centred rows.
pub fn fit_center_scale(vectors: ArrayView2<'_, f64>) -> Result<NormalizationStats> {
    let n = vectors.nrows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 vectors to fit normalization, got {n}"
        )));
    }
    let mean = column_means(vectors);
    let avg_norm = vectors
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64;
    if avg_norm <= 0.0 || !avg_norm.is_finite() {
        return Err(Error::DegenerateInput("all vectors are identical".into()));
    }
    Ok(NormalizationStats {
        mean,
        scale: 1.0 / avg_norm,
    })
}

/// Returns `scale * (v - mean)`.
pub fn apply_center_scale(stats: &NormalizationStats, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    center_scale_in_place(stats, &mut out)?;
    Ok(out)
}

pub fn center_scale_in_place(stats: &NormalizationStats, v: &mut [f64]) -> Result<()> {
    if v.len() != stats.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: stats.mean.len(),
            got: v.len(),
        });
    }
    for (x, m) in v.iter_mut().zip(&stats.mean) {
        *x = stats.scale * (*x - m);
    }
    Ok(())
}

fn column_means(vectors: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = vectors.nrows() as f64;
    let mut mean = vec![0.0; vectors.ncols()];
    for row in vectors.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Normalization scheme for a feature vector or an empirical-map block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    Unnorm,
    /// Per-dimension centring and division by the standard deviation.
    ZScore,
    /// Centring and one global scale: the inverse average centred ℓ2 norm.
    #[default]
    BeSvm,
}

/// A fitted normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Normalizer {
    Identity { dim: usize },
    ZScore { mean: Vec<f64>, inv_std: Vec<f64> },
    BeSvm(NormalizationStats),
}

impl Normalizer {
    pub fn fit(kind: NormalizationKind, vectors: ArrayView2<'_, f64>) -> Result<Self> {
        match kind {
            NormalizationKind::Unnorm => Ok(Normalizer::Identity {
                dim: vectors.ncols(),
            }),
            NormalizationKind::BeSvm => fit_center_scale(vectors).map(Normalizer::BeSvm),
            NormalizationKind::ZScore => {
                let n = vectors.nrows();
                if n < 2 {
                    return Err(Error::DegenerateInput(format!(
                        "need at least 2 vectors to fit normalization, got {n}"
                    )));
                }
                let mean = column_means(vectors);
                let mut var = vec![0.0; mean.len()];
                for row in vectors.rows() {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                // Constant dimensions are only centred.
                let inv_std = var
                    .iter()
                    .map(|s| {
                        let sd = (s / n as f64).sqrt();
                        if sd > 0.0 {
                            1.0 / sd
                        } else {
                            1.0
                        }
                    })
                    .collect();
                Ok(Normalizer::ZScore { mean, inv_std })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Normalizer::Identity { dim } => *dim,
            Normalizer::ZScore { mean, .. } => mean.len(),
            Normalizer::BeSvm(stats) => stats.mean.len(),
        }
    }

    pub fn apply_in_place(&self, v: &mut [f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        match self {
            Normalizer::Identity { .. } => {}
            Normalizer::ZScore { mean, inv_std } => {
                for ((x, m), s) in v.iter_mut().zip(mean).zip(inv_std) {
                    *x = (*x - m) * s;
                }
            }
            Normalizer::BeSvm(stats) => center_scale_in_place(stats, v)?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.random::<u8>()).collect();
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn grid_shapes_match_cell_sizes() {
        let img = random_image(32, 32, 1);
        let g8 = compute_hog_grid(&img, 8).unwrap();
        assert_eq!((g8.rows(), g8.cols()), (4, 4));
        assert_eq!(g8.as_flat().len(), 496);
        let g4 = compute_hog_grid(&img, 4).unwrap();
        assert_eq!((g4.rows(), g4.cols()), (8, 8));
        assert_eq!(g4.as_flat().len(), 1984);
    }

    #[test]
    fn uniform_image_has_zero_cells() {
        let img = Image::filled(16, 24, 3, 77);
        let g = compute_hog_grid(&img, 4).unwrap();
        assert!(g.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = Image::filled(30, 32, 1, 0);
        assert!(matches!(
            compute_hog_grid(&img, 8),
            Err(Error::DimensionNotDivisible {
                dim: 30,
                cell_size: 8
            })
        ));
    }

    #[test]
    fn entries_are_bounded() {
        for seed in 0..5 {
            let g = compute_hog_grid(&random_image(32, 32, seed), 4).unwrap();
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let cell = g.cell(r, c);
                    // 27 orientation entries sum four truncated terms, halved.
                    assert!(cell[..27].iter().all(|&v| (0.0..=0.2 * 4.0).contains(&v)));
                    // texture entries sum 18 truncated terms.
                    assert!(cell[27..].iter().all(|&v| (0.0..=0.2 * 18.0).contains(&v)));
                }
            }
        }
    }

    #[test]
    fn shifting_by_one_cell_shifts_interior_cells() {
        let cs = 4;
        let (h, w) = (32, 32);
        // Textured patch surrounded by a flat background.
        let patch = random_image(12, 12, 9);
        let mut a = Image::filled(h, w, 3, 100);
        let mut b = Image::filled(h, w, 3, 100);
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    a.set(c, 8 + y, 8 + x, patch.get(c, y, x));
                    b.set(c, 8 + y, 8 + cs + x, patch.get(c, y, x));
                }
            }
        }
        let ga = compute_hog_grid(&a, cs).unwrap();
        let gb = compute_hog_grid(&b, cs).unwrap();
        for r in 1..ga.rows() - 1 {
            for c in 1..ga.cols() - 2 {
                for (x, y) in ga.cell(r, c).iter().zip(gb.cell(r, c + 1)) {
                    assert!((x - y).abs() < 1e-12, "cell ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn center_scale_examples() {
        let s = fit_center_scale(array![[0.0], [2.0]].view()).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.scale, 1.0);
        let s = fit_center_scale(array![[1.0, 0.0], [-1.0, 0.0]].view()).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0]);
        assert_eq!(s.scale, 1.0);
        assert!(matches!(
            fit_center_scale(array![[5.0], [5.0]].view()),
            Err(Error::DegenerateInput(_))
        ));
        assert!(fit_center_scale(array![[5.0]].view()).is_err());
    }

    #[test]
    fn apply_examples() {
        let s = NormalizationStats {
            mean: vec![1.0],
            scale: 1.0,
        };
        assert_eq!(apply_center_scale(&s, &[0.0]).unwrap(), vec![-1.0]);
        let s = NormalizationStats {
            mean: vec![0.0, 0.0],
            scale: 2.0,
        };
        assert_eq!(apply_center_scale(&s, &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert!(matches!(
            apply_center_scale(&s, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn fitted_outputs_are_centred_with_unit_average_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((50, 7), |_| rng.random_range(-3.0..5.0));
        let stats = fit_center_scale(x.view()).unwrap();
        let out: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| apply_center_scale(&stats, r.as_slice().unwrap()).unwrap())
            .collect();
        for j in 0..7 {
            let m: f64 = out.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-10);
        }
        let avg: f64 = out
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / 50.0;
        assert!((avg - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zscore_normalizer() {
        let x = array![[1.0, 3.0], [3.0, 3.0]];
        let n = Normalizer::fit(NormalizationKind::ZScore, x.view()).unwrap();
        let mut v = [3.0, 4.0];
        n.apply_in_place(&mut v).unwrap();
        assert_eq!(v, [1.0, 1.0]);
        let id = Normalizer::fit(NormalizationKind::Unnorm, x.view()).unwrap();
        let mut v = [3.0, 4.0];
        id.apply_in_place(&mut v).unwrap();
        assert_eq!(v, [3.0, 4.0]);
    }
}

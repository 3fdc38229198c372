//! Pairwise similarity measures and similarity matrices.
//!
//! Linear and RBF measures are PSD kernels on vectors (grids are flattened).
//! Rigid and deformable measures maximize cell-grid cross correlation over
//! integer shifts and are generally indefinite. The deformable measure
//! deforms its second argument only, so `s(x, y) != s(y, x)` in general.

use std::borrow::Borrow;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::par::{self, Execution};

/// One representation of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Vector(Vec<f64>),
    Grid(FeatureGrid),
}

impl Representation {
    /// The vector, or the row-major flattening of the grid.
    pub fn as_flat(&self) -> &[f64] {
        match self {
            Representation::Vector(v) => v,
            Representation::Grid(g) => g.as_flat(),
        }
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        match self {
            Representation::Vector(v) => v,
            Representation::Grid(g) => g.as_flat_mut(),
        }
    }

    pub fn as_grid(&self) -> Option<&FeatureGrid> {
        match self {
            Representation::Grid(g) => Some(g),
            Representation::Vector(_) => None,
        }
    }
}

impl From<Vec<f64>> for Representation {
    fn from(v: Vec<f64>) -> Self {
        Representation::Vector(v)
    }
}

impl From<FeatureGrid> for Representation {
    fn from(g: FeatureGrid) -> Self {
        Representation::Grid(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimilarityMeasure {
    Linear,
    /// `exp(-gamma * |x - y|^2)`
    Rbf {
        gamma: f64,
    },
    /// Maximal cross correlation over global shifts within `h_r` cells.
    Rigid {
        h_r: usize,
    },
    /// Rigid shift plus per-cell local displacements within `h_l` cells,
    /// each penalized by `lambda * |z|^2`.
    Deformable {
        h_r: usize,
        h_l: usize,
        lambda: f64,
    },
}

impl SimilarityMeasure {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SimilarityMeasure::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::InvalidParameter(format!("RBF gamma must be positive, got {gamma}")),
            ),
            SimilarityMeasure::Deformable { lambda, .. }
                if !(lambda >= 0.0 && lambda.is_finite()) =>
            {
                Err(Error::InvalidParameter(format!(
                    "deformation penalty must be nonnegative, got {lambda}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// True when `s(x, y) == s(y, x)` for all inputs.
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, SimilarityMeasure::Deformable { h_l, .. } if *h_l > 0)
    }

    /// True for measures whose Gram matrices are always PSD.
    pub fn is_psd(&self) -> bool {
        matches!(
            self,
            SimilarityMeasure::Linear
                | SimilarityMeasure::Rbf { .. }
                | SimilarityMeasure::Rigid { h_r: 0 }
                | SimilarityMeasure::Deformable { h_r: 0, h_l: 0, .. }
        )
    }

    pub fn needs_grid(&self) -> bool {
        matches!(
            self,
            SimilarityMeasure::Rigid { .. } | SimilarityMeasure::Deformable { .. }
        )
    }

    pub fn eval(&self, x: &Representation, y: &Representation) -> Result<f64> {
        match *self {
            SimilarityMeasure::Linear => {
                check_flat_shapes(x, y)?;
                eval_linear(x.as_flat(), y.as_flat())
            }
            SimilarityMeasure::Rbf { gamma } => {
                check_flat_shapes(x, y)?;
                eval_rbf(x.as_flat(), y.as_flat(), gamma)
            }
            SimilarityMeasure::Rigid { h_r } => {
                let (gx, gy) = grids(x, y)?;
                eval_rigid(gx, gy, h_r)
            }
            SimilarityMeasure::Deformable { h_r, h_l, lambda } => {
                let (gx, gy) = grids(x, y)?;
                eval_deformable(gx, gy, h_r, h_l, lambda)
            }
        }
    }
}

fn check_flat_shapes(x: &Representation, y: &Representation) -> Result<()> {
    if let (Representation::Grid(a), Representation::Grid(b)) = (x, y) {
        if (a.rows(), a.cols(), a.cell_dim()) != (b.rows(), b.cols(), b.cell_dim()) {
            return Err(Error::RepresentationMismatch(format!(
                "flattened grids differ in shape: {}x{}x{} vs {}x{}x{}",
                a.rows(),
                a.cols(),
                a.cell_dim(),
                b.rows(),
                b.cols(),
                b.cell_dim()
            )));
        }
    }
    Ok(())
}

fn grids<'a>(
    x: &'a Representation,
    y: &'a Representation,
) -> Result<(&'a FeatureGrid, &'a FeatureGrid)> {
    match (x.as_grid(), y.as_grid()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::RepresentationMismatch(
            "rigid and deformable measures need cell grids".into(),
        )),
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn eval_linear(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(dot(x, y))
}

pub fn eval_rbf(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * d2).exp())
}

/// Cell-by-offset correlation table: entry `(c, d)` is the dot product of
/// cell `c` of `gx` with cell `c + d` of `gy` (zero outside `gy`), for
/// offsets `d` in `[-reach, reach]^2`.
struct Correlation {
    reach: isize,
    width: usize,
    values: Vec<f64>,
}

impl Correlation {
    fn new(gx: &FeatureGrid, gy: &FeatureGrid, reach: usize) -> Result<Self> {
        if gx.cell_dim() != gy.cell_dim() {
            return Err(Error::CellDimMismatch {
                left: gx.cell_dim(),
                right: gy.cell_dim(),
            });
        }
        let reach = reach as isize;
        let width = (2 * reach + 1) as usize;
        let offsets = width * width;
        let mut values = vec![0.0; gx.rows() * gx.cols() * offsets];
        for r in 0..gx.rows() {
            for c in 0..gx.cols() {
                let xc = gx.cell(r, c);
                let base = (r * gx.cols() + c) * offsets;
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        if let Some(yc) = gy.cell_at(r as isize + dy, c as isize + dx) {
                            let k = ((dy + reach) as usize) * width + (dx + reach) as usize;
                            values[base + k] = dot(xc, yc);
                        }
                    }
                }
            }
        }
        Ok(Correlation {
            reach,
            width,
            values,
        })
    }

    #[inline]
    fn cells(&self) -> usize {
        self.values.len() / (self.width * self.width)
    }

    #[inline]
    fn get(&self, cell: usize, dy: isize, dx: isize) -> f64 {
        let k = ((dy + self.reach) as usize) * self.width + (dx + self.reach) as usize;
        self.values[cell * self.width * self.width + k]
    }

    fn max_over_shifts(&self, h_r: isize, h_l: isize, lambda: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for zy in -h_r..=h_r {
            for zx in -h_r..=h_r {
                let mut total = 0.0;
                for cell in 0..self.cells() {
                    let mut local = f64::NEG_INFINITY;
                    for ly in -h_l..=h_l {
                        for lx in -h_l..=h_l {
                            let penalty = lambda * (ly * ly + lx * lx) as f64;
                            let v = self.get(cell, zy + ly, zx + lx) - penalty;
                            if v > local {
                                local = v;
                            }
                        }
                    }
                    total += local;
                }
                if total > best {
                    best = total;
                }
            }
        }
        best
    }
}

/// Maximal cross correlation of two grids over shifts `|z_x|, |z_y| <= h_r`
/// applied to `gy`, with zero padding.
pub fn eval_rigid(gx: &FeatureGrid, gy: &FeatureGrid, h_r: usize) -> Result<f64> {
    let table = Correlation::new(gx, gy, h_r)?;
    Ok(table.max_over_shifts(h_r as isize, 0, 0.0))
}

/// Rigid correlation where each cell of `gy` may additionally move by up to
/// `h_l` cells, paying `lambda * |z_l|^2`.
pub fn eval_deformable(
    gx: &FeatureGrid,
    gy: &FeatureGrid,
    h_r: usize,
    h_l: usize,
    lambda: f64,
) -> Result<f64> {
    let table = Correlation::new(gx, gy, h_r + h_l)?;
    Ok(table.max_over_shifts(h_r as isize, h_l as isize, lambda))
}

/// `values[i][j] = measure(rows[i], cols[j])`.
pub fn gram<R>(measure: &SimilarityMeasure, rows: &[R], cols: &[R]) -> Result<Array2<f64>>
where
    R: Borrow<Representation> + Sync,
{
    gram_with(measure, rows, cols, Execution::default())
}

pub fn gram_with<R>(
    measure: &SimilarityMeasure,
    rows: &[R],
    cols: &[R],
    exec: Execution,
) -> Result<Array2<f64>>
where
    R: Borrow<Representation> + Sync,
{
    measure.validate()?;
    let mut out = Array2::zeros((rows.len(), cols.len()));
    par::try_fill_rows(exec, &mut out, |i, row| {
        let x = rows[i].borrow();
        for (v, y) in row.iter_mut().zip(cols) {
            *v = measure.eval(x, y.borrow())?;
        }
        Ok(())
    })?;
    Ok(out)
}

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &Array2<f64>) -> Array2<f64> {
    assert_eq!(s.nrows(), s.ncols(), "symmetrize needs a square matrix");
    (s + &s.t()) * 0.5
}

/// Similarity values tagged with the exemplar ids of rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

impl SimilarityMatrix {
    /// Similarities between `data[row_ids[i]]` and `data[col_ids[j]]`.
    pub fn compute<R>(
        measure: &SimilarityMeasure,
        data: &[R],
        row_ids: &[usize],
        col_ids: &[usize],
    ) -> Result<Self>
    where
        R: Borrow<Representation> + Sync,
    {
        let pick = |ids: &[usize]| -> Result<Vec<&Representation>> {
            ids.iter()
                .map(|&i| {
                    data.get(i).map(Borrow::borrow).ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "exemplar id {i} out of range ({})",
                            data.len()
                        ))
                    })
                })
                .collect()
        };
        let rows = pick(row_ids)?;
        let cols = pick(col_ids)?;
        Ok(SimilarityMatrix {
            values: gram(measure, &rows, &cols)?,
            row_ids: row_ids.to_vec(),
            col_ids: col_ids.to_vec(),
        })
    }
}

//! Tensor-product cubic B-spline basis on a lattice.

use nalgebra::{DMatrix, DVector};

use crate::error::{PingError, Result};
use crate::grid::GridSpec;

const ORDER: usize = 4;

/// Clamped, equally spaced cubic B-splines along each axis and their tensor product.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    grid: GridSpec,
    per_axis: usize,
    // axis -> coordinate -> basis values
    values: Vec<Vec<Vec<f64>>>,
}

fn clamped_knots(per_axis: usize, hi: f64) -> Vec<f64> {
    let interior = per_axis - ORDER;
    let mut knots = vec![0.0; ORDER];
    for i in 1..=interior {
        knots.push(hi * i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(hi, ORDER));
    knots
}

/// Cox–de Boor evaluation of all `per_axis` basis functions at `x`.
fn evaluate(knots: &[f64], per_axis: usize, x: f64) -> Vec<f64> {
    let hi = *knots.last().unwrap();
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            // right end belongs to the last non-degenerate span
            let at_end = x >= hi && knots[i] < knots[i + 1] && knots[i + 1] >= hi;
            if inside || at_end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for k in 2..=ORDER {
        let mut next = vec![0.0; knots.len() - k];
        for (i, slot) in next.iter_mut().enumerate() {
            let mut v = 0.0;
            let d1 = knots[i + k - 1] - knots[i];
            if d1 > 0.0 {
                v += (x - knots[i]) / d1 * b[i];
            }
            let d2 = knots[i + k] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + k] - x) / d2 * b[i + 1];
            }
            *slot = v;
        }
        b = next;
    }
    b.truncate(per_axis);
    b
}

impl BSplineBasis {
    /// `per_axis` functions along each axis, `per_axis^d` in total.
    pub fn new(grid: &GridSpec, per_axis: usize) -> Result<Self> {
        if per_axis < ORDER {
            return Err(PingError::Parameter(format!(
                "cubic B-splines need at least {ORDER} functions per axis, got {per_axis}"
            )));
        }
        let values = grid
            .dims()
            .iter()
            .map(|&n| {
                let hi = (n.max(2) - 1) as f64;
                let knots = clamped_knots(per_axis, hi);
                (0..n).map(|c| evaluate(&knots, per_axis, c as f64)).collect()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            per_axis,
            values,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    /// Total number of tensor-product functions `J`.
    pub fn len(&self) -> usize {
        self.per_axis.pow(self.grid.ndim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values of the per-axis functions at coordinate `c` of `axis`.
    pub fn axis_values(&self, axis: usize, c: usize) -> &[f64] {
        &self.values[axis][c]
    }

    /// `Z_j(v)` for lattice point `v` (linear index).
    pub fn value(&self, j: usize, v: usize) -> f64 {
        let c = self.grid.coords(v);
        let mut rem = j;
        let mut out = 1.0;
        for axis in (0..self.grid.ndim()).rev() {
            let b = rem % self.per_axis;
            rem /= self.per_axis;
            out *= self.values[axis][c[axis]][b];
        }
        out
    }

    /// `(Z_1(v), ..., Z_J(v))`.
    pub fn row(&self, v: usize) -> DVector<f64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|j| self.value(j, v)))
    }

    /// Dense `n × J` design matrix.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.grid.len(), self.len(), |v, j| self.value(j, v))
    }
}

/// `Σ_{j,l} Z_j(v) Z_l(v') Σ_{jl}`.
pub fn nonstationary_covariance(
    v: usize,
    w: usize,
    basis: &BSplineBasis,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let j = basis.len();
    if sigma.nrows() != j || sigma.ncols() != j {
        return Err(PingError::Dimension(format!(
            "basis has {j} functions but covariance is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if v >= basis.grid().len() || w >= basis.grid().len() {
        return Err(PingError::Dimension("lattice point out of range".into()));
    }
    let zv = basis.row(v);
    let zw = basis.row(w);
    Ok(zv.dot(&(sigma * zw)))
}

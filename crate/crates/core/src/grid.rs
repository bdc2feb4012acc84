//! Regular lattices with unit spacing.

use serde::{Deserialize, Serialize};

use crate::error::{PingError, Result};

/// Maximum supported lattice dimension.
pub const MAX_DIM: usize = 3;

/// A regular lattice in one to three dimensions with unit spacing.
///
/// Points are stored row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dims: Vec<usize>,
}

impl GridSpec {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIM {
            return Err(PingError::Grid(format!(
                "dimension must be 1..={MAX_DIM}, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(PingError::Grid(format!("zero-length axis in {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    /// `n^d` cube.
    pub fn cube(n: usize, d: usize) -> Result<Self> {
        Self::new(&vec![n; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index of a multi-index.
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.ndim());
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    /// Multi-index of a linear index, padded with zeros to `MAX_DIM`.
    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for axis in (0..self.ndim()).rev() {
            let n = self.dims[axis];
            out[axis] = idx % n;
            idx /= n;
        }
        out
    }

    /// Coordinates as floating point lattice positions.
    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        [c[0] as f64, c[1] as f64, c[2] as f64]
    }

    /// Euclidean distance between two lattice points.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.coords(a), self.coords(b));
        (0..self.ndim())
            .map(|k| {
                let d = ca[k] as f64 - cb[k] as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Grid with every axis multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> GridSpec {
        GridSpec {
            dims: self.dims.iter().map(|&n| n * factor).collect(),
        }
    }

    /// Indices of points lying at least `margin` cells away from every face.
    pub fn interior_mask(&self, margin: usize) -> Vec<bool> {
        (0..self.len())
            .map(|i| {
                let c = self.coords(i);
                (0..self.ndim()).all(|k| c[k] >= margin && c[k] + margin < self.dims[k])
            })
            .collect()
    }

    /// DFT angular frequency `2πk/n` per axis for the frequency multi-index at `idx`.
    pub fn frequency(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        let mut w = [0.0; MAX_DIM];
        for k in 0..self.ndim() {
            w[k] = 2.0 * std::f64::consts::PI * c[k] as f64 / self.dims[k] as f64;
        }
        w
    }

    /// Linear index of the conjugate frequency `-k mod n`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let c = self.coords(idx);
        let mut out = 0;
        for k in 0..self.ndim() {
            let n = self.dims[k];
            out = out * n + (n - c[k]) % n;
        }
        out
    }

    /// True when every coordinate of the frequency is 0 or π.
    pub fn is_self_conjugate(&self, idx: usize) -> bool {
        self.conjugate_index(idx) == idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = GridSpec::new(&[3, 4, 5]).unwrap();
        for i in 0..g.len() {
            let c = g.coords(i);
            assert_eq!(g.index(&c[..3]), i);
        }
        assert_eq!(g.coords(1), [0, 0, 1]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridSpec::new(&[]).is_err());
        assert!(GridSpec::new(&[2, 0]).is_err());
        assert!(GridSpec::new(&[2, 2, 2, 2]).is_err());
    }

    #[test]
    fn self_conjugate_set() {
        let even = GridSpec::new(&[4, 4]).unwrap();
        let count = (0..even.len()).filter(|&i| even.is_self_conjugate(i)).count();
        assert_eq!(count, 4);
        let odd = GridSpec::new(&[5, 4]).unwrap();
        let count = (0..odd.len()).filter(|&i| odd.is_self_conjugate(i)).count();
        assert_eq!(count, 2);
    }

    #[test]
    fn interior() {
        let g = GridSpec::cube(4, 3).unwrap();
        let m = g.interior_mask(1);
        assert_eq!(m.iter().filter(|&&b| b).count(), 8);
    }
}

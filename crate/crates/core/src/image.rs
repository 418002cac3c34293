//! Voxel-by-readout image sequences.
//!
//! Voxel `i` of a `side x side` image is pixel `(y, x) = (i / side, i % side)`,
//! so a column of the matrix is one image stored row-major.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    side: usize,
    data: Array2<Complex64>,
}

impl ImageSequence {
    pub fn new(side: usize, data: Array2<Complex64>) -> Result<Self> {
        if data.nrows() != side * side {
            return Err(Error::Shape(format!(
                "{} voxel rows do not form a {side}x{side} image",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Shape("image sequence has no readouts".into()));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("image sequence"));
        }
        Ok(Self { side, data })
    }

    pub fn zeros(side: usize, readouts: usize) -> Self {
        Self {
            side,
            data: Array2::zeros((side * side, readouts)),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn voxels(&self) -> usize {
        self.data.nrows()
    }

    pub fn readouts(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn voxel(&self, i: usize) -> ArrayView1<'_, Complex64> {
        self.data.row(i)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

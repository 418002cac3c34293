//! Projection of an image sequence onto the voxel-wise Bloch model.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use super::wavelet::{haar2, hard_threshold, ihaar2};
use crate::dictionary::{BlochDictionary, DensityModel};
use crate::error::{Error, Result};

/// Per-voxel best atom and the coefficient on its normalized response
/// (the pseudo-density), so voxel `i` is `coefficient[i] * eta[index[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub index: Vec<usize>,
    pub coefficient: Vec<Complex64>,
}

// Pin the sign of zero so that algebraically equal paths compare bitwise.
fn clean(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

impl Projection {
    /// Density `rho_i = coefficient_i / ||D_k||`.
    pub fn densities(&self, dict: &BlochDictionary) -> Vec<Complex64> {
        self.index
            .iter()
            .zip(&self.coefficient)
            .map(|(&k, &c)| c / dict.norm(k))
            .collect()
    }

    /// The model image sequence `rho_i D_{k_i}`.
    pub fn synthesize(&self, dict: &BlochDictionary) -> Array2<Complex64> {
        let n = self.index.len();
        let mut x = Array2::zeros((n, dict.sequence_len()));
        let rho = self.densities(dict);
        for ((mut row, &k), &r) in x.outer_iter_mut().zip(&self.index).zip(&rho) {
            if r != Complex64::new(0.0, 0.0) {
                for (dst, d) in row.iter_mut().zip(dict.atom(k)) {
                    *dst = r * d;
                }
            }
        }
        x
    }
}

/// Coefficients at or below this fraction of the largest one in the image
/// are set to zero. FFT round trips leave background voxels with densities
/// around 1e-16 of the signal, which would otherwise be fitted to arbitrary
/// atoms.
pub const BACKGROUND_FLOOR: f64 = 1e-10;

fn zero_floor(coefficient: &mut [Complex64]) {
    let max = coefficient.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = BACKGROUND_FLOOR * max;
    for c in coefficient.iter_mut() {
        if c.norm() <= floor {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

/// Nearest model point voxel by voxel, under the real non-negative or the
/// complex density model.
pub fn project(x: ArrayView2<Complex64>, dict: &BlochDictionary, model: DensityModel) -> Result<Projection> {
    let matches = dict.best_matches(x, model)?;
    let index = matches.iter().map(|m| m.index).collect();
    let mut coefficient: Vec<Complex64> = matches
        .iter()
        .map(|m| match model {
            DensityModel::Real => Complex64::new(clean(m.score.re.max(0.0)), 0.0),
            DensityModel::Complex => Complex64::new(clean(m.score.re), clean(m.score.im)),
        })
        .collect();
    zero_floor(&mut coefficient);
    Ok(Projection { index, coefficient })
}

/// Projection onto per-voxel Bloch responses with a pseudo-density that is
/// `keep`-sparse in the Haar domain. The correlations are clamped at zero
/// before thresholding and the thresholded map is clamped again, so this is
/// the exact projection only when neither clamp is active.
pub fn project_regularized(
    x: ArrayView2<Complex64>,
    side: usize,
    dict: &BlochDictionary,
    keep: usize,
) -> Result<Projection> {
    let n = side * side;
    if x.nrows() != n {
        return Err(Error::Shape(format!("{} voxels for a {side}x{side} image", x.nrows())));
    }
    if keep > n {
        return Err(Error::InvalidParameter(format!(
            "cannot retain {keep} wavelet coefficients of a {n}-voxel image"
        )));
    }
    let mut p = project(x, dict, DensityModel::Real)?;
    if keep == n {
        return Ok(p);
    }
    let z = Array2::from_shape_fn((side, side), |(r, c)| p.coefficient[r * side + c].re);
    let w = haar2(z.view())?;
    let kept = hard_threshold(w.as_slice().expect("standard layout"), keep);
    let kept = Array2::from_shape_vec((side, side), kept).expect("square");
    let rho = ihaar2(kept.view())?;
    for (c, &v) in p.coefficient.iter_mut().zip(rho.iter()) {
        *c = Complex64::new(clean(v.max(0.0)), 0.0);
    }
    zero_floor(&mut p.coefficient);
    Ok(p)
}

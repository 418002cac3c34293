//! Orthonormal full-depth 2D Haar transform (Mallat pyramid) and hard
//! thresholding.

use ndarray::{Array2, ArrayView2};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::sampling::check_side;

fn check_square(a: &ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Shape(format!("wavelet input is {r}x{c}, expected a square")));
    }
    check_side(r)?;
    Ok(r)
}

fn haar_step(v: &mut [f64], tmp: &mut [f64]) {
    let h = v.len() / 2;
    for i in 0..h {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        tmp[i] = (a + b) * FRAC_1_SQRT_2;
        tmp[h + i] = (a - b) * FRAC_1_SQRT_2;
    }
    v.copy_from_slice(&tmp[..v.len()]);
}

fn haar_unstep(v: &mut [f64], tmp: &mut [f64]) {
    let h = v.len() / 2;
    for i in 0..h {
        let (s, d) = (v[i], v[h + i]);
        tmp[2 * i] = (s + d) * FRAC_1_SQRT_2;
        tmp[2 * i + 1] = (s - d) * FRAC_1_SQRT_2;
    }
    v.copy_from_slice(&tmp[..v.len()]);
}

/// Apply `f` to every row and then every column of the top-left `n x n`
/// block.
fn separable(c: &mut Array2<f64>, n: usize, f: fn(&mut [f64], &mut [f64])) {
    let mut line = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for r in 0..n {
        for (j, v) in line.iter_mut().enumerate() {
            *v = c[[r, j]];
        }
        f(&mut line, &mut tmp);
        for (j, v) in line.iter().enumerate() {
            c[[r, j]] = *v;
        }
    }
    for col in 0..n {
        for (i, v) in line.iter_mut().enumerate() {
            *v = c[[i, col]];
        }
        f(&mut line, &mut tmp);
        for (i, v) in line.iter().enumerate() {
            c[[i, col]] = *v;
        }
    }
}

pub fn haar2(image: ArrayView2<f64>) -> Result<Array2<f64>> {
    let side = check_square(&image)?;
    let mut c = image.to_owned();
    let mut n = side;
    while n > 1 {
        separable(&mut c, n, haar_step);
        n /= 2;
    }
    Ok(c)
}

pub fn ihaar2(coefficients: ArrayView2<f64>) -> Result<Array2<f64>> {
    let side = check_square(&coefficients)?;
    let mut c = coefficients.to_owned();
    let mut n = 2;
    while n <= side {
        // Rows and columns commute, so undoing in the same order is exact.
        separable(&mut c, n, haar_unstep);
        n *= 2;
    }
    Ok(c)
}

/// Keep the `keep` largest-magnitude entries; on equal magnitude the lower
/// index wins.
pub fn hard_threshold(c: &[f64], keep: usize) -> Vec<f64> {
    if keep >= c.len() {
        return c.to_vec();
    }
    let mut out = vec![0.0; c.len()];
    if keep == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.select_nth_unstable_by(keep - 1, |&a, &b| {
        c[b].abs().total_cmp(&c[a].abs()).then(a.cmp(&b))
    });
    for &i in &order[..keep] {
        out[i] = c[i];
    }
    out
}

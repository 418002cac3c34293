//! Unitary 2D DFT on square power-of-two images.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub(crate) fn check_side(side: usize) -> Result<()> {
    if side == 0 || !side.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(side));
    }
    Ok(())
}

/// Cached plans for a `side x side` unitary DFT. Images are row-major with
/// `k_y` (rows) as the slow axis.
#[derive(Clone)]
pub struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("side", &self.side).finish()
    }
}

impl Fft2 {
    pub fn new(side: usize) -> Result<Self> {
        check_side(side)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            side,
            forward: planner.plan_fft_forward(side),
            inverse: planner.plan_fft_inverse(side),
            scale: 1.0 / side as f64,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.side;
        assert_eq!(data.len(), n * n, "image buffer has the wrong size");
        // Rows are contiguous; batch them in one call.
        plan.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                column[y] = data[y * n + x];
            }
            plan.process(&mut column);
            for y in 0..n {
                data[y * n + x] = column[y] * self.scale;
            }
        }
    }

    /// In-place forward transform, scaled by `1/sqrt(N)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// In-place inverse transform, scaled by `1/sqrt(N)`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }
}

fn square(image: &Array2<Complex64>) -> Result<usize> {
    let (r, c) = image.dim();
    if r != c {
        return Err(Error::Shape(format!("image is {r}x{c}, expected square")));
    }
    check_side(r)?;
    Ok(r)
}

/// Unitary 2D DFT of a square image.
pub fn dft2(image: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let side = square(image)?;
    let mut buf: Vec<Complex64> = image.iter().copied().collect();
    Fft2::new(side)?.forward(&mut buf);
    Ok(Array2::from_shape_vec((side, side), buf).expect("shape preserved"))
}

/// Inverse of [`dft2`].
pub fn idft2(kspace: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let side = square(kspace)?;
    let mut buf: Vec<Complex64> = kspace.iter().copied().collect();
    Fft2::new(side)?.inverse(&mut buf);
    Ok(Array2::from_shape_vec((side, side), buf).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream_rng, Stream};

    fn random_image(side: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = stream_rng(seed, Stream::Test);
        Array2::from_shape_fn((side, side), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn energy(a: &Array2<Complex64>) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum()
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut img = Array2::zeros((8, 8));
        img[[0, 0]] = Complex64::new(1.0, 0.0);
        let k = dft2(&img).unwrap();
        for v in k.iter() {
            assert!((v - Complex64::new(0.125, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn parseval_and_roundtrip() {
        for side in [2, 8, 32] {
            let img = random_image(side, side as u64);
            let k = dft2(&img).unwrap();
            assert!((energy(&k) - energy(&img)).abs() < 1e-12 * energy(&img));
            let back = idft2(&k).unwrap();
            let err: f64 = back.iter().zip(img.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let side = 4;
        let img = random_image(side, 11);
        let k = dft2(&img).unwrap();
        let n = side as f64;
        for ky in 0..side {
            for kx in 0..side {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..side {
                    for x in 0..side {
                        let ph = -2.0 * std::f64::consts::PI * ((ky * y + kx * x) as f64) / n;
                        acc += img[[y, x]] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc / n - k[[ky, kx]]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(dft2(&Array2::zeros((4, 8))), Err(Error::Shape(_))));
        assert!(matches!(dft2(&Array2::zeros((6, 6))), Err(Error::NotPowerOfTwo(6))));
        assert!(Fft2::new(0).is_err());
    }
}

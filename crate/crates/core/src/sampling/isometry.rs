//! Monte Carlo check of the single-voxel chord isometry: for a `p x L`
//! alias matrix `U` and i.i.d. uniform shifts `z_i`, the vector
//! `z_i = (1/p) sum_k U[k, i] exp(-j 2 pi z_i k / p)` satisfies
//! `E[p^2 |z|^2] = |U|_F^2`, with exponential tails controlled by the
//! flatness of the rows of `U`.

use ndarray::ArrayView2;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

use crate::dictionary::chord_flatness;
use crate::error::{ensure_finite, Error, Result};
use crate::rng::{stream_rng, Stream};

/// Ratios `p^2 |z|^2 / |U|_F^2`, one per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryStats {
    pub undersampling: usize,
    /// Largest flatness over the nonzero rows of `U`.
    pub flatness: f64,
    pub ratios: Vec<f64>,
}

impl IsometryStats {
    pub fn trials(&self) -> usize {
        self.ratios.len()
    }

    pub fn mean(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }

    /// Empirical `P(|ratio - 1| > eps)`.
    pub fn tail_frequency(&self, eps: f64) -> f64 {
        let n = self.ratios.iter().filter(|r| (*r - 1.0).abs() > eps).count();
        n as f64 / self.ratios.len() as f64
    }

    pub fn tail_bound(&self, eps: f64) -> f64 {
        tail_bound(eps, self.undersampling, self.flatness)
    }
}

/// `2 exp(-eps^2 / (3 p lambda^2))`.
pub fn tail_bound(eps: f64, undersampling: usize, flatness: f64) -> f64 {
    2.0 * (-eps * eps / (3.0 * undersampling as f64 * flatness * flatness)).exp()
}

/// `p^2 |z|^2 / |U|_F^2` for one explicit shift vector.
pub fn chord_ratio(u: ArrayView2<Complex64>, shifts: &[usize]) -> Result<f64> {
    let (p, l) = u.dim();
    if shifts.len() != l {
        return Err(Error::Shape(format!("{} shifts for {} columns", shifts.len(), l)));
    }
    let fro: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if fro == 0.0 {
        return Err(Error::InvalidParameter("alias matrix is zero".into()));
    }
    let mut z2 = 0.0;
    for (i, &zeta) in shifts.iter().enumerate() {
        let zi: Complex64 = (0..p)
            .map(|k| u[[k, i]] * Complex64::from_polar(1.0, -2.0 * PI * ((zeta * k) % p) as f64 / p as f64))
            .sum::<Complex64>()
            / p as f64;
        z2 += zi.norm_sqr();
    }
    Ok((p * p) as f64 * z2 / fro)
}

pub fn chord_isometry_mc(u: ArrayView2<Complex64>, trials: usize, seed: u64) -> Result<IsometryStats> {
    let (p, l) = u.dim();
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    if p == 0 || l == 0 {
        return Err(Error::Shape(format!("alias matrix is {p}x{l}")));
    }
    for v in u.iter() {
        ensure_finite(v.re, "alias matrix")?;
        ensure_finite(v.im, "alias matrix")?;
    }
    let fro: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if fro == 0.0 {
        return Err(Error::InvalidParameter("alias matrix is zero".into()));
    }
    let mut flatness: f64 = 0.0;
    for row in u.rows() {
        if row.iter().any(|v| v.norm_sqr() > 0.0) {
            flatness = flatness.max(chord_flatness(&row.to_vec())?);
        }
    }
    // Each column contributes one of p energies depending on its shift, so
    // tabulate them once: table[i * p + a] = |sum_k U[k,i] w^(a k)|^2 / fro.
    let mut table = vec![0.0; p * l];
    for i in 0..l {
        for a in 0..p {
            let s: Complex64 = (0..p)
                .map(|k| u[[k, i]] * Complex64::from_polar(1.0, -2.0 * PI * ((a * k) % p) as f64 / p as f64))
                .sum();
            table[i * p + a] = s.norm_sqr() / fro;
        }
    }
    let mut rng = stream_rng(seed, Stream::MonteCarlo);
    let ratios = (0..trials)
        .map(|_| (0..l).map(|i| table[i * p + rng.random_range(0..p)]).sum())
        .collect();
    Ok(IsometryStats {
        undersampling: p,
        flatness,
        ratios,
    })
}

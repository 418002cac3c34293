use num_complex::Complex64;

use crate::error::{Error, Result};

/// `20 log10(|x| / |x - x_hat|)` over the masked entries, `+inf` on exact
/// recovery.
pub fn ser_db(x_true: &[Complex64], x_hat: &[Complex64], mask: &[bool]) -> Result<f64> {
    if x_true.len() != x_hat.len() || x_true.len() != mask.len() {
        return Err(Error::Shape(format!(
            "SER inputs have lengths {}, {} and mask {}",
            x_true.len(),
            x_hat.len(),
            mask.len()
        )));
    }
    let mut signal = 0.0;
    let mut error = 0.0;
    let mut any = false;
    for ((a, b), &m) in x_true.iter().zip(x_hat).zip(mask) {
        if m {
            any = true;
            signal += a.norm_sqr();
            error += (a - b).norm_sqr();
        }
    }
    if !any {
        return Err(Error::InvalidParameter("SER mask selects nothing".into()));
    }
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

/// [`ser_db`] for real maps.
pub fn ser_db_real(x_true: &[f64], x_hat: &[f64], mask: &[bool]) -> Result<f64> {
    let a: Vec<Complex64> = x_true.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let b: Vec<Complex64> = x_hat.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    ser_db(&a, &b, mask)
}

/// Voxel mask expanded to every readout of a row-major `voxels x readouts`
/// buffer.
pub fn expand_mask(mask: &[bool], readouts: usize) -> Vec<bool> {
    mask.iter()
        .flat_map(|&m| std::iter::repeat_n(m, readouts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn examples() {
        let x = c(&[3.0, 4.0, 0.0]);
        let m = [true, true, false];
        assert_eq!(ser_db(&x, &x, &m).unwrap(), f64::INFINITY);
        assert!(ser_db(&x, &c(&[0.0; 3]), &m).unwrap().abs() < 1e-12);
        // Error of 10% of |x| = 0.5 along a unit direction.
        let xh = c(&[3.0 + 0.3, 4.0 + 0.4, 0.0]);
        assert!((ser_db(&x, &xh, &m).unwrap() - 20.0).abs() < 1e-9);
        // Unmasked entries do not count.
        assert_eq!(ser_db(&x, &c(&[3.0, 4.0, 9.0]), &m).unwrap(), f64::INFINITY);
        assert!(ser_db(&x, &x, &[false; 3]).is_err());
        assert!(ser_db(&x, &x[..2], &m).is_err());
    }

    #[test]
    fn mask_expansion() {
        assert_eq!(expand_mask(&[true, false], 2), vec![true, true, false, false]);
    }
}

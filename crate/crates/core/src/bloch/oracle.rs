//! Reference Bloch response by numerical integration of the continuous
//! equations, used to cross-check the closed-form recursion.
//!
//! In the frame rotating at the Larmor frequency the only remaining field
//! is the off-resonance term, so `gamma * B = (0, 0, w)` with
//! `w = 2 pi df` and the gyromagnetic ratio and main field drop out:
//!
//! ```text
//! dm/dt = w z x m - (mx / T2, my / T2, (mz - 1) / T1)
//! ```
//!
//! The sign of `w` is chosen so that the precession agrees with the
//! counter-clockwise `Rz` used by the recursion. RF pulses are instantaneous
//! rotations about `x`. Integration uses an adaptive Dormand-Prince 5(4) pair.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::{rotate_x, ExcitationSequence, TissueParams, VoxelParams};
use crate::error::{Error, Result};

const MAX_STEPS: usize = 1_000_000;

fn bloch_rhs(m: &[f64; 3], tissue: &TissueParams) -> [f64; 3] {
    // rad per ms
    let w = 2.0 * PI * tissue.off_resonance * 1e-3;
    [
        -w * m[1] - m[0] / tissue.t2,
        w * m[0] - m[1] / tissue.t2,
        -(m[2] - 1.0) / tissue.t1,
    ]
}

fn axpy(y: &[f64; 3], terms: &[(f64, &[f64; 3])]) -> [f64; 3] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += c * k[i];
        }
    }
    out
}

/// Integrate free precession and relaxation for `duration` ms.
fn integrate(
    m0: [f64; 3],
    duration: f64,
    tissue: &TissueParams,
    tol: f64,
) -> Result<[f64; 3]> {
    // Dormand-Prince coefficients.
    const C2: f64 = 1.0 / 5.0;
    const C3: f64 = 3.0 / 10.0;
    const C4: f64 = 4.0 / 5.0;
    const C5: f64 = 8.0 / 9.0;
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // Differences between the 5th- and 4th-order weights.
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;
    let _ = (C2, C3, C4, C5); // autonomous system: stage times unused

    if duration == 0.0 {
        return Ok(m0);
    }
    let mut t = 0.0;
    let mut y = m0;
    let mut h = (duration / 10.0).min(tissue.t2.min(tissue.t1) / 10.0);
    let mut k1 = bloch_rhs(&y, tissue);
    for _ in 0..MAX_STEPS {
        if t >= duration {
            return Ok(y);
        }
        let last = t + h >= duration;
        if last {
            h = duration - t;
        }
        let k2 = bloch_rhs(&axpy(&y, &[(h * A21, &k1)]), tissue);
        let k3 = bloch_rhs(&axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]), tissue);
        let k4 = bloch_rhs(
            &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
            tissue,
        );
        let k5 = bloch_rhs(
            &axpy(
                &y,
                &[(h * A51, &k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)],
            ),
            tissue,
        );
        let k6 = bloch_rhs(
            &axpy(
                &y,
                &[
                    (h * A61, &k1),
                    (h * A62, &k2),
                    (h * A63, &k3),
                    (h * A64, &k4),
                    (h * A65, &k5),
                ],
            ),
            tissue,
        );
        let y_new = axpy(
            &y,
            &[(h * B1, &k1), (h * B3, &k3), (h * B4, &k4), (h * B5, &k5), (h * B6, &k6)],
        );
        let k7 = bloch_rhs(&y_new, tissue);
        let mut err: f64 = 0.0;
        for i in 0..3 {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = tol + tol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::Integrator("non-finite error estimate".into()));
        }
        if err <= 1.0 {
            t = if last { duration } else { t + h };
            y = y_new;
            k1 = k7;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * duration {
            return Err(Error::Integrator(format!(
                "step size collapsed at t = {t} of {duration} ms"
            )));
        }
    }
    Err(Error::Integrator(format!(
        "exceeded {MAX_STEPS} steps over {duration} ms"
    )))
}

/// Readout sequence of `params` under `seq`, computed by integrating the ODE
/// between pulses with local tolerance `tol` and sampling at each echo time.
pub fn ode_oracle_response(
    params: &VoxelParams,
    seq: &ExcitationSequence,
    tol: f64,
) -> Result<Vec<Complex64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    params.tissue.validate()?;
    let tissue = &params.tissue;
    let mut m = [0.0, 0.0, -1.0];
    let mut out = Vec::with_capacity(seq.len());
    for (&alpha, &tr) in seq.flip_angles().iter().zip(seq.repetition_times()) {
        m = rotate_x(integrate(m, tr, tissue, tol)?, alpha);
        let echo = integrate(m, tr / 2.0, tissue, tol)?;
        out.push(params.rho * Complex64::new(echo[0], echo[1]));
    }
    Ok(out)
}

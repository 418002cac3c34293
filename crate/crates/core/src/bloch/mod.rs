//! Discrete-time IR-SSFP magnetization dynamics.
//!
//! Between RF pulses the magnetization relaxes towards equilibrium
//! `(0, 0, 1)` and precesses about `z` at the off-resonance frequency; each
//! pulse is an instantaneous rotation about `x`. Because free precession and
//! relaxation have a closed form, one repetition is
//!
//! ```text
//! m[l] = Rx(a_l) Rz(phi_l) E_l m[l-1] + Rx(a_l) (I - E_l) m_eq
//! ```
//!
//! with `E_l = diag(e^{-TR/T2}, e^{-TR/T2}, e^{-TR/T1})` and
//! `phi_l = 2 pi df TR_l`. The echo is read at `TE_l = TR_l / 2` after the
//! pulse, so the coil sees half a repetition of relaxation and precession.
//!
//! Units: T1, T2 and TR are milliseconds, off-resonance is Hz, flip angles
//! are radians.

pub mod oracle;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};

pub use oracle::ode_oracle_response;

/// Tissue parameters that shape the Bloch response (everything but density).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    /// Longitudinal relaxation time, ms.
    pub t1: f64,
    /// Transverse relaxation time, ms.
    pub t2: f64,
    /// Off-resonance frequency, Hz.
    pub off_resonance: f64,
}

impl TissueParams {
    pub fn new(t1: f64, t2: f64, off_resonance: f64) -> Self {
        Self {
            t1,
            t2,
            off_resonance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.t1, "T1")?;
        ensure_finite(self.t2, "T2")?;
        ensure_finite(self.off_resonance, "off-resonance")?;
        if self.t1 <= 0.0 || self.t2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "relaxation times must be positive (T1={}, T2={})",
                self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// Tissue parameters of one voxel plus its (possibly complex) proton density.
///
/// A zero density marks background; its response is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelParams {
    pub tissue: TissueParams,
    pub rho: Complex64,
}

impl VoxelParams {
    pub fn new(t1: f64, t2: f64, off_resonance: f64, rho: f64) -> Self {
        Self {
            tissue: TissueParams::new(t1, t2, off_resonance),
            rho: Complex64::new(rho, 0.0),
        }
    }

    pub fn with_complex_rho(tissue: TissueParams, rho: Complex64) -> Self {
        Self { tissue, rho }
    }
}

/// Flip angles (radians) and repetition times (ms) of an excitation train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSequence {
    flip_angles: Vec<f64>,
    repetition_times: Vec<f64>,
}

impl ExcitationSequence {
    pub fn new(flip_angles: Vec<f64>, repetition_times: Vec<f64>) -> Result<Self> {
        if flip_angles.is_empty() {
            return Err(Error::InvalidParameter(
                "excitation sequence must have at least one pulse".into(),
            ));
        }
        if flip_angles.len() != repetition_times.len() {
            return Err(Error::Shape(format!(
                "{} flip angles but {} repetition times",
                flip_angles.len(),
                repetition_times.len()
            )));
        }
        for &a in &flip_angles {
            ensure_finite(a, "flip angle")?;
        }
        for &tr in &repetition_times {
            ensure_finite(tr, "repetition time")?;
            if tr <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "repetition time must be positive, got {tr}"
                )));
            }
        }
        Ok(Self {
            flip_angles,
            repetition_times,
        })
    }

    /// Flip angles given in degrees, as at the CLI boundary.
    pub fn from_degrees(flip_degrees: &[f64], repetition_times: Vec<f64>) -> Result<Self> {
        Self::new(
            flip_degrees.iter().map(|d| d.to_radians()).collect(),
            repetition_times,
        )
    }

    /// Constant repetition time.
    pub fn with_constant_tr(flip_angles: Vec<f64>, tr: f64) -> Result<Self> {
        let n = flip_angles.len();
        Self::new(flip_angles, vec![tr; n])
    }

    pub fn len(&self) -> usize {
        self.flip_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_angles.is_empty()
    }

    pub fn flip_angles(&self) -> &[f64] {
        &self.flip_angles
    }

    pub fn repetition_times(&self) -> &[f64] {
        &self.repetition_times
    }

    /// Echo times, fixed at half the repetition time.
    pub fn echo_times(&self) -> Vec<f64> {
        self.repetition_times.iter().map(|tr| tr / 2.0).collect()
    }

    /// The first `len` pulses.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a length-{} sequence to {len}",
                self.len()
            )));
        }
        Ok(Self {
            flip_angles: self.flip_angles[..len].to_vec(),
            repetition_times: self.repetition_times[..len].to_vec(),
        })
    }
}

/// Per-unit magnetization vector `(mx, my, mz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetizationState(pub [f64; 3]);

impl MagnetizationState {
    pub const EQUILIBRIUM: Self = Self([0.0, 0.0, 1.0]);
    pub const INVERTED: Self = Self([0.0, 0.0, -1.0]);

    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transverse(&self) -> Complex64 {
        Complex64::new(self.0[0], self.0[1])
    }
}

pub(crate) const NORM_SLACK: f64 = 1e-9;

fn check_step_inputs(state: &MagnetizationState, tr: f64, tissue: &TissueParams) -> Result<()> {
    tissue.validate()?;
    ensure_finite(tr, "repetition time")?;
    if tr <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "repetition time must be positive, got {tr}"
        )));
    }
    for &c in &state.0 {
        ensure_finite(c, "magnetization")?;
    }
    Ok(())
}

/// Off-resonance phase accumulated over `duration_ms`.
pub(crate) fn precession_phase(off_resonance_hz: f64, duration_ms: f64) -> f64 {
    2.0 * PI * off_resonance_hz * duration_ms * 1e-3
}

/// Relax and precess for `duration` ms, in closed form.
pub(crate) fn free_precession(m: [f64; 3], duration: f64, tissue: &TissueParams) -> [f64; 3] {
    let e2 = (-duration / tissue.t2).exp();
    let e1 = (-duration / tissue.t1).exp();
    let (s, c) = precession_phase(tissue.off_resonance, duration).sin_cos();
    let x = e2 * m[0];
    let y = e2 * m[1];
    [c * x - s * y, s * x + c * y, e1 * m[2] + (1.0 - e1)]
}

pub(crate) fn rotate_x(m: [f64; 3], alpha: f64) -> [f64; 3] {
    let (s, c) = alpha.sin_cos();
    [m[0], c * m[1] - s * m[2], s * m[1] + c * m[2]]
}

/// One repetition: relaxation and precession over `tr` followed by the pulse.
pub fn step_magnetization(
    state: MagnetizationState,
    alpha: f64,
    tr: f64,
    tissue: &TissueParams,
) -> Result<MagnetizationState> {
    check_step_inputs(&state, tr, tissue)?;
    ensure_finite(alpha, "flip angle")?;
    Ok(MagnetizationState(rotate_x(
        free_precession(state.0, tr, tissue),
        alpha,
    )))
}

/// Complex coil sample `mx + j my` at the echo time following a pulse.
pub fn readout(state: MagnetizationState, tr: f64, tissue: &TissueParams) -> Result<Complex64> {
    check_step_inputs(&state, tr, tissue)?;
    let m = free_precession(state.0, tr / 2.0, tissue);
    Ok(Complex64::new(m[0], m[1]))
}

/// Response to `seq` of a unit-density voxel, starting from inversion.
pub fn unit_response(tissue: &TissueParams, seq: &ExcitationSequence) -> Result<Vec<Complex64>> {
    tissue.validate()?;
    let mut state = MagnetizationState::INVERTED;
    let mut out = Vec::with_capacity(seq.len());
    for (&alpha, &tr) in seq.flip_angles().iter().zip(seq.repetition_times()) {
        state = step_magnetization(state, alpha, tr, tissue)?;
        // Only contractive when T2 <= T1; the grid also spans T2 > T1.
        debug_assert!(tissue.t2 > tissue.t1 || state.norm() <= 1.0 + NORM_SLACK);
        out.push(readout(state, tr, tissue)?);
    }
    Ok(out)
}

/// Response of a voxel: its density times the unit-density response.
pub fn simulate_response(params: &VoxelParams, seq: &ExcitationSequence) -> Result<Vec<Complex64>> {
    if params.rho == Complex64::new(0.0, 0.0) {
        return Ok(vec![Complex64::new(0.0, 0.0); seq.len()]);
    }
    ensure_finite(params.rho.re, "proton density")?;
    ensure_finite(params.rho.im, "proton density")?;
    let mut out = unit_response(&params.tissue, seq)?;
    for v in &mut out {
        *v *= params.rho;
    }
    Ok(out)
}

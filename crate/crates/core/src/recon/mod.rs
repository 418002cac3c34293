//! Reconstruction of parameter maps from undersampled k-space.
//!
//! All three algorithms share one voxel-wise projection: the matched filter
//! applies it once to the zero-filled adjoint image, BLIP alternates it with
//! gradient steps on data consistency (projected Landweber), and the oracle
//! applies it to the fully sampled ground truth.

mod projection;
mod wavelet;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::TissueParams;
use crate::dictionary::{BlochDictionary, DensityModel};
use crate::error::{Error, Result};
use crate::image::ImageSequence;
use crate::sampling::{Acquisition, KSpaceSequence};

pub use projection::{project, project_regularized, Projection, BACKGROUND_FLOOR};
pub use wavelet::{haar2, hard_threshold, ihaar2};

/// Retained Haar coefficients for a 256x256 image.
pub const REFERENCE_RETAINED: usize = 12000;

/// Stop once the relative consistency error changes by less than this.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;

/// Reject step sizes below this fraction of `N / M`.
pub const MIN_STEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `mu = 1`.
    Unit,
    /// `mu = N / M`.
    Ratio,
    /// Start from `N / M` and halve until the step is no longer than
    /// `kappa |dX|^2 / |h dX|^2`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    #[default]
    None,
    /// Pseudo-density restricted to `retained` Haar coefficients.
    Wavelet { retained: usize },
}

impl Regularization {
    /// Wavelet regularization keeping the same fraction of coefficients as
    /// 12000 out of 256x256.
    pub fn scaled_wavelet(voxels: usize) -> Self {
        let retained = (REFERENCE_RETAINED as f64 * voxels as f64 / 65536.0).round() as usize;
        Regularization::Wavelet {
            retained: retained.clamp(1, voxels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub max_iters: usize,
    pub kappa: f64,
    pub step_mode: StepMode,
    pub density_model: DensityModel,
    pub regularization: Regularization,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            kappa: 0.99,
            step_mode: StepMode::Adaptive,
            density_model: DensityModel::Real,
            regularization: Regularization::None,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, voxels: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidParameter(format!("kappa {} must lie in (0, 1)", self.kappa)));
        }
        if let Regularization::Wavelet { retained } = self.regularization {
            if retained > voxels {
                return Err(Error::InvalidParameter(format!(
                    "cannot retain {retained} wavelet coefficients of a {voxels}-voxel image"
                )));
            }
            if self.density_model == DensityModel::Complex {
                return Err(Error::InvalidParameter(
                    "wavelet regularization needs the real density model".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub side: usize,
    /// Best atom per voxel; `None` where the estimated density is zero.
    pub atom_index: Vec<Option<usize>>,
    pub theta: Vec<Option<TissueParams>>,
    /// Estimated density; purely real under the real model.
    pub rho: Vec<Complex64>,
    pub x_hat: ImageSequence,
    pub iterations: usize,
    /// `|Y - h X^n|^2 / |Y|^2` after every iteration.
    pub consistency_errors: Vec<f64>,
    /// Accepted step per iteration.
    pub step_sizes: Vec<f64>,
}

impl ReconResult {
    fn from_projection(side: usize, dict: &BlochDictionary, p: &Projection, x_hat: Array2<Complex64>) -> Result<Self> {
        let rho = p.densities(dict);
        let mut atom_index = Vec::with_capacity(rho.len());
        let mut theta = Vec::with_capacity(rho.len());
        for (&k, r) in p.index.iter().zip(&rho) {
            if *r == Complex64::new(0.0, 0.0) {
                atom_index.push(None);
                theta.push(None);
            } else {
                atom_index.push(Some(k));
                theta.push(Some(dict.lut_lookup(k)?));
            }
        }
        Ok(Self {
            side,
            atom_index,
            theta,
            rho,
            x_hat: ImageSequence::new(side, x_hat)?,
            iterations: 0,
            consistency_errors: Vec::new(),
            step_sizes: Vec::new(),
        })
    }

    pub fn t1_map(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.map_or(0.0, |t| t.t1)).collect()
    }

    pub fn t2_map(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.map_or(0.0, |t| t.t2)).collect()
    }

    /// True when the consistency error never increased by more than a
    /// relative `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.consistency_errors
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + slack) + f64::MIN_POSITIVE)
    }
}

fn check_inputs(y: &KSpaceSequence, h: &Acquisition, dict: &BlochDictionary, config: &ReconConfig) -> Result<()> {
    let s = h.schedule();
    if y.samples().dim() != (s.measurements(), s.readouts()) {
        return Err(Error::Shape(format!(
            "k-space is {:?}, schedule expects {}x{}",
            y.samples().dim(),
            s.measurements(),
            s.readouts()
        )));
    }
    if dict.sequence_len() != s.readouts() {
        return Err(Error::Shape(format!(
            "dictionary has {} readouts, schedule has {}",
            dict.sequence_len(),
            s.readouts()
        )));
    }
    for v in y.samples() {
        crate::error::ensure_finite(v.re, "k-space")?;
        crate::error::ensure_finite(v.im, "k-space")?;
    }
    config.validate(s.voxels())
}

fn apply_projection(x: &Array2<Complex64>, side: usize, dict: &BlochDictionary, config: &ReconConfig) -> Result<Projection> {
    match config.regularization {
        Regularization::None => project(x.view(), dict, config.density_model),
        Regularization::Wavelet { retained } => project_regularized(x.view(), side, dict, retained),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecision {
    Accept,
    /// Halve the step and recompute the candidate.
    Shrink,
    /// The candidate equals the current iterate.
    Converged,
}

/// Accept `mu` when it does not exceed
/// `omega = kappa |dX|^2 / |h dX|^2`, given `delta = |dX|^2` and
/// `h_delta = |h dX|^2`. A zero `h_delta` with nonzero `delta` means
/// `omega = inf`.
pub fn step_decision(mu: f64, kappa: f64, delta: f64, h_delta: f64) -> StepDecision {
    if delta == 0.0 {
        StepDecision::Converged
    } else if h_delta == 0.0 || mu <= kappa * delta / h_delta {
        StepDecision::Accept
    } else {
        StepDecision::Shrink
    }
}

fn fixed_step(mode: StepMode, ratio: f64) -> f64 {
    match mode {
        StepMode::Unit => 1.0,
        StepMode::Ratio | StepMode::Adaptive => ratio,
    }
}

fn energy(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

fn relative(residual: f64, y_energy: f64) -> f64 {
    if y_energy > 0.0 {
        residual / y_energy
    } else {
        0.0
    }
}

/// Matched filter: project `mu h^H(Y)` voxel by voxel, with `mu` from the
/// step mode (`Unit` for the classic algorithm, `Ratio` for the rescaled
/// one). The result is one projected Landweber step from zero.
pub fn mrf_reconstruct(
    y: &KSpaceSequence,
    h: &Acquisition,
    dict: &BlochDictionary,
    config: &ReconConfig,
) -> Result<ReconResult> {
    check_inputs(y, h, dict, config)?;
    let side = h.schedule().image_side();
    let mu = fixed_step(config.step_mode, h.schedule().oversampling_ratio());
    let mut x = h.adjoint(y)?.into_data();
    if mu != 1.0 {
        x.mapv_inplace(|v| v * mu);
    }
    let p = apply_projection(&x, side, dict, config)?;
    let x_hat = p.synthesize(dict);
    let hx = h.forward(&ImageSequence::new(side, x_hat.clone())?)?;
    let resid = energy(&(y.samples() - hx.samples()));
    let mut out = ReconResult::from_projection(side, dict, &p, x_hat)?;
    out.iterations = 1;
    out.consistency_errors.push(relative(resid, y.norm_sqr()));
    out.step_sizes.push(mu);
    Ok(out)
}

/// Projected Landweber iterations from `X = 0`.
pub fn blip_reconstruct(
    y: &KSpaceSequence,
    h: &Acquisition,
    dict: &BlochDictionary,
    config: &ReconConfig,
) -> Result<ReconResult> {
    check_inputs(y, h, dict, config)?;
    let side = h.schedule().image_side();
    let ratio = h.schedule().oversampling_ratio();
    let y_energy = y.norm_sqr();

    let (n, l) = (side * side, h.schedule().readouts());
    let mut x: Array2<Complex64> = Array2::zeros((n, l));
    let mut hx: Array2<Complex64> = Array2::zeros(y.samples().dim());
    let mut proj = Projection {
        index: vec![0; n],
        coefficient: vec![Complex64::new(0.0, 0.0); n],
    };
    let mut errors = Vec::new();
    let mut steps = Vec::new();
    let mut previous = 1.0;

    for _ in 0..config.max_iters {
        let residual = KSpaceSequence::new(y.samples() - &hx);
        let grad = h.adjoint(&residual)?.into_data();
        let mut mu = fixed_step(config.step_mode, ratio);
        let mut halvings = 0;
        let (cand, cand_proj, cand_hx, converged) = loop {
            let target = &x + &grad.mapv(|v| v * mu);
            let p = apply_projection(&target, side, dict, config)?;
            let c = p.synthesize(dict);
            let hc = h.forward(&ImageSequence::new(side, c.clone())?)?.samples().clone();
            if config.step_mode != StepMode::Adaptive {
                break (c, p, hc, false);
            }
            let delta = energy(&(&c - &x));
            let h_delta = energy(&(&hc - &hx));
            match step_decision(mu, config.kappa, delta, h_delta) {
                StepDecision::Converged => break (c, p, hc, true),
                StepDecision::Accept => break (c, p, hc, false),
                StepDecision::Shrink => {}
            }
            mu *= 0.5;
            halvings += 1;
            if mu < MIN_STEP_FRACTION * ratio {
                return Err(Error::StepUnderflow { halvings, mu });
            }
        };
        x = cand;
        proj = cand_proj;
        hx = cand_hx;
        let err = relative(energy(&(y.samples() - &hx)), y_energy);
        errors.push(err);
        steps.push(mu);
        if converged || (previous - err).abs() < CONVERGENCE_TOLERANCE {
            break;
        }
        previous = err;
    }

    let mut out = ReconResult::from_projection(side, dict, &proj, x)?;
    out.iterations = errors.len();
    out.consistency_errors = errors;
    out.step_sizes = steps;
    Ok(out)
}

/// Projection of the fully sampled ground truth.
pub fn oracle_estimate(x_true: &ImageSequence, dict: &BlochDictionary, model: DensityModel) -> Result<ReconResult> {
    if x_true.readouts() != dict.sequence_len() {
        return Err(Error::Shape(format!(
            "image sequence has {} readouts, dictionary has {}",
            x_true.readouts(),
            dict.sequence_len()
        )));
    }
    let p = project(x_true.data().view(), dict, model)?;
    let x_hat = p.synthesize(dict);
    ReconResult::from_projection(x_true.side(), dict, &p, x_hat)
}

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bloch::ExcitationSequence;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Random flip-angle excitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceSpec {
    /// Standard deviation of the zero-mean Gaussian flip angles, degrees.
    pub flip_std_deg: f64,
    pub tr_ms: f64,
    /// Optional uniform TR jitter as a fraction of `tr_ms`; 0 disables it.
    pub tr_jitter: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            flip_std_deg: 10.0,
            tr_ms: 10.0,
            tr_jitter: 0.0,
        }
    }
}

/// `alpha_l ~ N(0, sigma^2)` degrees, converted to radians, with constant
/// (or optionally jittered) TR. A prefix of a longer sequence with the same
/// seed equals the shorter one.
pub fn generate_sequence(length: usize, spec: &SequenceSpec, seed: u64) -> Result<ExcitationSequence> {
    if length == 0 {
        return Err(Error::InvalidParameter("sequence length must be at least 1".into()));
    }
    if !(spec.flip_std_deg >= 0.0 && spec.flip_std_deg.is_finite()) {
        return Err(Error::InvalidParameter(format!("flip-angle deviation {} is invalid", spec.flip_std_deg)));
    }
    if !(spec.tr_ms > 0.0 && spec.tr_ms.is_finite()) {
        return Err(Error::InvalidParameter(format!("TR {} ms is invalid", spec.tr_ms)));
    }
    if !(0.0..1.0).contains(&spec.tr_jitter) {
        return Err(Error::InvalidParameter(format!("TR jitter {} must lie in [0, 1)", spec.tr_jitter)));
    }
    let normal = Normal::new(0.0, spec.flip_std_deg).expect("validated deviation");
    let mut rng = stream_rng(seed, Stream::Excitation);
    let mut flips = Vec::with_capacity(length);
    let mut trs = Vec::with_capacity(length);
    for _ in 0..length {
        flips.push(normal.sample(&mut rng).to_radians());
        let jitter = if spec.tr_jitter > 0.0 {
            spec.tr_jitter * rng.random_range(-1.0..=1.0)
        } else {
            0.0
        };
        trs.push(spec.tr_ms * (1.0 + jitter));
    }
    ExcitationSequence::new(flips, trs)
}

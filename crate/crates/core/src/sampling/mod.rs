//! The acquisition operator `h`: a unitary 2D DFT followed, for each
//! readout, by selection of a set of fully sampled `k_y` lines.
//!
//! Under random EPI the lines of readout `l` are `{z_l, z_l + p, z_l + 2p, ...}`
//! with the shift `z_l` drawn uniformly from `0..p`, independently per
//! readout. Every `k_x` on a sampled line is measured, so `M = N / p`.

mod fft;
mod isometry;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageSequence;
use crate::rng::{stream_rng, Stream};

pub use fft::{dft2, idft2, Fft2};
pub use isometry::{chord_isometry_mc, chord_ratio, tail_bound, IsometryStats};
pub(crate) use fft::check_side;

/// Number of always-sampled centre lines of the variable-density pattern.
pub const CENTER_LINES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPattern {
    #[default]
    RandomEpi,
    VariableDensity,
}

impl std::fmt::Display for SamplingPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingPattern::RandomEpi => "random_epi",
            SamplingPattern::VariableDensity => "variable_density",
        })
    }
}

/// Which `k_y` lines every readout measures. Immutable once built and fully
/// determined by `(pattern, image_side, undersampling, readouts, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    pattern: SamplingPattern,
    image_side: usize,
    undersampling: usize,
    seed: u64,
    shifts: Vec<usize>,
    rows: Vec<Vec<usize>>,
}

fn check_geometry(image_side: usize, undersampling: usize, readouts: usize) -> Result<()> {
    check_side(image_side)?;
    if undersampling == 0 || image_side % undersampling != 0 {
        return Err(Error::InvalidParameter(format!(
            "undersampling factor {undersampling} must divide the image side {image_side}"
        )));
    }
    if readouts == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one readout".into()));
    }
    Ok(())
}

impl SamplingSchedule {
    /// Random EPI with i.i.d. uniform shifts.
    pub fn random_epi(image_side: usize, undersampling: usize, readouts: usize, seed: u64) -> Result<Self> {
        check_geometry(image_side, undersampling, readouts)?;
        let mut rng = stream_rng(seed, Stream::Sampling);
        let shifts: Vec<usize> = (0..readouts).map(|_| rng.random_range(0..undersampling)).collect();
        Self::from_shifts(image_side, undersampling, shifts, seed)
    }

    /// Random EPI with given shifts.
    pub fn from_shifts(image_side: usize, undersampling: usize, shifts: Vec<usize>, seed: u64) -> Result<Self> {
        check_geometry(image_side, undersampling, shifts.len())?;
        if let Some(&z) = shifts.iter().find(|&&z| z >= undersampling) {
            return Err(Error::InvalidParameter(format!(
                "shift {z} is outside 0..{undersampling}"
            )));
        }
        let rows = shifts
            .iter()
            .map(|&z| (z..image_side).step_by(undersampling).collect())
            .collect();
        Ok(Self {
            pattern: SamplingPattern::RandomEpi,
            image_side,
            undersampling,
            seed,
            shifts,
            rows,
        })
    }

    /// Variable density with the same line budget `side / p` per readout:
    /// lines `0, 1, 2, side-3, side-2, side-1` always, the rest drawn
    /// uniformly without replacement, afresh for every readout.
    pub fn variable_density(image_side: usize, undersampling: usize, readouts: usize, seed: u64) -> Result<Self> {
        check_geometry(image_side, undersampling, readouts)?;
        let budget = image_side / undersampling;
        if budget < CENTER_LINES || image_side < 2 * CENTER_LINES {
            return Err(Error::InvalidParameter(format!(
                "variable-density budget of {budget} lines per readout is below the {CENTER_LINES} fixed centre lines"
            )));
        }
        let half = CENTER_LINES / 2;
        let fixed: Vec<usize> = (0..half).chain(image_side - half..image_side).collect();
        let pool: Vec<usize> = (half..image_side - half).collect();
        let mut rng = stream_rng(seed, Stream::Sampling);
        let rows = (0..readouts)
            .map(|_| {
                let mut r = fixed.clone();
                r.extend(sample(&mut rng, pool.len(), budget - CENTER_LINES).into_iter().map(|i| pool[i]));
                r.sort_unstable();
                r
            })
            .collect();
        Ok(Self {
            pattern: SamplingPattern::VariableDensity,
            image_side,
            undersampling,
            seed,
            shifts: Vec::new(),
            rows,
        })
    }

    pub fn pattern(&self) -> SamplingPattern {
        self.pattern
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn voxels(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn undersampling(&self) -> usize {
        self.undersampling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn readouts(&self) -> usize {
        self.rows.len()
    }

    /// Random EPI shifts; empty for the variable-density pattern.
    pub fn shifts(&self) -> &[usize] {
        &self.shifts
    }

    /// Measurements per readout, `M`.
    pub fn measurements(&self) -> usize {
        self.rows[0].len() * self.image_side
    }

    /// `N / M`, the step size suggested by the embedding scaling.
    pub fn oversampling_ratio(&self) -> f64 {
        self.voxels() as f64 / self.measurements() as f64
    }

    /// Sampled `k_y` lines of readout `l` (zero-based), ascending.
    pub fn rows(&self, l: usize) -> Result<&[usize]> {
        self.rows
            .get(l)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: l,
                len: self.rows.len(),
            })
    }
}

/// Measurements, `M x L`. Entry `(j * side + k_x, l)` is line `rows(l)[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSequence {
    samples: Array2<Complex64>,
}

impl KSpaceSequence {
    pub fn new(samples: Array2<Complex64>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &Array2<Complex64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.samples
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// `h` and `h^H` for one schedule.
#[derive(Debug, Clone)]
pub struct Acquisition {
    schedule: SamplingSchedule,
    fft: Fft2,
}

impl Acquisition {
    pub fn new(schedule: SamplingSchedule) -> Result<Self> {
        let fft = Fft2::new(schedule.image_side())?;
        Ok(Self { schedule, fft })
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    fn check_image(&self, x: &ImageSequence) -> Result<()> {
        if x.side() != self.schedule.image_side() || x.readouts() != self.schedule.readouts() {
            return Err(Error::Shape(format!(
                "image sequence {}x{} with {} readouts does not match schedule {}x{} with {}",
                x.side(),
                x.side(),
                x.readouts(),
                self.schedule.image_side(),
                self.schedule.image_side(),
                self.schedule.readouts()
            )));
        }
        Ok(())
    }

    /// `Y = h(X)`.
    pub fn forward(&self, x: &ImageSequence) -> Result<KSpaceSequence> {
        self.check_image(x)?;
        let side = self.schedule.image_side();
        let m = self.schedule.measurements();
        let mut y = Array2::zeros((m, x.readouts()));
        let mut buf = vec![Complex64::new(0.0, 0.0); side * side];
        for l in 0..x.readouts() {
            for (b, v) in buf.iter_mut().zip(x.data().column(l)) {
                *b = *v;
            }
            self.fft.forward(&mut buf);
            let mut col = y.column_mut(l);
            for (j, &row) in self.schedule.rows[l].iter().enumerate() {
                for kx in 0..side {
                    col[j * side + kx] = buf[row * side + kx];
                }
            }
        }
        Ok(KSpaceSequence::new(y))
    }

    /// `X = h^H(Y)`: zero-fill the unsampled lines and invert the DFT.
    pub fn adjoint(&self, y: &KSpaceSequence) -> Result<ImageSequence> {
        let (m, l_total) = y.samples().dim();
        if m != self.schedule.measurements() || l_total != self.schedule.readouts() {
            return Err(Error::Shape(format!(
                "k-space is {m}x{l_total}, schedule expects {}x{}",
                self.schedule.measurements(),
                self.schedule.readouts()
            )));
        }
        let side = self.schedule.image_side();
        let mut x = Array2::zeros((side * side, l_total));
        let mut buf = vec![Complex64::new(0.0, 0.0); side * side];
        for l in 0..l_total {
            buf.fill(Complex64::new(0.0, 0.0));
            let col = y.samples().column(l);
            for (j, &row) in self.schedule.rows[l].iter().enumerate() {
                for kx in 0..side {
                    buf[row * side + kx] = col[j * side + kx];
                }
            }
            self.fft.inverse(&mut buf);
            for (dst, v) in x.column_mut(l).iter_mut().zip(&buf) {
                *dst = *v;
            }
        }
        ImageSequence::new(side, x)
    }
}

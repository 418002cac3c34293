//! Discretized Bloch response manifold and projection onto its cone.
//!
//! Atoms are the unit-density responses on a Cartesian `(T1, T2, df)` grid,
//! ordered lexicographically. They are stored unnormalized with their norms
//! cached; the normalized view used by the matched filter is derived at
//! construction.
//!
//! Indices are zero-based throughout: atom `0` is the lexicographically
//! smallest grid point.

mod io;

use ndarray::{s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{unit_response, ExcitationSequence, TissueParams};
use crate::error::{Error, Result};

pub use io::{read_dictionary, sequence_hash, write_dictionary, DictionaryHeader, DICT_MAGIC};

/// Axes of the dictionary grid. Each list is strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub t1_values: Vec<f64>,
    pub t2_values: Vec<f64>,
    pub df_values: Vec<f64>,
}

fn stepped(start: f64, stop: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(move |i| start + step * i as f64)
}

fn check_axis(name: &str, values: &[f64], positive: bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} grid is empty")));
    }
    for w in values.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "{name} grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    for &v in values {
        if !v.is_finite() || (positive && v <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} grid value {v} is not admissible"
            )));
        }
    }
    Ok(())
}

impl ParameterGrid {
    pub fn new(t1_values: Vec<f64>, t2_values: Vec<f64>, df_values: Vec<f64>) -> Result<Self> {
        let grid = Self {
            t1_values,
            t2_values,
            df_values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("T1", &self.t1_values, true)?;
        check_axis("T2", &self.t2_values, true)?;
        check_axis("off-resonance", &self.df_values, false)
    }

    /// The 3379-point MRF grid: T1 in 100..2000 step 20 and 2300..6000 step
    /// 300; T2 in 20..100 step 5, 110..200 step 10 and 400..1000 step 200;
    /// zero off-resonance.
    pub fn mrf_default() -> Self {
        let t1 = stepped(100.0, 2000.0, 20.0)
            .chain(stepped(2300.0, 6000.0, 300.0))
            .collect();
        let t2 = stepped(20.0, 100.0, 5.0)
            .chain(stepped(110.0, 200.0, 10.0))
            .chain(stepped(400.0, 1000.0, 200.0))
            .collect();
        Self {
            t1_values: t1,
            t2_values: t2,
            df_values: vec![0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.t1_values.len() * self.t2_values.len() * self.df_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid point `k` in lexicographic `(T1, T2, df)` order.
    pub fn point(&self, k: usize) -> TissueParams {
        let n3 = self.df_values.len();
        let n2 = self.t2_values.len();
        let i3 = k % n3;
        let i2 = (k / n3) % n2;
        let i1 = k / (n3 * n2);
        TissueParams::new(self.t1_values[i1], self.t2_values[i2], self.df_values[i3])
    }

    pub fn points(&self) -> impl Iterator<Item = TissueParams> + '_ {
        (0..self.len()).map(|k| self.point(k))
    }

    /// Nearest value on each axis independently.
    pub fn snap(&self, tissue: &TissueParams) -> TissueParams {
        TissueParams::new(
            nearest(&self.t1_values, tissue.t1),
            nearest(&self.t2_values, tissue.t2),
            nearest(&self.df_values, tissue.off_resonance),
        )
    }

    pub fn contains(&self, tissue: &TissueParams) -> bool {
        self.t1_values.contains(&tissue.t1)
            && self.t2_values.contains(&tissue.t2)
            && self.df_values.contains(&tissue.off_resonance)
    }
}

fn nearest(axis: &[f64], v: f64) -> f64 {
    let mut best = axis[0];
    for &a in axis {
        if (a - v).abs() < (best - v).abs() {
            best = a;
        }
    }
    best
}

/// How the proton density is modelled in the cone projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DensityModel {
    /// Real, non-negative density: correlate with `Re <D_k, x>` and clamp.
    #[default]
    Real,
    /// Complex density: correlate with `|<D_k, x>|`, no clamping.
    Complex,
}

/// Projection of a real-model voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealFit {
    pub index: usize,
    pub rho: f64,
}

/// Projection of a complex-model voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexFit {
    pub index: usize,
    pub rho: Complex64,
}

/// Best atom for one voxel and its correlation with the normalized atom,
/// `<D_k, x> / ||D_k||`. Under the real model only the real part is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestMatch {
    pub index: usize,
    pub score: Complex64,
}

const BATCH_ROWS: usize = 256;

#[derive(Debug, Clone)]
pub struct BlochDictionary {
    grid: ParameterGrid,
    sequence: ExcitationSequence,
    atoms: Array2<Complex64>,
    norms: Vec<f64>,
    // Normalized atoms split into real and imaginary planes for the batch
    // correlation; a plane that is identically zero is dropped.
    eta_re: Option<Array2<f64>>,
    eta_im: Option<Array2<f64>>,
}

impl BlochDictionary {
    pub fn build(grid: &ParameterGrid, seq: &ExcitationSequence) -> Result<Self> {
        grid.validate()?;
        let p = grid.len();
        let l = seq.len();
        let rows: Vec<Vec<Complex64>> = (0..p)
            .into_par_iter()
            .map(|k| unit_response(&grid.point(k), seq))
            .collect::<Result<_>>()?;
        let mut atoms = Array2::zeros((p, l));
        for (k, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                atoms[[k, j]] = v;
            }
        }
        Self::from_atoms(grid.clone(), seq.clone(), atoms)
    }

    /// Wrap precomputed atoms, one row per grid point in grid order.
    pub fn from_atoms(
        grid: ParameterGrid,
        sequence: ExcitationSequence,
        atoms: Array2<Complex64>,
    ) -> Result<Self> {
        if atoms.nrows() != grid.len() || atoms.ncols() != sequence.len() {
            return Err(Error::Shape(format!(
                "atom matrix {:?} does not match grid size {} and sequence length {}",
                atoms.dim(),
                grid.len(),
                sequence.len()
            )));
        }
        let norms: Vec<f64> = atoms
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        for (k, &n) in norms.iter().enumerate() {
            if !(n > 0.0) || !n.is_finite() {
                let t = grid.point(k);
                return Err(Error::ZeroAtom {
                    t1: t.t1,
                    t2: t.t2,
                    df: t.off_resonance,
                });
            }
        }
        let (p, l) = atoms.dim();
        let mut eta_re = Array2::zeros((p, l));
        let mut eta_im = Array2::zeros((p, l));
        for k in 0..p {
            for j in 0..l {
                let v = atoms[[k, j]] / norms[k];
                eta_re[[k, j]] = v.re;
                eta_im[[k, j]] = v.im;
            }
        }
        let nonzero = |a: &Array2<f64>| a.iter().any(|v| *v != 0.0);
        let eta_re = nonzero(&eta_re).then_some(eta_re);
        let eta_im = nonzero(&eta_im).then_some(eta_im);
        Ok(Self {
            grid,
            sequence,
            atoms,
            norms,
            eta_re,
            eta_im,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sequence_len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    pub fn sequence(&self) -> &ExcitationSequence {
        &self.sequence
    }

    pub fn atoms(&self) -> ArrayView2<'_, Complex64> {
        self.atoms.view()
    }

    pub fn atom(&self, k: usize) -> ndarray::ArrayView1<'_, Complex64> {
        self.atoms.row(k)
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn norm(&self, k: usize) -> f64 {
        self.norms[k]
    }

    /// Normalized atom `D_k / ||D_k||`.
    pub fn normalized_atom(&self, k: usize) -> Vec<Complex64> {
        self.atoms.row(k).iter().map(|v| v / self.norms[k]).collect()
    }

    /// Grid parameters of atom `k`.
    pub fn lut_lookup(&self, k: usize) -> Result<TissueParams> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.len(),
            });
        }
        Ok(self.grid.point(k))
    }

    fn check_voxel(&self, x: &[Complex64]) -> Result<()> {
        if x.len() != self.sequence_len() {
            return Err(Error::Shape(format!(
                "voxel sequence has length {} but atoms have length {}",
                x.len(),
                self.sequence_len()
            )));
        }
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("voxel sequence"));
        }
        Ok(())
    }

    fn inner(&self, k: usize, x: &[Complex64]) -> Complex64 {
        self.atoms
            .row(k)
            .iter()
            .zip(x)
            .map(|(d, v)| d.conj() * v)
            .sum()
    }

    /// Nearest point of the cone `R+ D` to `x`.
    pub fn project_voxel_real(&self, x: &[Complex64]) -> Result<RealFit> {
        self.check_voxel(x)?;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.len() {
            let score = self.inner(k, x).re / self.norms[k];
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        let rho = (best_score / self.norms[best]).max(0.0);
        Ok(RealFit { index: best, rho })
    }

    /// Nearest point of the cone `C D` to `x`.
    pub fn project_voxel_complex(&self, x: &[Complex64]) -> Result<ComplexFit> {
        self.check_voxel(x)?;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_inner = Complex64::new(0.0, 0.0);
        for k in 0..self.len() {
            let c = self.inner(k, x);
            let score = c.norm() / self.norms[k];
            if score > best_score {
                best_score = score;
                best = k;
                best_inner = c;
            }
        }
        let rho = best_inner / self.norms[best] / self.norms[best];
        Ok(ComplexFit { index: best, rho })
    }

    /// Best atom for every row of `x` (voxels by readouts).
    ///
    /// Correlations are formed as real matrix products against the
    /// normalized atoms, in fixed-size row blocks, so the result for a voxel
    /// does not depend on how the work is scheduled.
    pub fn best_matches(&self, x: ArrayView2<'_, Complex64>, model: DensityModel) -> Result<Vec<BestMatch>> {
        if x.ncols() != self.sequence_len() {
            return Err(Error::Shape(format!(
                "image sequence has {} readouts but atoms have length {}",
                x.ncols(),
                self.sequence_len()
            )));
        }
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("image sequence"));
        }
        let n = x.nrows();
        let blocks: Vec<usize> = (0..n).step_by(BATCH_ROWS).collect();
        let parts: Vec<Vec<BestMatch>> = blocks
            .into_par_iter()
            .map(|start| {
                let end = (start + BATCH_ROWS).min(n);
                self.match_block(x.slice(s![start..end, ..]), model)
            })
            .collect();
        Ok(parts.into_iter().flatten().collect())
    }

    fn match_block(&self, x: ArrayView2<'_, Complex64>, model: DensityModel) -> Vec<BestMatch> {
        let x_re = x.mapv(|v| v.re);
        let x_im = x.mapv(|v| v.im);
        let mut re: Array2<f64> = Array2::zeros((x.nrows(), self.len()));
        if let Some(e) = &self.eta_re {
            re += &x_re.dot(&e.t());
        }
        if let Some(e) = &self.eta_im {
            re += &x_im.dot(&e.t());
        }
        match model {
            DensityModel::Real => re
                .axis_iter(Axis(0))
                .map(|row| {
                    let mut best = 0;
                    let mut best_score = f64::NEG_INFINITY;
                    for (k, &v) in row.iter().enumerate() {
                        if v > best_score {
                            best_score = v;
                            best = k;
                        }
                    }
                    BestMatch {
                        index: best,
                        score: Complex64::new(best_score, 0.0),
                    }
                })
                .collect(),
            DensityModel::Complex => {
                let mut im: Array2<f64> = Array2::zeros((x.nrows(), self.len()));
                if let Some(e) = &self.eta_re {
                    im += &x_im.dot(&e.t());
                }
                if let Some(e) = &self.eta_im {
                    im -= &x_re.dot(&e.t());
                }
                re.axis_iter(Axis(0))
                    .zip(im.axis_iter(Axis(0)))
                    .map(|(r, i)| {
                        let mut best = 0;
                        let mut best_score = f64::NEG_INFINITY;
                        for k in 0..r.len() {
                            let v = r[k] * r[k] + i[k] * i[k];
                            if v > best_score {
                                best_score = v;
                                best = k;
                            }
                        }
                        BestMatch {
                            index: best,
                            score: Complex64::new(r[best], i[best]),
                        }
                    })
                    .collect()
            }
        }
    }
}

/// `||u||_inf / ||u||_2`, between `L^{-1/2}` and 1.
pub fn chord_flatness(u: &[Complex64]) -> Result<f64> {
    let l2 = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if !(l2 > 0.0) {
        return Err(Error::InvalidParameter(
            "flatness of a zero vector is undefined".into(),
        ));
    }
    let linf = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(linf / l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    use crate::rng::{stream_rng, Stream};

    fn small_seq(l: usize, seed: u64) -> ExcitationSequence {
        let mut rng = stream_rng(seed, Stream::Test);
        ExcitationSequence::with_constant_tr(
            (0..l).map(|_| rng.random_range(-0.6..0.6)).collect(),
            10.0,
        )
        .unwrap()
    }

    fn small_dict() -> BlochDictionary {
        let grid = ParameterGrid::new(vec![300.0, 800.0], vec![40.0, 80.0, 200.0], vec![0.0])
            .unwrap();
        BlochDictionary::build(&grid, &small_seq(30, 3)).unwrap()
    }

    #[test]
    fn default_grid_has_3379_points() {
        let g = ParameterGrid::mrf_default();
        assert_eq!(g.t1_values.len(), 109);
        assert_eq!(g.t2_values.len(), 31);
        assert_eq!(g.len(), 3379);
        assert_eq!(g.t1_values.last(), Some(&5900.0));
        assert_eq!(g.t2_values.last(), Some(&1000.0));
    }

    #[test]
    fn grid_validation() {
        assert!(ParameterGrid::new(vec![], vec![1.0], vec![0.0]).is_err());
        assert!(ParameterGrid::new(vec![2.0, 1.0], vec![1.0], vec![0.0]).is_err());
        assert!(ParameterGrid::new(vec![1.0, 1.0], vec![1.0], vec![0.0]).is_err());
        assert!(ParameterGrid::new(vec![0.0], vec![1.0], vec![0.0]).is_err());
        assert!(ParameterGrid::new(vec![1.0], vec![1.0], vec![-3.0, 0.0]).is_ok());
    }

    #[test]
    fn lexicographic_order_and_lut() {
        let d = small_dict();
        assert_eq!(d.lut_lookup(0).unwrap(), TissueParams::new(300.0, 40.0, 0.0));
        assert_eq!(d.lut_lookup(1).unwrap(), TissueParams::new(300.0, 80.0, 0.0));
        assert_eq!(d.lut_lookup(5).unwrap(), TissueParams::new(800.0, 200.0, 0.0));
        assert!(matches!(d.lut_lookup(6), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn single_point_dictionary_is_the_response() {
        let grid = ParameterGrid::new(vec![811.0], vec![77.0], vec![0.0]).unwrap();
        let seq = small_seq(25, 1);
        let d = BlochDictionary::build(&grid, &seq).unwrap();
        let r = unit_response(&TissueParams::new(811.0, 77.0, 0.0), &seq).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.atom(0).to_vec(), r);
    }

    #[test]
    fn zero_atom_is_a_construction_error() {
        let grid = ParameterGrid::new(vec![811.0], vec![77.0], vec![0.0]).unwrap();
        let seq = ExcitationSequence::with_constant_tr(vec![0.0; 5], 10.0).unwrap();
        match BlochDictionary::build(&grid, &seq) {
            Err(Error::ZeroAtom { t1, t2, .. }) => assert_eq!((t1, t2), (811.0, 77.0)),
            other => panic!("expected ZeroAtom, got {other:?}"),
        }
    }

    #[test]
    fn scaled_atom_is_recovered() {
        let d = small_dict();
        let x: Vec<Complex64> = d.atom(4).iter().map(|v| v * 3.5).collect();
        let fit = d.project_voxel_real(&x).unwrap();
        assert_eq!(fit.index, 4);
        assert!((fit.rho - 3.5).abs() < 1e-12);

        let neg: Vec<Complex64> = d.atom(4).iter().map(|v| -v).collect();
        assert_eq!(d.project_voxel_real(&neg).unwrap().rho, 0.0);
    }

    #[test]
    fn complex_model_absorbs_phase() {
        let d = small_dict();
        let c = Complex64::from_polar(2.0, PI / 3.0);
        let x: Vec<Complex64> = d.atom(3).iter().map(|v| v * c).collect();
        let fit = d.project_voxel_complex(&x).unwrap();
        assert_eq!(fit.index, 3);
        assert!((fit.rho - c).norm() < 1e-12);

        let neg: Vec<Complex64> = d.atom(5).iter().map(|v| -v).collect();
        let fit = d.project_voxel_complex(&neg).unwrap();
        assert_eq!(fit.index, 5);
        assert!((fit.rho + 1.0).norm() < 1e-12);
    }

    #[test]
    fn projection_rejects_bad_input() {
        let d = small_dict();
        assert!(d.project_voxel_real(&[Complex64::new(1.0, 0.0)]).is_err());
        let mut x = vec![Complex64::new(0.0, 0.0); 30];
        x[2].re = f64::NAN;
        assert!(matches!(d.project_voxel_real(&x), Err(Error::NonFinite(_))));
        assert!(d.project_voxel_complex(&x).is_err());
    }

    #[test]
    fn zero_voxel_ties_to_first_atom() {
        let d = small_dict();
        let x = vec![Complex64::new(0.0, 0.0); 30];
        assert_eq!(d.project_voxel_real(&x).unwrap(), RealFit { index: 0, rho: 0.0 });
        let b = d.best_matches(Array2::zeros((1, 30)).view(), DensityModel::Real).unwrap();
        assert_eq!(b[0].index, 0);
    }

    #[test]
    fn batch_agrees_with_single_voxel_path() {
        let grid = ParameterGrid::new(vec![200.0, 600.0, 1400.0], vec![30.0, 90.0], vec![-4.0, 0.0, 6.0])
            .unwrap();
        let d = BlochDictionary::build(&grid, &small_seq(20, 8)).unwrap();
        let mut rng = stream_rng(5, Stream::Test);
        let x = Array2::from_shape_fn((300, 20), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let real = d.best_matches(x.view(), DensityModel::Real).unwrap();
        let cplx = d.best_matches(x.view(), DensityModel::Complex).unwrap();
        for i in 0..300 {
            let row = x.row(i).to_vec();
            let r = d.project_voxel_real(&row).unwrap();
            let c = d.project_voxel_complex(&row).unwrap();
            assert_eq!(real[i].index, r.index);
            assert_eq!(cplx[i].index, c.index);
            let rho_c = cplx[i].score / d.norm(c.index);
            assert!((rho_c - c.rho).norm() < 1e-12 * (1.0 + c.rho.norm()));
        }
    }

    #[test]
    fn flatness_bounds_are_attained() {
        let flat: Vec<Complex64> = (0..64).map(|k| Complex64::from_polar(2.0, k as f64)).collect();
        assert!((chord_flatness(&flat).unwrap() - 0.125).abs() < 1e-15);
        let mut e = vec![Complex64::new(0.0, 0.0); 17];
        e[9] = Complex64::new(0.0, -4.0);
        assert_eq!(chord_flatness(&e).unwrap(), 1.0);
        assert!(chord_flatness(&[Complex64::new(0.0, 0.0); 4]).is_err());
    }
}

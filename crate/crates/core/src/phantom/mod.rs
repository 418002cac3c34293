//! Ground-truth parameter maps: the BrainWeb crisp segmentation mapped
//! through a tissue table, and deterministic synthetic layouts.

mod brainweb;

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bloch::{unit_response, ExcitationSequence, TissueParams};
use crate::dictionary::ParameterGrid;
use crate::error::{Error, Result};
use crate::image::ImageSequence;
use crate::rng::{stream_rng, Stream};
use crate::sampling::check_side;

pub use brainweb::{
    brainweb_slice, load_brainweb, BRAINWEB_DIMS, BRAINWEB_PADDED_SIDE, BRAINWEB_SLICE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub label: u8,
    pub name: String,
    pub rho: f64,
    pub t1: f64,
    pub t2: f64,
}

/// Label to parameter mapping. Label 0 is background with zero density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    rows: Vec<Tissue>,
}

impl Default for TissueTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl TissueTable {
    pub fn new(rows: Vec<Tissue>) -> Result<Self> {
        let mut seen = [false; 256];
        for r in &rows {
            if std::mem::replace(&mut seen[r.label as usize], true) {
                return Err(Error::InvalidParameter(format!("label {} appears twice", r.label)));
            }
            if r.label == 0 {
                if r.rho != 0.0 {
                    return Err(Error::InvalidParameter("background must have zero density".into()));
                }
            } else if !(r.rho >= 0.0 && r.t1 > 0.0 && r.t2 > 0.0) {
                return Err(Error::InvalidParameter(format!("tissue '{}' has invalid parameters", r.name)));
            }
        }
        Ok(Self { rows })
    }

    /// The BrainWeb tissues used for simulation. Labels 5 and 6 (muscle and
    /// skin) share one parameter row.
    pub fn standard() -> Self {
        let t = |label, name: &str, rho, t1, t2| Tissue {
            label,
            name: name.to_string(),
            rho,
            t1,
            t2,
        };
        Self {
            rows: vec![
                t(0, "background", 0.0, 0.0, 0.0),
                t(1, "csf", 100.0, 5012.0, 512.0),
                t(2, "grey_matter", 100.0, 1545.0, 83.0),
                t(3, "white_matter", 80.0, 811.0, 77.0),
                t(4, "adipose", 80.0, 530.0, 77.0),
                t(5, "skin_muscle", 80.0, 1425.0, 41.0),
                t(6, "skin_muscle", 80.0, 1425.0, 41.0),
            ],
        }
    }

    pub fn rows(&self) -> &[Tissue] {
        &self.rows
    }

    pub fn get(&self, label: u8) -> Option<&Tissue> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Non-background rows with distinct parameters, first label kept.
    pub fn distinct_tissues(&self) -> Vec<&Tissue> {
        let mut out: Vec<&Tissue> = Vec::new();
        for r in self.rows.iter().filter(|r| r.label != 0 && r.rho > 0.0) {
            if !out.iter().any(|o| (o.rho, o.t1, o.t2) == (r.rho, r.t1, r.t2)) {
                out.push(r);
            }
        }
        out
    }
}

/// Per-voxel ground truth on a `side x side` image, row-major with voxel
/// `i = y * side + x`. Background voxels carry zero in every map.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomMaps {
    pub side: usize,
    pub labels: Vec<u8>,
    pub rho: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub df: Vec<f64>,
    /// Phase of the complex density, if any.
    pub phase: Option<Vec<f64>>,
}

impl PhantomMaps {
    pub fn from_labels(side: usize, labels: Vec<u8>, table: &TissueTable) -> Result<Self> {
        if labels.len() != side * side {
            return Err(Error::Shape(format!("{} labels for a {side}x{side} image", labels.len())));
        }
        let n = labels.len();
        let mut maps = Self {
            side,
            labels: vec![0; n],
            rho: vec![0.0; n],
            t1: vec![0.0; n],
            t2: vec![0.0; n],
            df: vec![0.0; n],
            phase: None,
        };
        for (i, &lab) in labels.iter().enumerate() {
            // Labels without a table row are treated as background.
            if let Some(t) = table.get(lab).filter(|t| t.rho > 0.0) {
                maps.labels[i] = lab;
                maps.rho[i] = t.rho;
                maps.t1[i] = t.t1;
                maps.t2[i] = t.t2;
            }
        }
        Ok(maps)
    }

    pub fn voxels(&self) -> usize {
        self.side * self.side
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.rho[i] != 0.0
    }

    pub fn foreground_mask(&self) -> Vec<bool> {
        (0..self.voxels()).map(|i| self.is_foreground(i)).collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.rho.iter().filter(|&&r| r != 0.0).count()
    }

    pub fn tissue(&self, i: usize) -> Option<TissueParams> {
        self.is_foreground(i)
            .then(|| TissueParams::new(self.t1[i], self.t2[i], self.df[i]))
    }

    /// Complex density `rho e^{j phase}`.
    pub fn complex_rho(&self) -> Vec<Complex64> {
        match &self.phase {
            None => self.rho.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
            Some(ph) => self
                .rho
                .iter()
                .zip(ph)
                .map(|(&r, &p)| Complex64::from_polar(r, p))
                .collect(),
        }
    }

    /// Replace every foreground `(T1, T2, df)` by its nearest grid point.
    pub fn snap_to_grid(&mut self, grid: &ParameterGrid) {
        for i in 0..self.voxels() {
            if let Some(t) = self.tissue(i) {
                let s = grid.snap(&t);
                self.t1[i] = s.t1;
                self.t2[i] = s.t2;
                self.df[i] = s.off_resonance;
            }
        }
    }

    /// Image of one map as rows.
    pub fn map_image(values: &[f64], side: usize) -> Array2<f64> {
        Array2::from_shape_fn((side, side), |(y, x)| values[y * side + x])
    }

    /// Voxel table as CSV: `voxel,y,x,label,rho,t1,t2,df,phase`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["voxel", "y", "x", "label", "rho", "t1", "t2", "df", "phase"])?;
        for i in 0..self.voxels() {
            let phase = self.phase.as_ref().map_or(0.0, |p| p[i]);
            w.write_record(&[
                i.to_string(),
                (i / self.side).to_string(),
                (i % self.side).to_string(),
                self.labels[i].to_string(),
                self.rho[i].to_string(),
                self.t1[i].to_string(),
                self.t2[i].to_string(),
                self.df[i].to_string(),
                phase.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// 8-bit binary PGM of one map, scaled so its maximum is white.
    pub fn write_pgm(values: &[f64], side: usize, path: &Path) -> Result<()> {
        if values.len() != side * side {
            return Err(Error::Shape(format!("{} values for a {side}x{side} image", values.len())));
        }
        let max = values.iter().cloned().fold(0.0, f64::max);
        let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
        bytes.extend(values.iter().map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        }));
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Synthetic layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Layout {
    /// Every voxel is the given label.
    Single(u8),
    /// Head-like nested ellipses: skin/muscle rim, adipose layer, grey
    /// matter, white matter core and two CSF ventricles.
    Ellipses,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ellipses" {
            return Ok(Layout::Ellipses);
        }
        if let Some(l) = s.strip_prefix("single:") {
            let label = l
                .parse()
                .map_err(|_| Error::Config(format!("bad label in layout '{s}'")))?;
            return Ok(Layout::Single(label));
        }
        Err(Error::Config(format!(
            "unknown phantom layout '{s}' (expected 'ellipses' or 'single:<label>')"
        )))
    }
}

/// How tissue parameters are assigned once labels are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueMode {
    /// The tissue table values as they are.
    #[default]
    Table,
    /// Table values snapped to the nearest dictionary grid point.
    OnGrid,
    /// Grid-snapped values with every foreground voxel's T1 and T2 scaled
    /// independently by a uniform factor in `[1 - percent/100, 1 + percent/100]`.
    OffGrid { percent: f64, seed: u64 },
}

fn inside(y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64) -> bool {
    let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
    dy * dy + dx * dx <= 1.0
}

fn layout_labels(side: usize, layout: Layout) -> Vec<u8> {
    match layout {
        Layout::Single(label) => vec![label; side * side],
        Layout::Ellipses => {
            let s = side as f64;
            let c = (s - 1.0) / 2.0;
            let mut out = vec![0u8; side * side];
            for y in 0..side {
                for x in 0..side {
                    let (fy, fx) = (y as f64, x as f64);
                    let e = |ry: f64, rx: f64| inside(fy, fx, c, c, ry * s, rx * s);
                    let label = if inside(fy, fx, c - 0.08 * s, c - 0.1 * s, 0.1 * s, 0.05 * s)
                        || inside(fy, fx, c - 0.08 * s, c + 0.1 * s, 0.1 * s, 0.05 * s)
                    {
                        1
                    } else if e(0.26, 0.2) {
                        3
                    } else if e(0.36, 0.3) {
                        2
                    } else if e(0.41, 0.35) {
                        4
                    } else if e(0.46, 0.4) {
                        5
                    } else {
                        0
                    };
                    out[y * side + x] = label;
                }
            }
            out
        }
    }
}

pub fn synthetic_phantom(
    side: usize,
    layout: Layout,
    mode: ValueMode,
    table: &TissueTable,
    grid: &ParameterGrid,
) -> Result<PhantomMaps> {
    check_side(side)?;
    if let Layout::Single(label) = layout {
        if table.get(label).is_none() {
            return Err(Error::Config(format!("label {label} is not in the tissue table")));
        }
    }
    let mut maps = PhantomMaps::from_labels(side, layout_labels(side, layout), table)?;
    match mode {
        ValueMode::Table => {}
        ValueMode::OnGrid => maps.snap_to_grid(grid),
        ValueMode::OffGrid { percent, seed } => {
            if !(percent.is_finite() && (0.0..100.0).contains(&percent)) {
                return Err(Error::Config(format!("perturbation of {percent}% is out of range")));
            }
            maps.snap_to_grid(grid);
            let mut rng = stream_rng(seed, Stream::Phantom);
            let f = percent / 100.0;
            for i in 0..maps.voxels() {
                if maps.is_foreground(i) {
                    maps.t1[i] *= 1.0 + f * rng.random_range(-1.0..=1.0);
                    maps.t2[i] *= 1.0 + f * rng.random_range(-1.0..=1.0);
                }
            }
        }
    }
    Ok(maps)
}

/// Quadratic phase that is zero at the image centre and `corner_phase` at
/// the corners. The centre is pixel `(side/2, side/2)` and the corner
/// radius is that of pixel `(0, 0)`.
pub fn apply_quadratic_phase(mut maps: PhantomMaps, corner_phase: f64) -> PhantomMaps {
    let side = maps.side;
    let c = (side / 2) as f64;
    let r2 = 2.0 * c * c;
    let phase = (0..side * side)
        .map(|i| {
            let (y, x) = ((i / side) as f64, (i % side) as f64);
            if r2 > 0.0 {
                corner_phase * ((x - c).powi(2) + (y - c).powi(2)) / r2
            } else {
                0.0
            }
        })
        .collect();
    maps.phase = Some(phase);
    maps
}

/// Noiseless image sequence `X_i = rho_i f(theta_i)`. Responses are
/// simulated once per distinct tissue.
pub fn maps_to_sequence(maps: &PhantomMaps, seq: &ExcitationSequence) -> Result<ImageSequence> {
    let n = maps.voxels();
    let rho = maps.complex_rho();
    let mut cache: HashMap<[u64; 3], Vec<Complex64>> = HashMap::new();
    let mut x = Array2::zeros((n, seq.len()));
    for i in 0..n {
        let Some(t) = maps.tissue(i) else { continue };
        let key = [t.t1.to_bits(), t.t2.to_bits(), t.off_resonance.to_bits()];
        let resp = match cache.get(&key) {
            Some(r) => r,
            None => {
                let r = unit_response(&t, seq)?;
                cache.entry(key).or_insert(r)
            }
        };
        for (dst, v) in x.row_mut(i).iter_mut().zip(resp) {
            *dst = rho[i] * v;
        }
    }
    ImageSequence::new(maps.side, x)
}

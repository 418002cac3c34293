//! End-to-end experiment cells and sweeps.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{expand_mask, ser_db, ser_db_real};
use super::sequence::{generate_sequence, SequenceSpec};
use crate::bloch::ExcitationSequence;
use crate::dictionary::{BlochDictionary, DensityModel, ParameterGrid};
use crate::error::{Error, Result};
use crate::phantom::{
    apply_quadratic_phase, load_brainweb, maps_to_sequence, synthetic_phantom, Layout, PhantomMaps,
    TissueTable, ValueMode, BRAINWEB_SLICE,
};
use crate::recon::{
    blip_reconstruct, mrf_reconstruct, oracle_estimate, ReconConfig, ReconResult, Regularization,
    StepMode,
};
use crate::sampling::{Acquisition, SamplingPattern, SamplingSchedule};

/// Version of the CSV layout written by [`run_experiment`].
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Matched filter on `h^H(Y)`.
    Mrf,
    /// Matched filter on `(N/M) h^H(Y)`.
    MrfRescaled,
    Blip,
    /// BLIP with a Haar-sparse pseudo-density.
    BlipWavelet,
    /// Projection of the fully sampled truth.
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Mrf,
        Algorithm::MrfRescaled,
        Algorithm::Blip,
        Algorithm::BlipWavelet,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mrf => "mrf",
            Algorithm::MrfRescaled => "mrf_rescaled",
            Algorithm::Blip => "blip",
            Algorithm::BlipWavelet => "blip_wavelet",
            Algorithm::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhantomSource {
    #[default]
    Synthetic,
    Brainweb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub source: PhantomSource,
    /// Synthetic layout: `ellipses` or `single:<label>`.
    pub layout: String,
    /// Synthetic parameter assignment.
    pub values: ValueMode,
    /// BrainWeb volume (raw bytes).
    pub path: Option<PathBuf>,
    pub slice: usize,
    /// Corner value of the quadratic density phase, radians; 0 disables it.
    pub corner_phase: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            source: PhantomSource::Synthetic,
            layout: "ellipses".into(),
            values: ValueMode::Table,
            path: None,
            slice: BRAINWEB_SLICE,
            corner_phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSpec {
    pub max_iters: usize,
    pub kappa: f64,
    pub step_mode: StepMode,
    pub density_model: DensityModel,
    /// Haar coefficients kept by `blip_wavelet`; defaults to 12000 scaled
    /// by `N / 256^2`.
    pub retained: Option<usize>,
}

impl Default for ReconSpec {
    fn default() -> Self {
        let c = ReconConfig::default();
        Self {
            max_iters: c.max_iters,
            kappa: c.kappa,
            step_mode: c.step_mode,
            density_model: c.density_model,
            retained: None,
        }
    }
}

/// A declarative experiment: the Cartesian product of `lengths`,
/// `undersampling` and `patterns` is run, every cell with every algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub image_side: usize,
    pub phantom: PhantomSpec,
    pub undersampling: Vec<usize>,
    pub lengths: Vec<usize>,
    pub patterns: Vec<SamplingPattern>,
    pub sequence: SequenceSpec,
    pub algorithms: Vec<Algorithm>,
    pub recon: ReconSpec,
    /// Dictionary grid; the standard 3379-point grid when absent.
    pub grid: Option<ParameterGrid>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            image_side: 64,
            phantom: PhantomSpec::default(),
            undersampling: vec![8],
            lengths: vec![25, 50, 100, 200, 400],
            patterns: vec![SamplingPattern::RandomEpi],
            sequence: SequenceSpec::default(),
            algorithms: vec![
                Algorithm::Mrf,
                Algorithm::MrfRescaled,
                Algorithm::Blip,
                Algorithm::Oracle,
            ],
            recon: ReconSpec::default(),
            grid: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn grid(&self) -> ParameterGrid {
        self.grid.clone().unwrap_or_else(ParameterGrid::mrf_default)
    }

    /// Side of the phantom actually used (BrainWeb is always 256).
    pub fn effective_side(&self) -> usize {
        match self.phantom.source {
            PhantomSource::Brainweb => crate::phantom::BRAINWEB_PADDED_SIDE,
            PhantomSource::Synthetic => self.image_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let side = self.effective_side();
        crate::sampling::check_side(side).map_err(|e| Error::Config(e.to_string()))?;
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("lengths must be a non-empty list of positive values".into());
        }
        if self.undersampling.is_empty() {
            return bad("undersampling must list at least one factor".into());
        }
        for &p in &self.undersampling {
            if p == 0 || side % p != 0 {
                return bad(format!("undersampling factor {p} must divide the image side {side}"));
            }
            if self.patterns.contains(&SamplingPattern::VariableDensity)
                && side / p < crate::sampling::CENTER_LINES
            {
                return bad(format!(
                    "variable density needs at least {} lines per readout; side {side} / p {p} is too few",
                    crate::sampling::CENTER_LINES
                ));
            }
        }
        if self.patterns.is_empty() || self.algorithms.is_empty() {
            return bad("patterns and algorithms must be non-empty".into());
        }
        match self.phantom.source {
            PhantomSource::Synthetic => {
                self.phantom.layout.parse::<Layout>()?;
            }
            PhantomSource::Brainweb => {
                if self.phantom.path.is_none() {
                    return bad("a BrainWeb phantom needs 'path'".into());
                }
            }
        }
        if !self.phantom.corner_phase.is_finite() {
            return bad("corner_phase must be finite".into());
        }
        self.sequence_validate()?;
        self.grid().validate().map_err(|e| Error::Config(e.to_string()))?;
        for alg in [Algorithm::Blip, Algorithm::BlipWavelet] {
            if self.algorithms.contains(&alg) {
                self.recon_config(alg, side * side)
                    .validate(side * side)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn sequence_validate(&self) -> Result<()> {
        generate_sequence(1, &self.sequence, 0)
            .map(|_| ())
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Reconstruction settings for one algorithm.
    pub fn recon_config(&self, alg: Algorithm, voxels: usize) -> ReconConfig {
        let mut c = ReconConfig {
            max_iters: self.recon.max_iters,
            kappa: self.recon.kappa,
            step_mode: self.recon.step_mode,
            density_model: self.recon.density_model,
            regularization: Regularization::None,
        };
        match alg {
            Algorithm::Mrf => c.step_mode = StepMode::Unit,
            Algorithm::MrfRescaled => c.step_mode = StepMode::Ratio,
            Algorithm::BlipWavelet => {
                c.density_model = DensityModel::Real;
                c.regularization = match self.recon.retained {
                    Some(retained) => Regularization::Wavelet { retained },
                    None => Regularization::scaled_wavelet(voxels),
                };
            }
            Algorithm::Blip | Algorithm::Oracle => {}
        }
        c
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form,
    /// ignoring where output is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config is serializable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_phantom(&self) -> Result<PhantomMaps> {
        let table = TissueTable::standard();
        let spec = &self.phantom;
        let maps = match spec.source {
            PhantomSource::Synthetic => {
                synthetic_phantom(self.image_side, spec.layout.parse()?, spec.values, &table, &self.grid())?
            }
            PhantomSource::Brainweb => {
                let path = spec
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("a BrainWeb phantom needs 'path'".into()))?;
                load_brainweb(path, spec.slice, &table)?
            }
        };
        Ok(if self.phantom.corner_phase != 0.0 {
            apply_quadratic_phase(maps, self.phantom.corner_phase)
        } else {
            maps
        })
    }

    /// Sweep cells in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &pattern in &self.patterns {
            for &undersampling in &self.undersampling {
                for &length in &self.lengths {
                    out.push(Cell {
                        pattern,
                        undersampling,
                        length,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub pattern: SamplingPattern,
    pub undersampling: usize,
    pub length: usize,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/p={}/L={}", self.pattern, self.undersampling, self.length)
    }
}

/// Errors of one reconstruction against the ground truth. SERs are over
/// foreground voxels; `+inf` means exact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmMetrics {
    pub algorithm: Algorithm,
    pub ser_image_db: f64,
    pub ser_rho_db: f64,
    pub ser_t1_db: f64,
    pub ser_t2_db: f64,
    pub iterations: usize,
    pub consistency_errors: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub runtime_s: f64,
}

impl AlgorithmMetrics {
    pub fn evaluate(algorithm: Algorithm, maps: &PhantomMaps, x_true: &crate::image::ImageSequence, r: &ReconResult) -> Result<Self> {
        let mask = maps.foreground_mask();
        let l = x_true.readouts();
        let xt = x_true.data().as_standard_layout();
        let xh = r.x_hat.data().as_standard_layout();
        let ser_image = ser_db(
            xt.as_slice().expect("standard layout"),
            xh.as_slice().expect("standard layout"),
            &expand_mask(&mask, l),
        )?;
        Ok(Self {
            algorithm,
            ser_image_db: ser_image,
            ser_rho_db: ser_db(&maps.complex_rho(), &r.rho, &mask)?,
            ser_t1_db: ser_db_real(&maps.t1, &r.t1_map(), &mask)?,
            ser_t2_db: ser_db_real(&maps.t2, &r.t2_map(), &mask)?,
            iterations: r.iterations,
            consistency_errors: r.consistency_errors.clone(),
            step_sizes: r.step_sizes.clone(),
            runtime_s: 0.0,
        })
    }

    pub fn final_consistency(&self) -> Option<f64> {
        self.consistency_errors.last().copied()
    }
}

/// Everything needed to reconstruct one cell, exposed so callers can run
/// algorithms selectively.
pub struct CellProblem {
    pub cell: Cell,
    pub sequence: ExcitationSequence,
    pub x_true: crate::image::ImageSequence,
    pub dictionary: BlochDictionary,
    pub acquisition: Acquisition,
    pub kspace: crate::sampling::KSpaceSequence,
}

impl CellProblem {
    pub fn new(config: &ExperimentConfig, maps: &PhantomMaps, cell: Cell) -> Result<Self> {
        let sequence = generate_sequence(cell.length, &config.sequence, config.seed)?;
        let x_true = maps_to_sequence(maps, &sequence)?;
        let dictionary = BlochDictionary::build(&config.grid(), &sequence)?;
        let schedule = match cell.pattern {
            SamplingPattern::RandomEpi => {
                SamplingSchedule::random_epi(maps.side, cell.undersampling, cell.length, config.seed)?
            }
            SamplingPattern::VariableDensity => {
                SamplingSchedule::variable_density(maps.side, cell.undersampling, cell.length, config.seed)?
            }
        };
        let acquisition = Acquisition::new(schedule)?;
        let kspace = acquisition.forward(&x_true)?;
        Ok(Self {
            cell,
            sequence,
            x_true,
            dictionary,
            acquisition,
            kspace,
        })
    }

    pub fn reconstruct(&self, config: &ExperimentConfig, alg: Algorithm) -> Result<ReconResult> {
        let rc = config.recon_config(alg, self.x_true.voxels());
        match alg {
            Algorithm::Mrf | Algorithm::MrfRescaled => {
                mrf_reconstruct(&self.kspace, &self.acquisition, &self.dictionary, &rc)
            }
            Algorithm::Blip | Algorithm::BlipWavelet => {
                blip_reconstruct(&self.kspace, &self.acquisition, &self.dictionary, &rc)
            }
            Algorithm::Oracle => oracle_estimate(&self.x_true, &self.dictionary, rc.density_model),
        }
    }

    pub fn evaluate(&self, config: &ExperimentConfig, maps: &PhantomMaps, alg: Algorithm) -> Result<AlgorithmMetrics> {
        let t = Instant::now();
        let r = self.reconstruct(config, alg)?;
        let mut m = AlgorithmMetrics::evaluate(alg, maps, &self.x_true, &r)?;
        m.runtime_s = t.elapsed().as_secs_f64();
        Ok(m)
    }
}

pub fn run_cell(config: &ExperimentConfig, maps: &PhantomMaps, cell: Cell) -> Result<Vec<AlgorithmMetrics>> {
    let problem = CellProblem::new(config, maps, cell)?;
    config
        .algorithms
        .iter()
        .map(|&alg| problem.evaluate(config, maps, alg))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub cell: Cell,
    pub metrics: Vec<AlgorithmMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub library_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

const CSV_HEADER: [&str; 17] = [
    "schema_version",
    "library_version",
    "config_hash",
    "seed",
    "image_side",
    "pattern",
    "undersampling",
    "length",
    "algorithm",
    "density_model",
    "iterations",
    "final_consistency",
    "ser_image_db",
    "ser_rho_db",
    "ser_t1_db",
    "ser_t2_db",
    "phantom",
];

fn density_name(m: DensityModel) -> &'static str {
    match m {
        DensityModel::Real => "real",
        DensityModel::Complex => "complex",
    }
}

fn phantom_name(spec: &PhantomSpec) -> String {
    match spec.source {
        PhantomSource::Synthetic => {
            let v = match spec.values {
                ValueMode::Table => "table".to_string(),
                ValueMode::OnGrid => "on_grid".to_string(),
                ValueMode::OffGrid { percent, seed } => format!("off_grid_{percent}pct_seed{seed}"),
            };
            let phase = if spec.corner_phase != 0.0 {
                format!(":phase{}", spec.corner_phase)
            } else {
                String::new()
            };
            format!("{}:{v}{phase}", spec.layout)
        }
        PhantomSource::Brainweb => format!("brainweb:slice{}", spec.slice),
    }
}

/// Runs every cell, appending one CSV row per (cell, algorithm) to
/// `<output_dir>/<name>.csv` as soon as the cell finishes, then writes
/// `<name>.json` with per-iteration data and runtimes. A failing cell stops
/// the sweep with the rows written so far kept on disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let maps = config.build_phantom()?;
    let hash = config.hash();
    let version = env!("CARGO_PKG_VERSION").to_string();
    let csv_path = config.output_dir.join(format!("{}.csv", config.name));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(CSV_HEADER)?;
    w.flush()?;
    let mut cells = Vec::new();
    for cell in config.cells() {
        let metrics = run_cell(config, &maps, cell).map_err(|e| Error::Cell {
            cell: cell.to_string(),
            source: Box::new(e),
        })?;
        for m in &metrics {
            let rc = config.recon_config(m.algorithm, maps.voxels());
            w.write_record(&[
                CSV_SCHEMA_VERSION.to_string(),
                version.clone(),
                hash.clone(),
                config.seed.to_string(),
                maps.side.to_string(),
                cell.pattern.to_string(),
                cell.undersampling.to_string(),
                cell.length.to_string(),
                m.algorithm.name().to_string(),
                density_name(rc.density_model).to_string(),
                m.iterations.to_string(),
                m.final_consistency().map_or(String::new(), |v| v.to_string()),
                m.ser_image_db.to_string(),
                m.ser_rho_db.to_string(),
                m.ser_t1_db.to_string(),
                m.ser_t2_db.to_string(),
                phantom_name(&config.phantom),
            ])?;
        }
        w.flush()?;
        cells.push(CellRecord { cell, metrics });
    }
    let report = ExperimentReport {
        schema_version: CSV_SCHEMA_VERSION,
        library_version: version,
        config_hash: hash,
        config: config.clone(),
        cells,
    };
    let json_path = config.output_dir.join(format!("{}.json", config.name));
    let mut f = File::create(json_path)?;
    f.write_all(serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?.as_bytes())?;
    Ok(report)
}

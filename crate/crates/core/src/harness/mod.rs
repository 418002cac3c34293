//! Experiment driver: excitation sequences, SER metrics, sweeps and the
//! flatness and isometry reports.

mod experiment;
mod metrics;
mod sequence;

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bloch::{unit_response, ExcitationSequence, TissueParams};
use crate::dictionary::chord_flatness;
use crate::error::{Error, Result};
use crate::phantom::TissueTable;
use crate::rng::{stream_rng, Stream};
use crate::sampling::{chord_isometry_mc, IsometryStats};

pub use experiment::{
    run_cell, run_experiment, Algorithm, AlgorithmMetrics, Cell, CellProblem, CellRecord,
    ExperimentConfig, ExperimentReport, PhantomSource, PhantomSpec, ReconSpec, CSV_SCHEMA_VERSION,
};
pub use metrics::{expand_mask, ser_db, ser_db_real};
pub use sequence::{generate_sequence, SequenceSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessRow {
    pub length: usize,
    pub tissue_a: String,
    pub tissue_b: String,
    pub flatness: f64,
    /// `lambda^-2 / L`.
    pub normalized: f64,
}

/// Flatness of the chord between the density-scaled responses of every
/// pair of distinct tissues, for each prefix length of `seq`. Pairs with
/// identical responses are skipped.
pub fn flatness_report(table: &TissueTable, seq: &ExcitationSequence, lengths: &[usize]) -> Result<Vec<FlatnessRow>> {
    let tissues = table.distinct_tissues();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    if max_len > seq.len() {
        return Err(Error::InvalidParameter(format!(
            "length {max_len} exceeds the sequence length {}",
            seq.len()
        )));
    }
    let responses: Vec<Vec<Complex64>> = tissues
        .iter()
        .map(|t| {
            unit_response(&TissueParams::new(t.t1, t.t2, 0.0), seq)
                .map(|r| r.into_iter().map(|v| v * t.rho).collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &l in lengths {
        if l == 0 {
            return Err(Error::InvalidParameter("flatness length must be positive".into()));
        }
        for a in 0..tissues.len() {
            for b in a + 1..tissues.len() {
                let chord: Vec<Complex64> = responses[a][..l]
                    .iter()
                    .zip(&responses[b][..l])
                    .map(|(x, y)| x - y)
                    .collect();
                if chord.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                    continue;
                }
                let f = chord_flatness(&chord)?;
                rows.push(FlatnessRow {
                    length: l,
                    tissue_a: tissues[a].name.clone(),
                    tissue_b: tissues[b].name.clone(),
                    flatness: f,
                    normalized: 1.0 / (f * f * l as f64),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_flatness_csv(rows: &[FlatnessRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["length", "tissue_a", "tissue_b", "flatness", "inv_sq_flatness_over_length"])?;
    for r in rows {
        w.write_record(&[
            r.length.to_string(),
            r.tissue_a.clone(),
            r.tissue_b.clone(),
            r.flatness.to_string(),
            r.normalized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Alias matrices for the isometry Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliasKind {
    /// Unit-modulus entries with uniform random phase: every row attains
    /// the minimum flatness `L^{-1/2}`.
    Flat,
    /// I.i.d. standard complex Gaussian entries.
    Gaussian,
}

impl std::str::FromStr for AliasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(AliasKind::Flat),
            "gaussian" => Ok(AliasKind::Gaussian),
            _ => Err(Error::Config(format!("unknown alias matrix kind '{s}' (flat or gaussian)"))),
        }
    }
}

pub fn alias_matrix(kind: AliasKind, undersampling: usize, length: usize, seed: u64) -> Array2<Complex64> {
    let mut rng = stream_rng(seed, Stream::Test);
    match kind {
        AliasKind::Flat => Array2::from_shape_fn((undersampling, length), |_| {
            Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        }),
        AliasKind::Gaussian => {
            let normal = rand_distr::StandardNormal;
            Array2::from_shape_fn((undersampling, length), |_| {
                let re: f64 = rng.sample(normal);
                let im: f64 = rng.sample(normal);
                Complex64::new(re, im)
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryRow {
    pub epsilon: f64,
    pub tail_frequency: f64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryReport {
    pub kind: AliasKind,
    pub undersampling: usize,
    pub length: usize,
    pub trials: usize,
    pub seed: u64,
    pub flatness: f64,
    pub mean_ratio: f64,
    pub tails: Vec<IsometryRow>,
}

pub fn isometry_report(
    kind: AliasKind,
    undersampling: usize,
    length: usize,
    trials: usize,
    epsilons: &[f64],
    seed: u64,
) -> Result<(IsometryReport, IsometryStats)> {
    if undersampling == 0 || length == 0 {
        return Err(Error::InvalidParameter("alias matrix needs p >= 1 and L >= 1".into()));
    }
    let u = alias_matrix(kind, undersampling, length, seed);
    let stats = chord_isometry_mc(u.view(), trials, seed)?;
    let tails = epsilons
        .iter()
        .map(|&e| IsometryRow {
            epsilon: e,
            tail_frequency: stats.tail_frequency(e),
            tail_bound: stats.tail_bound(e),
        })
        .collect();
    let report = IsometryReport {
        kind,
        undersampling,
        length,
        trials,
        seed,
        flatness: stats.flatness,
        mean_ratio: stats.mean(),
        tails,
    };
    Ok((report, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatness_rows_cover_distinct_pairs() {
        let seq = generate_sequence(300, &SequenceSpec::default(), 3).unwrap();
        let rows = flatness_report(&TissueTable::standard(), &seq, &[100, 300]).unwrap();
        // Five distinct tissues, so ten pairs per length.
        assert_eq!(rows.len(), 20);
        for r in &rows {
            assert!(r.flatness >= (r.length as f64).powf(-0.5) - 1e-15 && r.flatness <= 1.0);
            assert_ne!(r.tissue_a, r.tissue_b);
        }
        assert!(flatness_report(&TissueTable::standard(), &seq, &[301]).is_err());
    }

    #[test]
    fn flat_alias_matrix_is_flat() {
        let u = alias_matrix(AliasKind::Flat, 4, 50, 1);
        for row in u.rows() {
            let f = chord_flatness(&row.to_vec()).unwrap();
            assert!((f - 50f64.powf(-0.5)).abs() < 1e-12);
        }
    }
}

//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::f64::consts::FRAC_PI_4;
use std::time::{Duration, Instant};

use blip::bloch::{ode_oracle_response, TissueParams, VoxelParams};
use blip::dictionary::{BlochDictionary, DensityModel, ParameterGrid};
use blip::harness::{
    flatness_report, generate_sequence, isometry_report, AliasKind, Algorithm, AlgorithmMetrics, Cell, CellProblem,
    ExperimentConfig, SequenceSpec,
};
use blip::image::ImageSequence;
use blip::phantom::{TissueTable, ValueMode};
use blip::recon::{
    blip_reconstruct, haar2, ihaar2, mrf_reconstruct, project, ReconConfig, ReconResult, Regularization,
    StepMode,
};
use blip::rng::{stream_rng, Stream};
use blip::sampling::{dft2, idft2, Acquisition, KSpaceSequence, SamplingPattern, SamplingSchedule};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

const SEED: u64 = 1;
/// Relative roundoff allowed when checking that the consistency error never
/// increases.
const MONOTONE_SLACK: f64 = 1e-12;

struct Suite {
    failures: Vec<u32>,
    /// (run label, consistency errors) of every adaptive BLIP run.
    adaptive_runs: Vec<(String, Vec<f64>)>,
}

impl Suite {
    fn record(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce(&mut Suite) -> (bool, String)) {
        let start = Instant::now();
        let (ok, detail) = f(self);
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = ok && in_time;
        if !pass {
            self.failures.push(id);
        }
        let time_note = if in_time {
            String::new()
        } else {
            format!(" [over the {:.0} s limit]", limit.as_secs_f64())
        };
        println!(
            "[{}] criterion {id:>2}: {name}: {detail} ({:.1} s){time_note}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }

    fn track(&mut self, label: String, r: &ReconResult) {
        self.adaptive_runs.push((label, r.consistency_errors.clone()));
    }
}

fn monotone(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK))
}

fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn random_complex(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
    let mut rng = stream_rng(seed, Stream::Test);
    Array2::from_shape_fn((rows, cols), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn desk_config(values: ValueMode) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: SEED,
        image_side: 64,
        ..Default::default()
    };
    c.phantom.values = values;
    c
}

fn cell(pattern: SamplingPattern, undersampling: usize, length: usize) -> Cell {
    Cell {
        pattern,
        undersampling,
        length,
    }
}

fn bloch_vs_ode(_: &mut Suite) -> (bool, String) {
    let seq = generate_sequence(50, &SequenceSpec::default(), SEED).unwrap();
    let mut worst: f64 = 0.0;
    for t in TissueTable::standard().distinct_tissues() {
        let v = VoxelParams::new(t.t1, t.t2, 0.0, t.rho);
        let rec = blip::bloch::simulate_response(&v, &seq).unwrap();
        let ode = ode_oracle_response(&v, &seq, 1e-10).unwrap();
        worst = worst.max(rel_l2(&rec, &ode));
    }
    (worst < 1e-6, format!("worst relative l2 error {worst:.2e} over 5 tissues (limit 1e-6)"))
}

fn operator_algebra(_: &mut Suite) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for (k, side) in [8usize, 16, 64].into_iter().enumerate() {
        let seed = 100 + k as u64;
        let p = if side == 8 { 2 } else { 8 };
        let h = Acquisition::new(SamplingSchedule::random_epi(side, p, 4, seed).unwrap()).unwrap();
        let x = ImageSequence::new(side, random_complex(side * side, 4, seed)).unwrap();
        let y = KSpaceSequence::new(random_complex(h.schedule().measurements(), 4, seed + 7));
        let hx = h.forward(&x).unwrap();
        let hty = h.adjoint(&y).unwrap();
        let lhs: Complex64 = hx.samples().iter().zip(y.samples().iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = x.data().iter().zip(hty.data().iter()).map(|(a, b)| a.conj() * b).sum();
        worst = worst.max((lhs - rhs).norm() / lhs.norm());
        let back = h.forward(&hty).unwrap();
        let e: f64 = back.samples().iter().zip(y.samples().iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        worst = worst.max((e / y.norm_sqr()).sqrt());

        let img = random_complex(side, side, seed + 11);
        let spec = dft2(&img).unwrap();
        let ei: f64 = img.iter().map(|v| v.norm_sqr()).sum();
        let es: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        worst = worst.max((ei - es).abs() / ei);
        let rt = idft2(&spec).unwrap();
        let e: f64 = rt.iter().zip(img.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        worst = worst.max((e / ei).sqrt());

        let real = img.mapv(|v| v.re);
        let c = haar2(real.view()).unwrap();
        let er: f64 = real.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        worst = worst.max((er - ec).abs() / er);
        let rb = ihaar2(c.view()).unwrap();
        let e: f64 = rb.iter().zip(real.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        worst = worst.max((e / er).sqrt());
    }
    (
        worst < 1e-10,
        format!("adjoint, co-isometry, DFT Parseval/round trip, Haar Parseval/round trip at 8, 16, 64: worst relative deviation {worst:.1e} (limit 1e-10)"),
    )
}

fn exact_recovery(suite: &mut Suite) -> (bool, String) {
    let config = desk_config(ValueMode::OnGrid);
    let maps = config.build_phantom().unwrap();
    let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::RandomEpi, 1, 100)).unwrap();
    let oracle = problem.reconstruct(&config, Algorithm::Oracle).unwrap();
    let adaptive = problem.reconstruct(&config, Algorithm::Blip).unwrap();
    suite.track("p=1 on-grid L=100".into(), &adaptive);
    let ratio_cfg = ReconConfig {
        step_mode: StepMode::Ratio,
        ..Default::default()
    };
    let ratio = blip_reconstruct(&problem.kspace, &problem.acquisition, &problem.dictionary, &ratio_cfg).unwrap();
    let truth: Vec<Option<TissueParams>> = (0..maps.voxels()).map(|i| maps.tissue(i)).collect();
    let theta_ok = adaptive.theta == truth && ratio.theta == truth && oracle.theta == truth;
    let mut rho_err: f64 = 0.0;
    for i in 0..maps.voxels() {
        let scale = maps.rho[i].max(1.0);
        rho_err = rho_err
            .max((ratio.rho[i].re - maps.rho[i]).abs() / scale)
            .max((ratio.rho[i].re - oracle.rho[i].re).abs() / scale);
    }
    (
        theta_ok && rho_err < 1e-12,
        format!(
            "theta maps equal truth and oracle: {theta_ok} (adaptive and mu=N/M); density max relative error {rho_err:.1e} with mu=N/M (limit 1e-12)"
        ),
    )
}

struct DeskRuns {
    blip: AlgorithmMetrics,
    blip_errors_monotone: bool,
}

fn desk_recovery(suite: &mut Suite, desk: &mut Option<DeskRuns>) -> (bool, String) {
    let mut config = desk_config(ValueMode::Table);
    config.recon.max_iters = 20;
    let maps = config.build_phantom().unwrap();
    let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::RandomEpi, 8, 200)).unwrap();
    let oracle = problem.evaluate(&config, &maps, Algorithm::Oracle).unwrap();
    let blip = problem.evaluate(&config, &maps, Algorithm::Blip).unwrap();
    let mrf = problem.evaluate(&config, &maps, Algorithm::MrfRescaled).unwrap();
    suite.adaptive_runs.push(("p=8 L=200 random EPI".into(), blip.consistency_errors.clone()));
    let gap = oracle.ser_image_db - blip.ser_image_db;
    let mrf_gap = blip.ser_image_db - mrf.ser_image_db;
    let ok = gap <= 1.0 && mrf_gap >= 8.0;
    let detail = format!(
        "image SER oracle {:.2} dB, BLIP {:.2} dB (gap {gap:.2}, limit 1), rescaled MRF {:.2} dB ({mrf_gap:.2} below BLIP, need 8)",
        oracle.ser_image_db, blip.ser_image_db, mrf.ser_image_db
    );
    *desk = Some(DeskRuns {
        blip_errors_monotone: monotone(&blip.consistency_errors),
        blip,
    });
    (ok, detail)
}

fn scaling_law(suite: &mut Suite) -> (bool, String) {
    let config = desk_config(ValueMode::Table);
    let maps = config.build_phantom().unwrap();
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for p in [4usize, 8, 16] {
        // Scan L upward on a grid that is uniform in log(L / p^2), step 2^(1/4).
        let mut found = None;
        let mut last = 0;
        for k in 0..24 {
            let r = 0.5 * 2f64.powf(k as f64 / 4.0);
            let l = (r * (p * p) as f64).round() as usize;
            if l == last {
                continue;
            }
            last = l;
            let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::RandomEpi, p, l)).unwrap();
            let oracle = problem.evaluate(&config, &maps, Algorithm::Oracle).unwrap();
            let blip = problem.evaluate(&config, &maps, Algorithm::Blip).unwrap();
            suite.adaptive_runs.push((format!("p={p} L={l} scan"), blip.consistency_errors.clone()));
            if blip.ser_image_db >= oracle.ser_image_db - 3.0 {
                found = Some(l);
                break;
            }
        }
        match found {
            Some(l) => {
                let ratio = l as f64 / (p * p) as f64;
                notes.push(format!("p={p}: L*={l} (L*/p^2={ratio:.3})"));
                ratios.push(ratio);
            }
            None => notes.push(format!("p={p}: no L reached oracle-3 dB")),
        }
    }
    let spread = if ratios.len() == 3 {
        ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        f64::INFINITY
    };
    (spread <= 2.0, format!("{}; max/min ratio {spread:.2} (limit 2)", notes.join(", ")))
}

fn convergence(suite: &mut Suite, desk: &Option<DeskRuns>) -> (bool, String) {
    let bad: Vec<&str> = suite
        .adaptive_runs
        .iter()
        .filter(|(_, e)| !monotone(e))
        .map(|(l, _)| l.as_str())
        .collect();
    let (below, final_err, desk_mono) = match desk {
        Some(d) => {
            let e = &d.blip.consistency_errors;
            let first = e.iter().position(|&v| v < 1e-3).map(|i| i + 1);
            (first.is_some() && e.len() <= 20, first, d.blip_errors_monotone)
        }
        None => (false, None, false),
    };
    let ok = bad.is_empty() && below && desk_mono;
    (
        ok,
        format!(
            "{} adaptive runs checked, non-monotone: {:?}; at p=8 L=200 the error is below 1e-3 from iteration {}",
            suite.adaptive_runs.len(),
            bad,
            final_err.map_or("never".to_string(), |i| i.to_string())
        ),
    )
}

fn flatness(_: &mut Suite) -> (bool, String) {
    let lengths: Vec<usize> = (1..=10).map(|k| 100 * k).collect();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut grows = true;
    let mut growth_min = f64::INFINITY;
    for seed in [SEED, SEED + 1, SEED + 2] {
        let seq = generate_sequence(1000, &SequenceSpec::default(), seed).unwrap();
        let rows = flatness_report(&TissueTable::standard(), &seq, &lengths).unwrap();
        for r in &rows {
            lo = lo.min(r.normalized);
            hi = hi.max(r.normalized);
        }
        for a in rows.iter().filter(|r| r.length == 100) {
            let b = rows
                .iter()
                .find(|r| r.length == 1000 && r.tissue_a == a.tissue_a && r.tissue_b == a.tissue_b)
                .unwrap();
            let g = (b.normalized * 1000.0) / (a.normalized * 100.0);
            growth_min = growth_min.min(g);
            grows &= g > 1.0;
        }
    }
    (
        lo >= 0.1 && hi <= 10.0 && grows,
        format!(
            "lambda^-2/L in [{lo:.3}, {hi:.3}] over 10 pairs, L=100..1000, 3 seeds (band [0.1, 10]); smallest lambda^-2 growth L=100 -> 1000: x{growth_min:.2}"
        ),
    )
}

fn isometry_mc(_: &mut Suite) -> (bool, String) {
    let eps = [0.25, 0.5];
    let mut ok = true;
    let mut notes = Vec::new();
    let (g, _) = isometry_report(AliasKind::Gaussian, 4, 200, 100_000, &eps, SEED).unwrap();
    let mean_ok = (g.mean_ratio - 1.0).abs() <= 0.01;
    ok &= mean_ok;
    notes.push(format!("gaussian U mean ratio {:.5}", g.mean_ratio));
    for (kind, l) in [(AliasKind::Gaussian, 200), (AliasKind::Flat, 200), (AliasKind::Flat, 1000)] {
        let (r, _) = isometry_report(kind, 4, l, 100_000, &eps, SEED + l as u64).unwrap();
        ok &= (r.mean_ratio - 1.0).abs() <= 0.01;
        for t in &r.tails {
            ok &= t.tail_frequency <= t.tail_bound;
            notes.push(format!(
                "{kind:?} L={l} eps={}: {:.2e} <= {:.2e}",
                t.epsilon, t.tail_frequency, t.tail_bound
            ));
        }
    }
    (ok, format!("p=4, 1e5 trials; {}", notes.join("; ")))
}

fn uniform_vs_variable(suite: &mut Suite, desk: &Option<DeskRuns>) -> (bool, String) {
    let config = desk_config(ValueMode::Table);
    let maps = config.build_phantom().unwrap();
    let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::VariableDensity, 8, 200)).unwrap();
    let vd = problem.evaluate(&config, &maps, Algorithm::Blip).unwrap();
    suite.adaptive_runs.push(("p=8 L=200 variable density".into(), vd.consistency_errors.clone()));
    let epi = desk.as_ref().map_or(f64::NAN, |d| d.blip.ser_t2_db);
    let gap = epi - vd.ser_t2_db;
    (
        gap >= 3.0,
        format!("T2 SER random EPI {epi:.2} dB, variable density {:.2} dB (gap {gap:.2}, need 3)", vd.ser_t2_db),
    )
}

fn complex_density(suite: &mut Suite, desk: &Option<DeskRuns>) -> (bool, String) {
    let mut config = desk_config(ValueMode::Table);
    config.phantom.corner_phase = FRAC_PI_4;
    config.recon.density_model = DensityModel::Complex;
    let maps = config.build_phantom().unwrap();
    let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::RandomEpi, 8, 200)).unwrap();
    let cplx = problem.evaluate(&config, &maps, Algorithm::Blip).unwrap();
    suite.adaptive_runs.push(("p=8 L=200 complex density".into(), cplx.consistency_errors.clone()));
    let real = desk.as_ref().map_or(f64::NAN, |d| d.blip.ser_t2_db);
    let gap = (real - cplx.ser_t2_db).abs();
    (
        gap <= 1.0,
        format!("T2 SER complex model with quadratic phase {:.2} dB, real model without phase {real:.2} dB (difference {gap:.2}, limit 1)", cplx.ser_t2_db),
    )
}

fn result_bits(r: &ReconResult) -> Vec<u64> {
    let mut out: Vec<u64> = r.rho.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect();
    out.extend(r.x_hat.data().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]));
    out.extend(r.consistency_errors.iter().map(|e| e.to_bits()));
    out
}

/// Minimum over atoms of the explicit residual `|x - c D_k|^2` with the
/// optimal scalar `c` for the model.
fn brute_force_distance(dict: &BlochDictionary, x: &[Complex64], model: DensityModel) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..dict.len() {
        let d = dict.atom(k);
        let dd: f64 = d.iter().map(|v| v.norm_sqr()).sum();
        let ip: Complex64 = d.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
        let c = match model {
            DensityModel::Real => Complex64::new((ip.re / dd).max(0.0), 0.0),
            DensityModel::Complex => ip / dd,
        };
        let r: f64 = d.iter().zip(x).map(|(a, b)| (b - a * c).norm_sqr()).sum();
        best = best.min(r);
    }
    best
}

fn equivalences(_: &mut Suite) -> (bool, String) {
    let config = ExperimentConfig {
        seed: SEED,
        image_side: 32,
        ..Default::default()
    };
    let maps = config.build_phantom().unwrap();
    let problem = CellProblem::new(&config, &maps, cell(SamplingPattern::RandomEpi, 4, 60)).unwrap();
    let (y, h, d) = (&problem.kspace, &problem.acquisition, &problem.dictionary);
    let one = ReconConfig {
        step_mode: StepMode::Unit,
        max_iters: 1,
        ..Default::default()
    };
    let mrf = mrf_reconstruct(y, h, d, &one).unwrap();
    let blip1 = blip_reconstruct(y, h, d, &one).unwrap();
    let mrf_eq = mrf.theta == blip1.theta && result_bits(&mrf) == result_bits(&blip1);

    let plain = blip_reconstruct(y, h, d, &ReconConfig::default()).unwrap();
    let full = ReconConfig {
        regularization: Regularization::Wavelet {
            retained: maps.voxels(),
        },
        ..Default::default()
    };
    let reg = blip_reconstruct(y, h, d, &full).unwrap();
    let reg_eq = plain.theta == reg.theta && result_bits(&plain) == result_bits(&reg);

    // Projection against explicit enumeration, P = 50 with complex atoms.
    let grid = ParameterGrid::new(
        vec![150.0, 400.0, 900.0, 1800.0, 4000.0],
        vec![30.0, 60.0, 100.0, 200.0, 500.0],
        vec![0.0, 17.0],
    )
    .unwrap();
    let seq = generate_sequence(40, &SequenceSpec::default(), SEED).unwrap();
    let dict = BlochDictionary::build(&grid, &seq).unwrap();
    let mut rng = stream_rng(SEED, Stream::Test);
    let trials = 1000;
    let mut x = Array2::zeros((trials, 40));
    for t in 0..trials {
        // Half pure noise, half a noisy scaled atom.
        let k = rng.random_range(0..dict.len());
        let a = if t % 2 == 0 { 0.0 } else { rng.random_range(0.1..50.0) };
        let ph = Complex64::from_polar(1.0, rng.random_range(0.0..6.3));
        for l in 0..40 {
            let noise = Complex64::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            x[[t, l]] = dict.atom(k)[l] * a * ph + noise;
        }
    }
    let mut worst: f64 = 0.0;
    for model in [DensityModel::Real, DensityModel::Complex] {
        let p = project(x.view(), &dict, model).unwrap();
        let synth = p.synthesize(&dict);
        for t in 0..trials {
            let row: Vec<Complex64> = x.row(t).to_vec();
            let ours: f64 = synth.row(t).iter().zip(&row).map(|(a, b)| (a - b).norm_sqr()).sum();
            let best = brute_force_distance(&dict, &row, model);
            let norm: f64 = row.iter().map(|v| v.norm_sqr()).sum();
            worst = worst.max((ours - best) / norm);
        }
    }
    let proj_ok = worst <= 1e-12;
    (
        mrf_eq && reg_eq && proj_ok,
        format!(
            "MRF(mu=1) == 1-iteration BLIP bitwise: {mrf_eq}; wavelet BLIP with k_w=N == BLIP bitwise: {reg_eq}; projection vs enumeration over 1000 inputs, P=50, both models: worst excess {worst:.1e} (limit 1e-12)"
        ),
    )
}

fn main() {
    // Honour `cargo test -- --list` style probing without running anything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut suite = Suite {
        failures: Vec::new(),
        adaptive_runs: Vec::new(),
    };
    let mut desk = None;
    let secs = Duration::from_secs;
    suite.record(1, "Bloch recursion vs ODE", secs(10), bloch_vs_ode);
    suite.record(2, "operator algebra", secs(5), operator_algebra);
    suite.record(3, "exact recovery at p=1", secs(30), exact_recovery);
    suite.record(4, "desk-scale CS recovery", secs(300), |s| desk_recovery(s, &mut desk));
    suite.record(5, "L vs p^2 scaling", secs(1200), scaling_law);
    suite.record(7, "sequence flatness", secs(60), flatness);
    suite.record(8, "chord isometry Monte Carlo", secs(60), isometry_mc);
    suite.record(9, "uniform vs variable density", secs(300), |s| uniform_vs_variable(s, &desk));
    suite.record(10, "complex density parity", secs(300), |s| complex_density(s, &desk));
    suite.record(11, "equivalences and brute-force projection", secs(120), equivalences);
    // Convergence is judged over every adaptive run made above.
    suite.record(6, "monotone convergence", secs(1), |s| convergence(s, &desk));
    if suite.failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", suite.failures);
        std::process::exit(1);
    }
}

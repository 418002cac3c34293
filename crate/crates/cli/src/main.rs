use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blip::bloch::ExcitationSequence;
use blip::dictionary::{write_dictionary, BlochDictionary};
use blip::harness::{
    flatness_report, generate_sequence, isometry_report, run_experiment, write_flatness_csv, AliasKind, Algorithm,
    ExperimentConfig, ExperimentReport, SequenceSpec,
};
use blip::phantom::{load_brainweb, PhantomMaps, TissueTable, BRAINWEB_SLICE};
use blip::sampling::SamplingPattern;
use blip::{Error, Result};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "blip", version, about = "Compressed quantitative MRI experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dictionary operations.
    Dict {
        #[command(subcommand)]
        command: DictCommand,
    },
    /// Phantom generation and export.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Run a config with its sweep lists overridden from the command line.
    Sweep(SweepArgs),
    /// Flatness of tissue-pair chords against sequence length.
    Flatness(FlatnessArgs),
    /// Monte Carlo of the chord isometry ratio under random EPI shifts.
    IsometryMc(IsometryArgs),
    /// Print the default experiment config as TOML.
    DefaultConfig,
}

#[derive(Subcommand)]
enum DictCommand {
    /// Simulate the dictionary for a generated sequence and write it to disk.
    Build {
        /// Config supplying grid and sequence settings; defaults are used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Build the phantom of a config and write its maps.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the synthetic layout ("ellipses" or "single:<label>").
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long, env = "BLIP_OUTPUT_DIR", default_value = ".")]
        output_dir: PathBuf,
    },
    /// Read a BrainWeb label volume and write the chosen slice.
    Load {
        path: PathBuf,
        #[arg(long, default_value_t = BRAINWEB_SLICE)]
        slice: usize,
        #[arg(long, env = "BLIP_OUTPUT_DIR", default_value = ".")]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct CommonRun {
    /// Experiment config in TOML.
    config: PathBuf,
    /// Where the CSV and JSON results go. Overrides the config.
    #[arg(long, env = "BLIP_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRun,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonRun,
    #[arg(long, value_delimiter = ',')]
    undersampling: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_pattern)]
    patterns: Option<Vec<SamplingPattern>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    algorithms: Option<Vec<Algorithm>>,
}

#[derive(Args)]
struct FlatnessArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 400, 600, 800, 1000])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = SequenceSpec::default().flip_std_deg)]
    flip_std_deg: f64,
    #[arg(long, default_value_t = SequenceSpec::default().tr_ms)]
    tr_ms: f64,
    /// CSV destination; printed to stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct IsometryArgs {
    /// Alias matrix: "flat" or "gaussian".
    #[arg(long, default_value = "gaussian")]
    kind: AliasKind,
    #[arg(long, short = 'p', default_value_t = 4)]
    undersampling: usize,
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_pattern(s: &str) -> std::result::Result<SamplingPattern, String> {
    [SamplingPattern::RandomEpi, SamplingPattern::VariableDensity]
        .into_iter()
        .find(|p| p.to_string() == s)
        .ok_or_else(|| format!("unknown pattern '{s}' (random_epi or variable_density)"))
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
        let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
        format!("unknown algorithm '{s}' (one of {})", names.join(", "))
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_common(c: &CommonRun) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&c.config)?;
    if let Some(d) = &c.output_dir {
        config.output_dir = d.clone();
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(n) = &c.name {
        config.name = n.clone();
    }
    Ok(config)
}

fn summarize(report: &ExperimentReport) {
    for cell in &report.cells {
        for m in &cell.metrics {
            println!(
                "{} {:<13} iters {:>3}  SER image {:>7.2} dB  rho {:>7.2}  T1 {:>7.2}  T2 {:>7.2}  ({:.2} s)",
                cell.cell,
                m.algorithm.name(),
                m.iterations,
                m.ser_image_db,
                m.ser_rho_db,
                m.ser_t1_db,
                m.ser_t2_db,
                m.runtime_s
            );
        }
    }
}

fn run(config: ExperimentConfig) -> Result<()> {
    let report = run_experiment(&config)?;
    summarize(&report);
    eprintln!(
        "wrote {} (config hash {})",
        config.output_dir.join(format!("{}.csv", config.name)).display(),
        report.config_hash
    );
    Ok(())
}

fn write_maps(maps: &PhantomMaps, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    maps.write_csv(&dir.join("phantom.csv"))?;
    PhantomMaps::write_pgm(&maps.rho, maps.side, &dir.join("rho.pgm"))?;
    PhantomMaps::write_pgm(&maps.t1, maps.side, &dir.join("t1.pgm"))?;
    PhantomMaps::write_pgm(&maps.t2, maps.side, &dir.join("t2.pgm"))?;
    eprintln!(
        "wrote {side}x{side} phantom ({} foreground voxels) to {}",
        maps.foreground_count(),
        dir.display(),
        side = maps.side
    );
    Ok(())
}

fn build_dictionary(config: &ExperimentConfig, length: usize, seed: u64, output: &Path) -> Result<()> {
    let seq: ExcitationSequence = generate_sequence(length, &config.sequence, seed)?;
    let dict = BlochDictionary::build(&config.grid(), &seq)?;
    write_dictionary(&dict, output)?;
    eprintln!("wrote {} atoms of length {length} to {}", dict.len(), output.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dict {
            command:
                DictCommand::Build {
                    config,
                    length,
                    seed,
                    output,
                },
        } => {
            let config = load_config(config.as_deref())?;
            build_dictionary(&config, length, seed.unwrap_or(config.seed), &output)
        }
        Command::Phantom {
            command:
                PhantomCommand::Gen {
                    config,
                    layout,
                    side,
                    output_dir,
                },
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(l) = layout {
                config.phantom.layout = l;
            }
            if let Some(s) = side {
                config.image_side = s;
            }
            config.validate()?;
            write_maps(&config.build_phantom()?, &output_dir)
        }
        Command::Phantom {
            command: PhantomCommand::Load {
                path,
                slice,
                output_dir,
            },
        } => write_maps(&load_brainweb(&path, slice, &TissueTable::standard())?, &output_dir),
        Command::Run(args) => run(apply_common(&args.common)?),
        Command::Sweep(args) => {
            let mut config = apply_common(&args.common)?;
            if let Some(v) = args.undersampling {
                config.undersampling = v;
            }
            if let Some(v) = args.lengths {
                config.lengths = v;
            }
            if let Some(v) = args.patterns {
                config.patterns = v;
            }
            if let Some(v) = args.algorithms {
                config.algorithms = v;
            }
            run(config)
        }
        Command::Flatness(args) => {
            let spec = SequenceSpec {
                flip_std_deg: args.flip_std_deg,
                tr_ms: args.tr_ms,
                ..Default::default()
            };
            let max = args.lengths.iter().copied().max().unwrap_or(0);
            let seq = generate_sequence(max, &spec, args.seed).map_err(|e| Error::Config(e.to_string()))?;
            let rows = flatness_report(&TissueTable::standard(), &seq, &args.lengths)?;
            match args.output {
                Some(path) => write_flatness_csv(&rows, &path),
                None => {
                    println!("length,tissue_a,tissue_b,flatness,normalized");
                    for r in rows {
                        println!("{},{},{},{},{}", r.length, r.tissue_a, r.tissue_b, r.flatness, r.normalized);
                    }
                    Ok(())
                }
            }
        }
        Command::IsometryMc(args) => {
            let (report, _) =
                isometry_report(args.kind, args.undersampling, args.length, args.trials, &args.eps, args.seed)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?
            );
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::NotPowerOfTwo(_) | Error::Format { .. } => EXIT_CONFIG,
        Error::Cell { source, .. } => exit_code(source),
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use stftpr::altproj::{self, AltProjConfig, AltProjMethod};
use stftpr::direct::{construct_shift_ambiguity, direct_recover, random_separated_ambiguity, ShiftAmbiguitySpec};
use stftpr::gespar::{gespar_solve, GesparConfig, QuadraticProblem};
use stftpr::harness::{
    export_results, read_measurements, read_signal, run_experiment, write_measurements, write_signal, ExperimentConfig,
    ExportFormat, PanelBy, PlotMetric,
};
use stftpr::primitives::rng_from_seed;
use stftpr::{build_measurement_operator, check_uniqueness_conditions, make_window, measure, Dictionary, Error, Signal, WindowKind};

#[derive(Parser)]
#[command(name = "stftpr", version, about = "Phase retrieval from STFT magnitudes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    StftGespar,
    Gla,
    Pcgp,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Square,
}

#[derive(Clone, Copy, ValueEnum)]
enum DictArg {
    Identity,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum AmbiguityKind {
    /// Two well-separated pieces, one with its sign flipped.
    Separated,
    /// A short segment displaced inside a guarded block.
    Shift,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a signal from a measurement file.
    Recover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "square")]
        window: WindowArg,
        /// Expected stride; checked against the file header.
        #[arg(long = "L")]
        hop: Option<usize>,
        /// Expected DFT length; checked against the file header.
        #[arg(long = "K")]
        bins: Option<usize>,
        /// Sparsity for GESPAR.
        #[arg(long = "k", default_value_t = 1)]
        sparsity: usize,
        /// Stopping threshold on the objective, relative to the sum of squared measurements.
        #[arg(long, default_value_t = 1e-4)]
        tau: f64,
        #[arg(long = "max-swaps", default_value_t = 50_000)]
        max_swaps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sparsity basis for GESPAR.
        #[arg(long, value_enum, default_value = "identity")]
        dictionary: DictArg,
        /// Seed of the random dictionary.
        #[arg(long = "dictionary-seed", default_value_t = 0)]
        dictionary_seed: u64,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        /// Write the estimate here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute the spectrogram of a signal file.
    Measure {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long = "W")]
        w: usize,
        #[arg(long = "L")]
        hop: usize,
        #[arg(long = "K")]
        bins: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a sweep described by a TOML file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit two signals with identical spectrograms.
    Ambiguity {
        #[arg(long, value_enum, default_value = "shift")]
        kind: AmbiguityKind,
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "W")]
        w: usize,
        #[arg(long = "L")]
        hop: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for u.txt and v.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the sufficient conditions for unique recovery at L = 1.
    CheckConditions {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "W")]
        w: usize,
        #[arg(long, value_enum, default_value = "square")]
        window: WindowArg,
    },
}

fn window_kind(_w: WindowArg) -> WindowKind {
    WindowKind::Square
}

fn emit_signal(x: &Signal, output: Option<&Path>) -> stftpr::Result<()> {
    match output {
        Some(p) => write_signal(p, x),
        None => {
            print!("{}", stftpr::harness::format_signal(x));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> stftpr::Result<()> {
    match cli.command {
        Command::Recover {
            input,
            method,
            window,
            hop,
            bins,
            sparsity,
            tau,
            max_swaps,
            seed,
            dictionary,
            dictionary_seed,
            restarts,
            iterations,
            output,
        } => {
            let file = read_measurements(&input)?;
            if hop.is_some_and(|l| l != file.hop) || bins.is_some_and(|k| k != file.bins) {
                return Err(Error::Validation(format!(
                    "flags disagree with the file header (L={}, K={})",
                    file.hop, file.bins
                )));
            }
            let g = make_window(window_kind(window), file.w, file.n, 0)?;
            let y = file.into_measurements(&g)?;
            let estimate = match method {
                MethodArg::Direct => direct_recover(&y, &g)?,
                MethodArg::Gla | MethodArg::Pcgp => {
                    let config = AltProjConfig {
                        max_iterations: iterations,
                        restarts,
                        rng_seed: seed,
                        method: if matches!(method, MethodArg::Gla) { AltProjMethod::Gla } else { AltProjMethod::Pcgp },
                        ..AltProjConfig::default()
                    };
                    let r = altproj::run(&y, &g, &config)?;
                    eprintln!("residual {:e} (restart {})", r.final_residual(), r.best_restart);
                    r.estimate
                }
                MethodArg::StftGespar => {
                    let n = y.geometry.n;
                    let dict = match dictionary {
                        DictArg::Identity => Dictionary::identity(n),
                        DictArg::Gaussian => Dictionary::gaussian(n, n, &mut rng_from_seed(dictionary_seed)),
                    };
                    let op = build_measurement_operator(&g, y.geometry.hop, y.geometry.bins, &dict)?;
                    let problem = QuadraticProblem::new(&op, y.y.clone())?;
                    let config = GesparConfig {
                        tau,
                        max_total_swaps: max_swaps,
                        ..GesparConfig::new(sparsity, seed)
                    };
                    let r = gespar_solve(&problem, &config)?;
                    eprintln!(
                        "objective {:e}, swaps {}, converged {}, support {:?}",
                        r.objective_value, r.swaps_used, r.converged, r.support
                    );
                    if !r.converged {
                        emit_signal(&dict.synthesize(&r.coefficients)?, output.as_deref())?;
                        return Err(Error::NotConverged(format!("objective {:e} after {} swaps; best estimate written", r.objective_value, r.swaps_used)));
                    }
                    dict.synthesize(&r.coefficients)?
                }
            };
            emit_signal(&estimate, output.as_deref())
        }
        Command::Measure {
            signal,
            w,
            hop,
            bins,
            output,
        } => {
            let x = read_signal(&signal)?;
            let g = make_window(WindowKind::Square, w, x.len(), 0)?;
            write_measurements(&output, &measure(&x, &g, hop, bins)?)
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            std::fs::create_dir_all(&out)?;
            let table = run_experiment(&cfg)?;
            export_results(&table, ExportFormat::Csv, &out.join("results.csv"))?;
            let panel_by = if cfg.l_values.len() > 1 {
                PanelBy::Hop
            } else if cfg.snr_db_values.len() > 1 {
                PanelBy::Snr
            } else {
                PanelBy::Bins
            };
            for (metric, name) in [(PlotMetric::SuccessRate, "success.svg"), (PlotMetric::MeanNmse, "nmse.svg")] {
                export_results(&table, ExportFormat::Svg { metric, panel_by }, &out.join(name))?;
            }
            let failed = table.trials.iter().filter(|t| t.diagnostic.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} trials raised errors, e.g. {}", table.trials.iter().find_map(|t| t.diagnostic.clone()).unwrap());
            }
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Ambiguity { kind, n, w, hop, seed, out } => {
            let pair = match kind {
                AmbiguityKind::Shift => construct_shift_ambiguity(&ShiftAmbiguitySpec {
                    n,
                    w,
                    hop,
                    segment_length: hop.saturating_sub(1),
                    segment_position: hop + 1,
                    shift: 1,
                    phase: Complex64::new(-1.0, 0.0),
                    seed,
                })?,
                AmbiguityKind::Separated => random_separated_ambiguity(n, w, hop, seed)?,
            };
            std::fs::create_dir_all(&out)?;
            write_signal(&out.join("u.txt"), &pair.u)?;
            write_signal(&out.join("v.txt"), &pair.v)?;
            let gap = pair.spectrogram_gap(hop, n)?;
            println!("supports {:?}", pair.certificate.supports.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>());
            println!("strides {:?}", pair.certificate.admissible_strides());
            println!("relative spectrogram gap at L={hop}: {gap:e}");
            Ok(())
        }
        Command::CheckConditions { n, w, window } => {
            let g = make_window(window_kind(window), w, n, 0)?;
            let r = check_uniqueness_conditions(&g, n)?;
            println!("N={n} W={w}");
            println!("(i)   DFT of |g|^2 nonvanishing: {} (min |.| = {:e} at bin {})", r.cond_i, r.min_abs_dft_of_v, r.argmin_bin);
            println!("(ii)  N >= 2W - 1: {}", r.cond_ii);
            println!("(iii) gcd(N, W - 1) = 1: {}", r.cond_iii);
            if let Some(s) = r.square_shortcut {
                println!("square window: gcd(N, W) = 1: {s}");
            }
            println!("unique recovery guaranteed: {}", r.all_hold());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

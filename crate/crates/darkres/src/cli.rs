//! Command-line front end: `simulate | resonances | synth | fit | relax`.
//!
//! Every subcommand reads a JSON config whose numeric keys carry unit
//! suffixes (`rabi_397_mhz`, `temperature_mk`, ...), optionally overridden
//! by `DARKRES_`-prefixed environment variables, and writes plot-ready CSV
//! or JSON. Exit status 0 means success, 1 a user error (bad flags, config
//! or input files), 2 a numerical failure (degenerate steady state,
//! non-converged fit).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::io::{
    read_config, read_relaxation_csv, read_spectrum_csv, synthesize_measurement, write_model_csv,
    write_result, write_spectrum_csv, LoadedConfig, RunConfig,
};
use crate::spectrum::{
    local_minima, locate_dark_resonances, spectrum_cold, spectrum_thermal_effective,
    spectrum_thermal_quadrature, Spectrum,
};
use crate::thermometry::{
    fit_exponential_relaxation, fit_spectrum_lsq, fit_spectrum_mcmc, ChainSettings, FitModel,
    FitParameters, ForwardModel, Priors,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "darkres",
    version,
    about = "Dark-resonance spectra and thermometry for a single trapped ion"
)]
pub struct Cli {
    /// Cap on worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Lineshape model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Ion at rest, no thermal broadening.
    Cold,
    /// Thermal width added to the 866 nm dephasing channel (fast).
    Effective,
    /// Velocity-class average by Gauss-Hermite quadrature (slow, accurate).
    Quadrature,
}

/// Estimator selector for `fit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Posterior sampling with credible intervals.
    Mcmc,
    /// Weighted least squares with covariance errors.
    Lsq,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a model spectrum, write CSV (detuning_mhz, fluorescence).
    Simulate {
        /// JSON config path; numeric keys carry unit suffixes (MHz, mK,
        /// tesla, nm, rad, us, amu).
        #[arg(long)]
        config: PathBuf,
        /// Lineshape model.
        #[arg(long, value_enum, default_value_t = Method::Effective)]
        method: Method,
        /// Output CSV path.
        #[arg(long, default_value = "spectrum.csv")]
        out: PathBuf,
    },
    /// Print the four predicted dark-resonance positions in MHz.
    Resonances {
        /// JSON config path (requires the 8-level calcium system).
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw a synthetic photon-count measurement from a model spectrum.
    Synth {
        /// JSON config path.
        #[arg(long)]
        config: PathBuf,
        /// Lineshape model behind the synthetic data.
        #[arg(long, value_enum, default_value_t = Method::Effective)]
        method: Method,
        /// Mean counts at the spectrum maximum; overrides the config value.
        #[arg(long)]
        photons: Option<u64>,
        /// RNG seed; equal seeds give byte-identical files.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (detuning_mhz, counts, exposure_us, reps).
        #[arg(long, default_value = "measurement.csv")]
        out: PathBuf,
    },
    /// Fit a measured spectrum; prints the temperature in mK.
    Fit {
        /// Measured spectrum CSV (detuning_mhz, counts, exposure_us, reps).
        data: PathBuf,
        /// JSON config path; fit_free picks the free parameters.
        #[arg(long)]
        config: PathBuf,
        /// Estimator.
        #[arg(long, value_enum, default_value_t = Mode::Mcmc)]
        mode: Mode,
        /// Output JSON path.
        #[arg(long, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Fit a·exp(-t/tau) + c to a temperature series; prints tau in us.
    Relax {
        /// Series CSV (time_us, temperature_mk, sigma_mk).
        series: PathBuf,
        /// Output JSON path.
        #[arg(long, default_value = "relaxation.json")]
        out: PathBuf,
    },
}

/// What a subcommand did: exit status, files written, one summary line.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub status: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

/// Parse arguments, dispatch, print the summary, return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let status = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return status;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        // fails harmlessly if a pool already exists in this process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match cli.command {
        Command::Simulate {
            config,
            method,
            out,
        } => cmd_simulate(&config, method, &out),
        Command::Resonances { config } => cmd_resonances(&config),
        Command::Synth {
            config,
            method,
            photons,
            seed,
            out,
        } => cmd_synth(&config, method, photons, seed, &out),
        Command::Fit {
            data,
            config,
            mode,
            out,
        } => cmd_fit(&data, &config, mode, &out),
        Command::Relax { series, out } => cmd_relax(&series, &out),
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let LoadedConfig { config, warnings } = read_config(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn model_spectrum(cfg: &RunConfig, method: Method) -> Result<Spectrum> {
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;
    let grid = cfg.grid()?;
    match method {
        Method::Cold => spectrum_cold(&sys, &da, &db, &field, &grid),
        Method::Effective => spectrum_thermal_effective(
            &sys,
            &da,
            &db,
            &field,
            &grid,
            &cfg.thermal()?,
            &cfg.geometry()?,
        ),
        Method::Quadrature => spectrum_thermal_quadrature(
            &sys,
            &da,
            &db,
            &field,
            &grid,
            &cfg.thermal()?,
            &cfg.geometry()?,
            cfg.quadrature_nodes,
        ),
    }
}

pub fn cmd_simulate(config: &Path, method: Method, out: &Path) -> Result<CommandOutcome> {
    let cfg = load_config(config)?;
    let spec = model_spectrum(&cfg, method)?;
    write_model_csv(&spec, out)?;
    let minima = local_minima(&spec.fluorescence);
    let (lo, hi) = spec
        .fluorescence
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    Ok(CommandOutcome {
        status: 0,
        artifacts: vec![out.to_path_buf()],
        summary: format!(
            "wrote {} ({} points, fluorescence {:.4e}..{:.4e}, {} resonance minima)",
            out.display(),
            spec.detuning_mhz.len(),
            lo,
            hi,
            minima.len()
        ),
    })
}

pub fn cmd_resonances(config: &Path) -> Result<CommandOutcome> {
    let cfg = load_config(config)?;
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;
    let offsets = locate_dark_resonances(&sys, &da, &db, &field)?;
    for o in &offsets {
        println!(
            "two-photon offset {:+9.3} MHz -> delta_866 {:+9.3} MHz",
            o,
            cfg.detuning_397_mhz + o
        );
    }
    let mut summary = format!(
        "4 dark resonances at two-photon offsets [{}] MHz",
        offsets
            .iter()
            .map(|o| format!("{o:+.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if offsets.iter().all(|&o| o == 0.0) {
        summary.push_str(" (degenerate: all four coincide at B = 0)");
    }
    Ok(CommandOutcome {
        status: 0,
        artifacts: Vec::new(),
        summary,
    })
}

pub fn cmd_synth(
    config: &Path,
    method: Method,
    photons: Option<u64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<CommandOutcome> {
    let cfg = load_config(config)?;
    let spec = model_spectrum(&cfg, method)?;
    let photons = photons.unwrap_or(cfg.photons_per_point);
    let seed = seed.unwrap_or(cfg.seed);
    let mut ms = synthesize_measurement(&spec, photons, seed)?;
    let n = ms.len();
    ms.exposure_us = vec![cfg.exposure_us; n];
    ms.reps = vec![cfg.reps; n];
    ms.equilibration_detuning_mhz = cfg.equilibration_detuning_mhz;
    write_spectrum_csv(&ms, out)?;
    let total: u64 = ms.counts.iter().sum();
    Ok(CommandOutcome {
        status: 0,
        artifacts: vec![out.to_path_buf()],
        summary: format!(
            "wrote {} ({} points, {} total counts, max {}, seed {})",
            out.display(),
            n,
            total,
            ms.counts.iter().max().copied().unwrap_or(0),
            seed
        ),
    })
}

#[derive(Serialize)]
struct TemperatureBound {
    temperature_lower_bound_mk: f64,
}

pub fn cmd_fit(data_path: &Path, config: &Path, mode: Mode, out: &Path) -> Result<CommandOutcome> {
    let cfg = load_config(config)?;
    let data = read_spectrum_csv(data_path)?;
    let mut model = ForwardModel::new(
        cfg.level_system()?,
        cfg.drives()?.0,
        cfg.drives()?.1,
        cfg.geometry()?,
        data.detuning_mhz.clone(),
        FitModel::from_config(&cfg)?,
    )?;
    let mut init = FitParameters::from_config(&cfg)?;
    // scale the amplitude guess so the model peak matches the data peak
    let f0 = model.values_exact(&init)?;
    let fmax = f0.iter().cloned().fold(0.0, f64::max);
    let cmax = data.counts.iter().max().copied().unwrap_or(0) as f64;
    if fmax > 0.0 && cmax > 0.0 {
        init.amplitude = cmax / fmax;
    }
    let priors = Priors::from_config(&cfg)?.for_data(&data);
    let result = match mode {
        Mode::Mcmc => {
            let settings = ChainSettings::from_config(&cfg)?;
            fit_spectrum_mcmc(&data, &mut model, &init, &priors, &settings)
        }
        Mode::Lsq => fit_spectrum_lsq(&data, &mut model, &init, &priors),
    };
    match result {
        Ok(fit) => {
            write_result(&fit, &cfg, out)?;
            let summary = match fit.interval("temperature") {
                Some(stat) => format!(
                    "T = {:.4} ± {:.4} mK (deviance {:.1}, wrote {})",
                    fit.point.t_mk,
                    stat.sigma,
                    fit.deviance,
                    out.display()
                ),
                None => format!(
                    "fit converged (deviance {:.1}, wrote {})",
                    fit.deviance,
                    out.display()
                ),
            };
            Ok(CommandOutcome {
                status: 0,
                artifacts: vec![out.to_path_buf()],
                summary,
            })
        }
        // a posterior running into the prior ceiling is a result, not a
        // failure: report the lower bound
        Err(Error::TemperatureUnbounded { lower_bound_mk }) => {
            let doc = TemperatureBound {
                temperature_lower_bound_mk: lower_bound_mk,
            };
            write_result(&doc, &cfg, out)?;
            Ok(CommandOutcome {
                status: 0,
                artifacts: vec![out.to_path_buf()],
                summary: format!(
                    "T > {:.1} mK (temperature unbounded above; wrote {})",
                    lower_bound_mk,
                    out.display()
                ),
            })
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_relax(series_path: &Path, out: &Path) -> Result<CommandOutcome> {
    let series = read_relaxation_csv(series_path)?;
    let fit = fit_exponential_relaxation(&series)?;
    let doc = serde_json::json!({ "result": fit });
    std::fs::write(
        out,
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n",
    )?;
    Ok(CommandOutcome {
        status: 0,
        artifacts: vec![out.to_path_buf()],
        summary: format!(
            "tau = {:.2} ± {:.2} us (amplitude {:.2} mK, offset {:.2} mK, wrote {})",
            fit.tau_us,
            fit.tau_err_us,
            fit.amplitude_mk,
            fit.offset_mk,
            out.display()
        ),
    })
}

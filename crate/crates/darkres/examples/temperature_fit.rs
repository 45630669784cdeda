//! Full thermometry round trip: synthesize a photon-count measurement at a
//! known temperature, then recover it with the posterior sampler.

use darkres::io::{synthesize_measurement, RunConfig};
use darkres::spectrum::{spectrum_thermal_effective, ThermalState};
use darkres::thermometry::{
    fit_spectrum_mcmc, ChainSettings, FitModel, FitParameters, ForwardModel, Priors,
};

fn main() -> darkres::Result<()> {
    let t_true_mk = 3.1;
    let cfg = RunConfig::default();
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;
    let geom = cfg.geometry()?;
    let grid: Vec<f64> = (0..81).map(|i| -34.0 + 0.5 * i as f64).collect();

    let truth = spectrum_thermal_effective(
        &sys,
        &da,
        &db,
        &field,
        &grid,
        &ThermalState::new(t_true_mk)?,
        &geom,
    )?;
    let data = synthesize_measurement(&truth, 10_000, 42)?;
    println!(
        "synthesized {} points at T = {t_true_mk} mK, 10^4 counts at the peak",
        data.len()
    );

    let mut model =
        ForwardModel::new(cfg.level_system()?, da, db, geom, grid, FitModel::Effective)?;
    let mut init = FitParameters::from_config(&cfg)?;
    init.t_mk = 1.0; // deliberately wrong starting guess
    let peak = truth.fluorescence.iter().cloned().fold(0.0, f64::max);
    init.amplitude = 10_000.0 / peak;
    let priors = Priors::from_config(&cfg)?.for_data(&data);
    let settings = ChainSettings::from_config(&cfg)?;

    let fit = fit_spectrum_mcmc(&data, &mut model, &init, &priors, &settings)?;
    let stat = fit.interval("temperature").expect("temperature was free");
    println!(
        "posterior: T = {:.3} mK, 68% interval [{:.3}, {:.3}] mK",
        fit.point.t_mk, stat.lower, stat.upper
    );
    println!(
        "acceptance rate {:.2}, deviance {:.1} over {} points, {} posterior draws",
        fit.acceptance_rate.unwrap_or(f64::NAN),
        fit.deviance,
        data.len(),
        fit.samples.len()
    );
    Ok(())
}

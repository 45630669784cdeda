//! Compare the two thermal lineshape models at a few temperatures: the fast
//! effective broadening against the explicit velocity-class average.

use darkres::io::RunConfig;
use darkres::spectrum::{
    doppler_width, spectrum_thermal_effective, spectrum_thermal_quadrature, ThermalState,
};

fn contrast(fluorescence: &[f64]) -> f64 {
    let hi = fluorescence
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = fluorescence.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi
}

fn main() -> darkres::Result<()> {
    let cfg = RunConfig::default();
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;
    let geom = cfg.geometry()?;
    let grid: Vec<f64> = (0..81).map(|i| -34.0 + 0.5 * i as f64).collect();

    println!("temperature, thermal width, and resonance contrast per model:");
    for t_mk in [0.5, 3.1, 10.0, 46.0] {
        let t = ThermalState::new(t_mk)?;
        let width = doppler_width(&t, &geom);
        let eff = spectrum_thermal_effective(&sys, &da, &db, &field, &grid, &t, &geom)?;
        let quad = spectrum_thermal_quadrature(&sys, &da, &db, &field, &grid, &t, &geom, 16)?;
        println!(
            "T = {t_mk:5.1} mK  Gamma_D = {width:.3} MHz  contrast effective {:.3} / velocity classes {:.3}",
            contrast(&eff.fluorescence),
            contrast(&quad.fluorescence)
        );
    }
    println!();
    println!("the effective model folds the thermal width into the 866 nm");
    println!("dephasing rate; the velocity-class average solves one steady");
    println!("state per quadrature node and is the reference");
    Ok(())
}

//! Scan the 866 nm detuning across the dark resonances of a cold ion and
//! write the model spectrum to cold_spectrum.csv.

use darkres::io::{write_model_csv, RunConfig};
use darkres::spectrum::{local_minima, spectrum_cold};

fn main() -> darkres::Result<()> {
    let cfg = RunConfig::default();
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;
    let grid = cfg.grid()?;

    let spec = spectrum_cold(&sys, &da, &db, &field, &grid)?;
    write_model_csv(&spec, "cold_spectrum.csv".as_ref())?;

    println!(
        "cold scan, {} points over [{:.1}, {:.1}] MHz",
        grid.len(),
        grid[0],
        grid[grid.len() - 1]
    );
    for idx in local_minima(&spec.fluorescence) {
        println!(
            "dark resonance near delta_866 = {:+7.2} MHz (fluorescence {:.4})",
            grid[idx], spec.fluorescence[idx]
        );
    }
    println!("wrote cold_spectrum.csv");
    Ok(())
}

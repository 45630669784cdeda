//! Steady-state sublevel populations on and off a dark resonance. On
//! resonance the population is trapped in one D sublevel; far from the
//! resonances it accumulates in the S manifold.

use darkres::io::RunConfig;
use darkres::levels::{collapse_operators, hamiltonian, DriveConfig};
use darkres::spectrum::locate_dark_resonances;
use darkres::steadystate::{assemble_liouvillian, fluorescence_rate, populations, steady_state};

fn main() -> darkres::Result<()> {
    let cfg = RunConfig::default();
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;
    let field = cfg.field()?;

    let offsets = locate_dark_resonances(&sys, &da, &db, &field)?;
    let on_resonance = cfg.detuning_397_mhz + offsets[0];
    let off_resonance = cfg.detuning_397_mhz + 20.0;

    for delta_866 in [on_resonance, off_resonance] {
        let db_here = DriveConfig::new(
            delta_866,
            db.rabi_mhz,
            db.wavelength_nm,
            db.linewidth_mhz,
            db.direction,
        )?;
        let h = hamiltonian(&sys, &da, &db_here, &field, (0.0, 0.0))?;
        let cs = collapse_operators(&sys, da.linewidth_mhz, db.linewidth_mhz)?;
        let l = assemble_liouvillian(&h, &cs)?;
        let rho = steady_state(&l)?;

        println!(
            "delta_866 = {delta_866:+.2} MHz  (fluorescence {:.4})",
            fluorescence_rate(&rho, &sys)
        );
        for (label, p) in populations(&rho, &sys) {
            let bar = "#".repeat((60.0 * p).round() as usize);
            println!("  {label:<10} {p:.4} {bar}");
        }
        println!();
    }
    Ok(())
}

//! Predicted dark-resonance positions versus magnetic field. The four
//! two-photon offsets are the Zeeman level crossings at ±0.6b and ±2.2b.

use darkres::io::RunConfig;
use darkres::levels::ZeemanField;
use darkres::spectrum::locate_dark_resonances;

fn main() -> darkres::Result<()> {
    let cfg = RunConfig::default();
    let sys = cfg.level_system()?;
    let (da, db) = cfg.drives()?;

    for tesla in [1e-4, 4.7e-4, 1e-3] {
        let field = ZeemanField::new(tesla)?;
        let offsets = locate_dark_resonances(&sys, &da, &db, &field)?;
        let b = field.b_mhz();
        println!("B = {tesla:.1e} T (b = {b:.3} MHz):");
        for o in offsets {
            println!(
                "  two-photon offset {o:+8.3} MHz = {:+.2} b -> delta_866 = {:+8.3} MHz",
                o / b,
                cfg.detuning_397_mhz + o
            );
        }
    }
    Ok(())
}

//! Check the quadratic scaling of temperature with applied noise amplitude:
//! engineered heating should follow T = prefactor · E_rms².

use darkres::thermometry::noise_scaling_check;

fn main() -> darkres::Result<()> {
    // noise drive amplitude (V) against the fitted excess temperature (mK)
    let pairs = [(0.2, 2.87), (0.3, 6.21), (0.5, 17.8), (0.8, 44.6)];

    for (e, t) in pairs {
        println!("E_rms = {e:.1} V  ->  T = {t:5.2} mK");
    }
    let s = noise_scaling_check(&pairs)?;
    println!();
    println!(
        "T ∝ E^({:.3} ± {:.3}), prefactor {:.1} mK/V²",
        s.exponent, s.exponent_err, s.prefactor
    );
    if (s.exponent - 2.0).abs() <= 2.0 * s.exponent_err {
        println!("consistent with the quadratic law");
    } else {
        println!("tension with the quadratic law");
    }
    Ok(())
}

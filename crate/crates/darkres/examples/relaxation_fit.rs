//! Fit an exponential to a temperature-versus-time series, as used for
//! cooling and heating time constants.

use darkres::io::RelaxationPoint;
use darkres::thermometry::fit_exponential_relaxation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> darkres::Result<()> {
    // a cooling transient: 71 mK -> 3 mK with tau = 87 us, 5 % noise
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let series: Vec<RelaxationPoint> = (0..8)
        .map(|k| {
            let t = 40.0 * k as f64;
            let mean = 68.0 * (-t / 87.0).exp() + 3.0;
            let sigma = 0.05 * mean;
            let z: f64 = rng.sample(StandardNormal);
            RelaxationPoint {
                time_us: t,
                temperature_mk: mean + sigma * z,
                sigma_mk: sigma,
            }
        })
        .collect();

    for p in &series {
        println!(
            "t = {:5.0} us   T = {:6.2} ± {:.2} mK",
            p.time_us, p.temperature_mk, p.sigma_mk
        );
    }

    let fit = fit_exponential_relaxation(&series)?;
    println!();
    println!(
        "tau = {:.1} ± {:.1} us, amplitude {:.1} ± {:.1} mK, offset {:.2} ± {:.2} mK",
        fit.tau_us,
        fit.tau_err_us,
        fit.amplitude_mk,
        fit.amplitude_err_mk,
        fit.offset_mk,
        fit.offset_err_mk
    );
    Ok(())
}

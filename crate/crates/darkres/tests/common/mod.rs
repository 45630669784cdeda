//! Shared helpers for the integration tests: an independent RK4 time
//! integrator used as a steady-state oracle, plus seeded parameter draws.

use darkres::levels::{CollapseOperator, DriveConfig, LevelSystem, ZeemanField};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

/// Max-norm of the Lindblad derivative at `rho` in matrix form,
/// dρ/dt = −i[H,ρ] + Σ CρC† − ½{C†C, ρ}, built directly from the operator
/// matrices. This deliberately avoids the vectorized Liouvillian under test.
pub fn lindblad_derivative(
    h: &DMatrix<Complex64>,
    cs: &[CollapseOperator],
    rho: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let mut d = (h * rho - rho * h) * (-i);
    for c in cs {
        let cd = c.matrix.adjoint();
        let cdc = &cd * &c.matrix;
        d += &c.matrix * rho * cd - (&cdc * rho + rho * &cdc) * Complex64::new(0.5, 0.0);
    }
    d
}

/// Classic fourth-order Runge-Kutta integration of the master equation,
/// run in chunks until the state is stationary (max |dρ/dt| ≤ 1e-10 per µs)
/// or the time cap is hit, in which case it panics: a non-converged oracle
/// can never silently pass a test.
///
/// The inner loop evaluates the generator in non-Hermitian form,
/// dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ CρC† with H_eff = H − (i/2)ΣC†C; the
/// final stationarity check goes through [`lindblad_derivative`], so the two
/// formulations validate each other.
pub fn rk4_steady_state(
    h: &DMatrix<Complex64>,
    cs: &[CollapseOperator],
    rho0: DMatrix<Complex64>,
    dt_us: f64,
) -> DMatrix<Complex64> {
    let n = h.nrows();
    let mut k = DMatrix::<Complex64>::zeros(n, n);
    for c in cs {
        k += c.matrix.adjoint() * &c.matrix;
    }
    let h_eff = h - &k * Complex64::new(0.0, 0.5);
    let h_eff_dag = h_eff.adjoint();
    let deriv = |rho: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let mut d = (&h_eff * rho - rho * &h_eff_dag) * Complex64::new(0.0, -1.0);
        for c in cs {
            d += &c.matrix * rho * c.matrix.adjoint();
        }
        d
    };

    let mut rho = rho0;
    let chunk_us = 10.0;
    let steps = (chunk_us / dt_us).ceil() as usize;
    for _ in 0..12 {
        for _ in 0..steps {
            let k1 = deriv(&rho);
            let k2 = deriv(&(&rho + &k1 * Complex64::new(dt_us / 2.0, 0.0)));
            let k3 = deriv(&(&rho + &k2 * Complex64::new(dt_us / 2.0, 0.0)));
            let k4 = deriv(&(&rho + &k3 * Complex64::new(dt_us, 0.0)));
            rho += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * Complex64::new(dt_us / 6.0, 0.0);
        }
        let drift = lindblad_derivative(h, cs, &rho)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if drift <= 1e-10 {
            return rho;
        }
    }
    let drift = lindblad_derivative(h, cs, &rho)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    panic!("RK4 oracle did not reach a stationary state: |drho/dt| = {drift:.3e}");
}

/// Random valid density matrix: ρ = AA†/Tr(AA†) for a complex Ginibre draw.
pub fn random_density(n: usize, rng: &mut impl Rng) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let m = &a * a.adjoint();
    let tr: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    m / Complex64::new(tr, 0.0)
}

/// Seeded draw of well-conditioned drive parameters for either system.
/// Rabi frequencies and linewidths are kept off zero so every instance
/// relaxes on a microsecond scale and the solver faces no degeneracies.
pub fn random_drives(rng: &mut impl Rng) -> (DriveConfig, DriveConfig, ZeemanField) {
    let da = DriveConfig::new(
        rng.gen_range(-30.0..0.0),
        rng.gen_range(4.0..25.0),
        397.0,
        rng.gen_range(0.1..1.5),
        [1.0, 0.0, 0.0],
    )
    .unwrap();
    let db = DriveConfig::new(
        rng.gen_range(-20.0..20.0),
        rng.gen_range(3.0..15.0),
        866.0,
        rng.gen_range(0.1..1.5),
        [1.0, 0.0, 0.0],
    )
    .unwrap();
    let field = ZeemanField::new(rng.gen_range(1e-5..1.5e-3)).unwrap();
    (da, db, field)
}

/// Excited-state population of a steady state in matrix form.
pub fn excited_population(rho: &DMatrix<Complex64>, sys: &LevelSystem) -> f64 {
    sys.excited_indices.iter().map(|&i| rho[(i, i)].re).sum()
}

//! Fluorescence spectra over a Δ₈₆₆ scan and thermal (Doppler) broadening.
//!
//! Spectra come in three flavors:
//! - **cold**: one steady-state solve per grid point for an ion at rest;
//! - **quadrature**: Gauss–Hermite average over the Maxwell–Boltzmann
//!   velocity distribution, Doppler-shifting both drives per velocity class;
//! - **effective**: the thermal width Γ_D(T, α) is added to the 866 nm
//!   dephasing channel (the broadening acts on the two-photon Raman
//!   coherence), turning the thermal average into a single sweep.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::levels::{
    collapse_operators, hamiltonian, DriveConfig, LevelSystem, SystemKind, ZeemanField,
};
use crate::steadystate::{assemble_liouvillian, fluorescence_rate, steady_state, Liouvillian};
use crate::units::{thermal_sigma_v, AMU_KG, BOLTZMANN_J_PER_K};
use crate::{Error, Result};

/// Relative beam geometry and ion mass entering the Doppler kinematics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BeamGeometry {
    /// Angle between the two laser beams, radians, in [0, π].
    pub alpha_rad: f64,
    pub lambda_397_nm: f64,
    pub lambda_866_nm: f64,
    pub mass_amu: f64,
}

impl BeamGeometry {
    pub fn new(
        alpha_rad: f64,
        lambda_397_nm: f64,
        lambda_866_nm: f64,
        mass_amu: f64,
    ) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&alpha_rad) {
            return Err(Error::InvalidParameter(format!(
                "beam angle must lie in [0, pi], got {alpha_rad} rad"
            )));
        }
        if !(mass_amu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ion mass must be positive, got {mass_amu} amu"
            )));
        }
        if !(lambda_397_nm > 0.0) || !(lambda_866_nm > 0.0) {
            return Err(Error::InvalidParameter(
                "wavelengths must be positive".into(),
            ));
        }
        Ok(Self {
            alpha_rad,
            lambda_397_nm,
            lambda_866_nm,
            mass_amu,
        })
    }
}

/// Thermal state of the ion's motion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThermalState {
    pub temperature_mk: f64,
}

impl ThermalState {
    pub fn new(temperature_mk: f64) -> Result<Self> {
        if !(temperature_mk >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be >= 0 mK, got {temperature_mk}"
            )));
        }
        Ok(Self { temperature_mk })
    }
}

/// How a spectrum was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMethod {
    Cold,
    Effective,
    Quadrature,
}

/// Snapshot of the parameters a spectrum was computed from.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumParams {
    pub rabi_397_mhz: f64,
    pub rabi_866_mhz: f64,
    pub detuning_397_mhz: f64,
    pub linewidth_397_mhz: f64,
    pub linewidth_866_mhz: f64,
    pub b_field_tesla: f64,
    pub temperature_mk: Option<f64>,
    pub alpha_rad: Option<f64>,
    pub quadrature_nodes: Option<usize>,
}

/// Model fluorescence versus Δ₈₆₆.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    /// Strictly increasing Δ₈₆₆ grid, MHz.
    pub detuning_mhz: Vec<f64>,
    /// Dimensionless fluorescence (excited-manifold population), ≥ 0.
    pub fluorescence: Vec<f64>,
    pub method: SpectrumMethod,
    pub params: SpectrumParams,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty detuning grid".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite grid point".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "detuning grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn snapshot(
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    thermal: Option<(&ThermalState, &BeamGeometry)>,
    nodes: Option<usize>,
) -> SpectrumParams {
    SpectrumParams {
        rabi_397_mhz: drive_a.rabi_mhz,
        rabi_866_mhz: drive_b.rabi_mhz,
        detuning_397_mhz: drive_a.detuning_mhz,
        linewidth_397_mhz: drive_a.linewidth_mhz,
        linewidth_866_mhz: drive_b.linewidth_mhz,
        b_field_tesla: field.tesla,
        temperature_mk: thermal.map(|(t, _)| t.temperature_mk),
        alpha_rad: thermal.map(|(_, g)| g.alpha_rad),
        quadrature_nodes: nodes,
    }
}

/// One-shot scan machinery: the dissipator part of the Liouvillian is fixed
/// over a scan, only the Hamiltonian changes with detuning and velocity.
pub(crate) struct ScanEngine {
    sys: LevelSystem,
    drive_a: DriveConfig,
    drive_b: DriveConfig,
    field: ZeemanField,
    dissipator: DMatrix<Complex64>,
}

impl ScanEngine {
    /// `extra_866_mhz` adds dephasing to the 866 channel (the effective
    /// thermal broadening); pass 0 for the bare system.
    pub fn new(
        sys: &LevelSystem,
        drive_a: &DriveConfig,
        drive_b: &DriveConfig,
        field: &ZeemanField,
        extra_866_mhz: f64,
    ) -> Result<Self> {
        let cs = collapse_operators(
            sys,
            drive_a.linewidth_mhz,
            drive_b.linewidth_mhz + extra_866_mhz,
        )?;
        let zero = DMatrix::<Complex64>::zeros(sys.dim(), sys.dim());
        let dissipator = assemble_liouvillian(&zero, &cs)?.matrix;
        Ok(Self {
            sys: sys.clone(),
            drive_a: drive_a.clone(),
            drive_b: drive_b.clone(),
            field: *field,
            dissipator,
        })
    }

    pub fn fluorescence_at(&self, delta_866_mhz: f64, doppler_mhz: (f64, f64)) -> Result<f64> {
        let mut db = self.drive_b.clone();
        db.detuning_mhz = delta_866_mhz;
        let h = hamiltonian(&self.sys, &self.drive_a, &db, &self.field, doppler_mhz)?;
        let n = self.sys.dim();
        let eye = DMatrix::<Complex64>::identity(n, n);
        let unitary =
            (h.kronecker(&eye) - eye.kronecker(&h.transpose())) * Complex64::new(0.0, -1.0);
        let l = Liouvillian {
            matrix: unitary + &self.dissipator,
            dim: n,
        };
        let rho = steady_state(&l).map_err(|e| Error::AtGridPoint {
            detuning_mhz: delta_866_mhz,
            source: Box::new(e),
        })?;
        Ok(fluorescence_rate(&rho, &self.sys))
    }
}

/// Spectrum of an ion at rest: one steady-state solve per grid point.
pub fn spectrum_cold(
    sys: &LevelSystem,
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    grid: &[f64],
) -> Result<Spectrum> {
    validate_grid(grid)?;
    let engine = ScanEngine::new(sys, drive_a, drive_b, field, 0.0)?;
    let fluorescence: Vec<f64> = grid
        .par_iter()
        .map(|&d| engine.fluorescence_at(d, (0.0, 0.0)))
        .collect::<Result<_>>()?;
    Ok(Spectrum {
        detuning_mhz: grid.to_vec(),
        fluorescence,
        method: SpectrumMethod::Cold,
        params: snapshot(drive_a, drive_b, field, None, None),
    })
}

/// Relative two-photon Doppler width Γ_D(T, α) in MHz:
/// |k₃₉₇ − k₈₆₆| · √(k_B T / 2m) with the beam angle entering through
/// |Δk|² = k₃₉₇² + k₈₆₆² − 2 k₃₉₇ k₈₆₆ cos α.
pub fn doppler_width(t: &ThermalState, geom: &BeamGeometry) -> f64 {
    let k397 = 1.0 / (geom.lambda_397_nm * 1e-9);
    let k866 = 1.0 / (geom.lambda_866_nm * 1e-9);
    let dk = (k397 * k397 + k866 * k866 - 2.0 * k397 * k866 * geom.alpha_rad.cos())
        .max(0.0)
        .sqrt();
    let v = (BOLTZMANN_J_PER_K * t.temperature_mk * 1e-3 / (2.0 * geom.mass_amu * AMU_KG)).sqrt();
    dk * v * 1e-6
}

/// Thermal spectrum in the effective-broadening approximation: the cold scan
/// with Γ_D(T, α) added to the 866 nm dephasing rate.
pub fn spectrum_thermal_effective(
    sys: &LevelSystem,
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    grid: &[f64],
    t: &ThermalState,
    geom: &BeamGeometry,
) -> Result<Spectrum> {
    let gamma_d = doppler_width(t, geom);
    let fluorescence = effective_broadened_values(sys, drive_a, drive_b, field, grid, gamma_d)?;
    Ok(Spectrum {
        detuning_mhz: grid.to_vec(),
        fluorescence,
        method: SpectrumMethod::Effective,
        params: snapshot(drive_a, drive_b, field, Some((t, geom)), None),
    })
}

/// Effective-model lineshape values at a given added 866 nm dephasing.
/// This is the kernel shared by [`spectrum_thermal_effective`] and the
/// fitting fast path, which tabulates lineshapes over the added width.
pub(crate) fn effective_broadened_values(
    sys: &LevelSystem,
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    grid: &[f64],
    extra_866_mhz: f64,
) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    let engine = ScanEngine::new(sys, drive_a, drive_b, field, extra_866_mhz)?;
    grid.par_iter()
        .map(|&d| engine.fluorescence_at(d, (0.0, 0.0)))
        .collect()
}

/// Thermal spectrum by explicit velocity-class averaging with Gauss–Hermite
/// quadrature. For collinear (α = 0) and counter-propagating (α = π) beams a
/// single velocity axis suffices; any other angle uses a two-axis tensor
/// grid over the beam plane. Doppler shifts per class are δΔᵢ = k̂ᵢ·v/λᵢ.
#[allow(clippy::too_many_arguments)]
pub fn spectrum_thermal_quadrature(
    sys: &LevelSystem,
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    grid: &[f64],
    t: &ThermalState,
    geom: &BeamGeometry,
    nodes: usize,
) -> Result<Spectrum> {
    validate_grid(grid)?;
    if nodes < 3 {
        return Err(Error::InvalidParameter(format!(
            "quadrature needs at least 3 nodes, got {nodes}"
        )));
    }
    let engine = ScanEngine::new(sys, drive_a, drive_b, field, 0.0)?;
    let sigma = thermal_sigma_v(t.temperature_mk, geom.mass_amu);
    if sigma == 0.0 {
        // at rest every velocity class collapses onto the same solve
        let fluorescence: Vec<f64> = grid
            .par_iter()
            .map(|&d| engine.fluorescence_at(d, (0.0, 0.0)))
            .collect::<Result<_>>()?;
        return Ok(Spectrum {
            detuning_mhz: grid.to_vec(),
            fluorescence,
            method: SpectrumMethod::Quadrature,
            params: snapshot(drive_a, drive_b, field, Some((t, geom)), Some(nodes)),
        });
    }
    let (x, w) = gauss_hermite(nodes);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    // MHz Doppler shift per m/s along each beam
    let shift_a = 1e3 / geom.lambda_397_nm;
    let shift_b = 1e3 / geom.lambda_866_nm;
    let collinear = geom.alpha_rad.abs() < 1e-12;
    let counter = (geom.alpha_rad - std::f64::consts::PI).abs() < 1e-12;

    let fluorescence: Vec<f64> = grid
        .par_iter()
        .map(|&d| -> Result<f64> {
            let mut acc = 0.0;
            if collinear || counter {
                let sign_b = if collinear { 1.0 } else { -1.0 };
                for k in 0..nodes {
                    let v = 2f64.sqrt() * sigma * x[k];
                    let f = engine.fluorescence_at(d, (v * shift_a, sign_b * v * shift_b))?;
                    acc += w[k] / sqrt_pi * f;
                }
            } else {
                let (ca, sa) = (geom.alpha_rad.cos(), geom.alpha_rad.sin());
                for k1 in 0..nodes {
                    for k2 in 0..nodes {
                        let v1 = 2f64.sqrt() * sigma * x[k1];
                        let v2 = 2f64.sqrt() * sigma * x[k2];
                        let f = engine
                            .fluorescence_at(d, (v1 * shift_a, (v1 * ca + v2 * sa) * shift_b))?;
                        acc += (w[k1] / sqrt_pi) * (w[k2] / sqrt_pi) * f;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    Ok(Spectrum {
        detuning_mhz: grid.to_vec(),
        fluorescence,
        method: SpectrumMethod::Quadrature,
        params: snapshot(drive_a, drive_b, field, Some((t, geom)), Some(nodes)),
    })
}

/// Predict the four two-photon detunings Δ₈₆₆ − Δ₃₉₇ at which a dark
/// resonance occurs: an S and a D dressed level coincide for a σ-connected
/// pair, giving offsets (m_d·g_D − m_s·g_S)·b. Sorted ascending; all zero at
/// B = 0 where the resonances are degenerate.
pub fn locate_dark_resonances(
    sys: &LevelSystem,
    _drive_a: &DriveConfig,
    _drive_b: &DriveConfig,
    field: &ZeemanField,
) -> Result<Vec<f64>> {
    if sys.kind != SystemKind::Calcium8 {
        return Err(Error::InvalidParameter(
            "dark-resonance prediction requires the 8-level system".into(),
        ));
    }
    let b = field.b_mhz();
    let g_s = sys.lande.g_s;
    let g_d = sys.lande.g_d;
    // σ-connected (m_s, m_d) pairs: each couples through a single common P
    // sublevel, so the crossing condition is unshifted by the drives.
    let pairs = [(-0.5, -0.5), (-0.5, 1.5), (0.5, -1.5), (0.5, 0.5)];
    let mut offsets: Vec<f64> = pairs
        .iter()
        .map(|&(ms, md)| (md * g_d - ms * g_s) * b)
        .collect();
    offsets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(offsets)
}

/// Indices of strict interior local minima of `values`.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] < values[i - 1] && values[i] < values[i + 1])
        .collect()
}

/// Gauss–Hermite nodes and weights for ∫ e^{−x²} f(x) dx (physicists'
/// convention), via the Golub–Welsch eigenproblem, symmetrized so that
/// x[i] = −x[n−1−i] exactly and Σw = √π exactly.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (x, sqrt_pi * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let xm = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -xm;
        x[n - 1 - i] = xm;
        let wm = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = wm;
        w[n - 1 - i] = wm;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi *= sqrt_pi / total;
    }
    (x, w)
}

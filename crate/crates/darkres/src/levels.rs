//! Atomic level structure: Hamiltonians and collapse operators for the
//! driven three-level Λ system and the 8-level Zeeman-split ⁴⁰Ca⁺ system.
//!
//! The 8-level basis ordering is fixed:
//!
//! ```text
//! 0 |S,-1/2⟩  1 |S,+1/2⟩  2 |P,-1/2⟩  3 |P,+1/2⟩
//! 4 |D,-3/2⟩  5 |D,-1/2⟩  6 |D,+1/2⟩  7 |D,+3/2⟩
//! ```
//!
//! Both lasers are σ⁺+σ⁻ polarized, so only the σ couplings appear in the
//! Hamiltonian; π couplings are structurally absent. The Λ system uses the
//! ordering |1⟩ = S, |2⟩ = P (excited), |3⟩ = D.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::units::{mhz_to_angular, BOHR_MAGNETON_MHZ_PER_T};
use crate::{Error, Result};

/// Which level scheme a [`LevelSystem`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Generic three-level Λ configuration (S, P, D without Zeeman
    /// structure).
    Lambda3,
    /// 8-level S₁/₂–P₁/₂–D₃/₂ manifold of ⁴⁰Ca⁺ in a magnetic field.
    Calcium8,
}

/// Fine-structure manifold of a basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    S,
    P,
    D,
}

/// One basis state: manifold and magnetic quantum number m_j (stored
/// doubled so it stays integral).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisState {
    pub manifold: Manifold,
    pub two_mj: i32,
}

impl BasisState {
    /// Human-readable label such as `S-1/2` or `D+3/2`.
    pub fn label(&self) -> String {
        let m = match self.manifold {
            Manifold::S => "S",
            Manifold::P => "P",
            Manifold::D => "D",
        };
        if self.two_mj == 0 {
            m.to_string()
        } else {
            format!(
                "{}{}{}/2",
                m,
                if self.two_mj > 0 { "+" } else { "-" },
                self.two_mj.abs()
            )
        }
    }
}

/// Landé g-factors of the three manifolds.
#[derive(Debug, Clone, Copy)]
pub struct LandeFactors {
    pub g_s: f64,
    pub g_p: f64,
    pub g_d: f64,
}

pub const LANDE_CA40: LandeFactors = LandeFactors {
    g_s: 2.0,
    g_p: 2.0 / 3.0,
    g_d: 4.0 / 5.0,
};

/// Level structure, decay rates and Landé factors of one ion model.
///
/// Decay rates are ordinary frequencies in MHz. For `Lambda3`, `gamma_ps_mhz`
/// is the P→S rate and `gamma_pd_mhz` the P→D rate obtained from the total
/// rate and the branching fraction.
#[derive(Debug, Clone)]
pub struct LevelSystem {
    pub kind: SystemKind,
    pub basis: Vec<BasisState>,
    pub lande: LandeFactors,
    pub gamma_ps_mhz: f64,
    pub gamma_pd_mhz: f64,
    pub excited_indices: Vec<usize>,
}

impl LevelSystem {
    /// Number of levels.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Basis labels in order.
    pub fn labels(&self) -> Vec<String> {
        self.basis.iter().map(BasisState::label).collect()
    }
}

/// One laser drive: detuning Δ = ν_laser − ν_transition (MHz, negative when
/// red-detuned), Rabi frequency Ω (MHz), wavelength (nm), spectral linewidth
/// (MHz FWHM) and unit propagation direction.
#[derive(Debug, Clone)]
pub struct DriveConfig {
    pub detuning_mhz: f64,
    pub rabi_mhz: f64,
    pub wavelength_nm: f64,
    pub linewidth_mhz: f64,
    pub direction: [f64; 3],
}

impl DriveConfig {
    pub fn new(
        detuning_mhz: f64,
        rabi_mhz: f64,
        wavelength_nm: f64,
        linewidth_mhz: f64,
        direction: [f64; 3],
    ) -> Result<Self> {
        if !rabi_mhz.is_finite() || rabi_mhz < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Rabi frequency must be >= 0 MHz, got {rabi_mhz}"
            )));
        }
        if !linewidth_mhz.is_finite() || linewidth_mhz < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "laser linewidth must be >= 0 MHz, got {linewidth_mhz}"
            )));
        }
        if !(wavelength_nm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wavelength must be positive, got {wavelength_nm} nm"
            )));
        }
        if !detuning_mhz.is_finite() {
            return Err(Error::InvalidParameter("detuning must be finite".into()));
        }
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "beam direction must be a unit vector, |e| = {norm}"
            )));
        }
        Ok(Self {
            detuning_mhz,
            rabi_mhz,
            wavelength_nm,
            linewidth_mhz,
            direction,
        })
    }
}

/// Static magnetic field along the quantization axis.
#[derive(Debug, Clone, Copy)]
pub struct ZeemanField {
    pub tesla: f64,
}

impl ZeemanField {
    pub fn new(tesla: f64) -> Result<Self> {
        if !(tesla >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "magnetic field must be >= 0 T, got {tesla}"
            )));
        }
        Ok(Self { tesla })
    }

    /// Zeeman splitting scale b = μ_B·B/h in MHz.
    pub fn b_mhz(&self) -> f64 {
        self.tesla * BOHR_MAGNETON_MHZ_PER_T
    }
}

/// Zeeman splitting scale b = μ_B·B/h in MHz for a field in tesla.
pub fn zeeman_frequency(tesla: f64) -> Result<f64> {
    Ok(ZeemanField::new(tesla)?.b_mhz())
}

/// Dissipation channel class of a collapse operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Spontaneous dipole decay out of the excited manifold. Such operators
    /// only have support on entries (q, p) with p excited and q ground or
    /// metastable: population flows out of P.
    DipoleDecay,
    /// Laser phase noise, modeled as a diagonal dephasing operator on the
    /// sublevels addressed by that laser.
    LaserDephasing,
}

/// One collapse operator C entering the dissipator as CρC† − ½{C†C, ρ}.
/// Matrix entries are in internal angular units, i.e. C†C has units rad/µs.
#[derive(Debug, Clone)]
pub struct CollapseOperator {
    pub matrix: DMatrix<Complex64>,
    pub channel: ChannelKind,
}

/// Build the three-level Λ system.
///
/// `gamma_decay_mhz` is the total decay rate of the excited state |2⟩ and
/// `branching` the fraction decaying to |1⟩ (the rest goes to |3⟩).
pub fn build_lambda_system(gamma_decay_mhz: f64, branching: f64) -> Result<LevelSystem> {
    if !(gamma_decay_mhz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "decay rate must be positive, got {gamma_decay_mhz} MHz"
        )));
    }
    if !(branching > 0.0 && branching < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "branching fraction must lie in (0,1), got {branching}"
        )));
    }
    Ok(LevelSystem {
        kind: SystemKind::Lambda3,
        basis: vec![
            BasisState {
                manifold: Manifold::S,
                two_mj: 0,
            },
            BasisState {
                manifold: Manifold::P,
                two_mj: 0,
            },
            BasisState {
                manifold: Manifold::D,
                two_mj: 0,
            },
        ],
        lande: LandeFactors {
            g_s: 0.0,
            g_p: 0.0,
            g_d: 0.0,
        },
        gamma_ps_mhz: branching * gamma_decay_mhz,
        gamma_pd_mhz: (1.0 - branching) * gamma_decay_mhz,
        excited_indices: vec![1],
    })
}

/// Build the 8-level ⁴⁰Ca⁺ system with decay rates Γ_PS (P→S) and Γ_PD
/// (P→D) in MHz. With the shipped defaults 21.0 and 1.7 MHz the total rate
/// matches the 7 ns lifetime of the P₁/₂ level.
pub fn build_ca40_system(gamma_ps_mhz: f64, gamma_pd_mhz: f64) -> Result<LevelSystem> {
    if !(gamma_ps_mhz > 0.0) || !(gamma_pd_mhz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "decay rates must be positive, got Γ_PS = {gamma_ps_mhz}, Γ_PD = {gamma_pd_mhz} MHz"
        )));
    }
    let b = |manifold, two_mj| BasisState { manifold, two_mj };
    Ok(LevelSystem {
        kind: SystemKind::Calcium8,
        basis: vec![
            b(Manifold::S, -1),
            b(Manifold::S, 1),
            b(Manifold::P, -1),
            b(Manifold::P, 1),
            b(Manifold::D, -3),
            b(Manifold::D, -1),
            b(Manifold::D, 1),
            b(Manifold::D, 3),
        ],
        lande: LANDE_CA40,
        gamma_ps_mhz,
        gamma_pd_mhz,
        excited_indices: vec![2, 3],
    })
}

/// Rotating-frame Hamiltonian of the driven system.
///
/// Inputs are ν-convention MHz; the returned matrix is in internal angular
/// units (rad/µs). `doppler_mhz` shifts the two detunings by (δΔ_a, δΔ_b)
/// for a moving ion; pass `(0.0, 0.0)` for an ion at rest. Drive `a` is the
/// S↔P laser (397 nm), drive `b` the P↔D laser (866 nm). The grid scan of
/// the spectrum module overrides `drive_b.detuning_mhz` per point.
///
/// For the 8-level system the diagonal reads m_j·g·b − Δ (with Δ_a on S
/// rows, Δ_b on D rows, none on P) and the σ couplings carry the
/// Clebsch–Gordan pattern −Ω_a/√3 on S↔P and ∓Ω_b/2, ±Ω_b/(2√3) on P↔D.
/// The Λ system uses couplings −Ω/2 on both transitions.
pub fn hamiltonian(
    sys: &LevelSystem,
    drive_a: &DriveConfig,
    drive_b: &DriveConfig,
    field: &ZeemanField,
    doppler_mhz: (f64, f64),
) -> Result<DMatrix<Complex64>> {
    let da = drive_a.detuning_mhz + doppler_mhz.0;
    let db = drive_b.detuning_mhz + doppler_mhz.1;
    let oa = drive_a.rabi_mhz;
    let ob = drive_b.rabi_mhz;
    let n = sys.dim();
    let mut h = DMatrix::<f64>::zeros(n, n);

    match sys.kind {
        SystemKind::Lambda3 => {
            h[(0, 0)] = -da;
            h[(2, 2)] = -db;
            h[(0, 1)] = -0.5 * oa;
            h[(1, 0)] = -0.5 * oa;
            h[(1, 2)] = -0.5 * ob;
            h[(2, 1)] = -0.5 * ob;
        }
        SystemKind::Calcium8 => {
            let b = field.b_mhz();
            let LandeFactors { g_s, g_p, g_d } = sys.lande;
            for (i, state) in sys.basis.iter().enumerate() {
                let mj = state.two_mj as f64 / 2.0;
                h[(i, i)] = match state.manifold {
                    Manifold::S => mj * g_s * b - da,
                    Manifold::P => mj * g_p * b,
                    Manifold::D => mj * g_d * b - db,
                };
            }
            let s3 = 3f64.sqrt();
            let mut couple = |i: usize, j: usize, v: f64| {
                h[(i, j)] = v;
                h[(j, i)] = v;
            };
            couple(0, 3, -oa / s3);
            couple(1, 2, -oa / s3);
            couple(2, 4, -0.5 * ob);
            couple(2, 6, ob / (2.0 * s3));
            couple(3, 5, -ob / (2.0 * s3));
            couple(3, 7, 0.5 * ob);
        }
    }

    Ok(h.map(|x| Complex64::new(mhz_to_angular(x), 0.0)))
}

/// All collapse operators of the system: the dipole-decay channels with their
/// Clebsch–Gordan weights plus one diagonal dephasing operator per laser with
/// rates `gamma_397_mhz` / `gamma_866_mhz` (the laser linewidths). Zero-rate
/// dephasing operators are omitted.
pub fn collapse_operators(
    sys: &LevelSystem,
    gamma_397_mhz: f64,
    gamma_866_mhz: f64,
) -> Result<Vec<CollapseOperator>> {
    if gamma_397_mhz < 0.0 || gamma_866_mhz < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "laser linewidths must be >= 0, got {gamma_397_mhz}, {gamma_866_mhz} MHz"
        )));
    }
    let n = sys.dim();
    let g_ps = mhz_to_angular(sys.gamma_ps_mhz);
    let g_pd = mhz_to_angular(sys.gamma_pd_mhz);
    let g397 = mhz_to_angular(gamma_397_mhz);
    let g866 = mhz_to_angular(gamma_866_mhz);

    // |q⟩⟨p| scaled by √rate: a single decay amplitude from p to q.
    let amp = |entries: &[(usize, usize, f64)]| {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for &(q, p, w) in entries {
            m[(q, p)] = Complex64::new(w, 0.0);
        }
        CollapseOperator {
            matrix: m,
            channel: ChannelKind::DipoleDecay,
        }
    };
    let deph = |indices: &[usize], rate: f64| {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for &i in indices {
            m[(i, i)] = Complex64::new(rate.sqrt(), 0.0);
        }
        CollapseOperator {
            matrix: m,
            channel: ChannelKind::LaserDephasing,
        }
    };

    let mut ops = Vec::new();
    match sys.kind {
        SystemKind::Lambda3 => {
            ops.push(amp(&[(0, 1, g_ps.sqrt())]));
            ops.push(amp(&[(2, 1, g_pd.sqrt())]));
            if gamma_397_mhz > 0.0 {
                ops.push(deph(&[0], g397));
            }
            if gamma_866_mhz > 0.0 {
                ops.push(deph(&[2], g866));
            }
        }
        SystemKind::Calcium8 => {
            let w = |f: f64, g: f64| (f * g).sqrt();
            // P→S: two σ channels and one Zeeman-coherence-preserving
            // combination of the π amplitudes.
            ops.push(amp(&[(0, 3, w(2.0 / 3.0, g_ps))]));
            ops.push(amp(&[(1, 2, w(2.0 / 3.0, g_ps))]));
            ops.push(amp(&[
                (0, 2, w(1.0 / 3.0, g_ps)),
                (1, 3, -w(1.0 / 3.0, g_ps)),
            ]));
            // P→D: combined channels sharing emitted-photon polarization.
            ops.push(amp(&[
                (4, 2, w(1.0 / 2.0, g_pd)),
                (5, 3, w(1.0 / 6.0, g_pd)),
            ]));
            ops.push(amp(&[
                (6, 2, w(1.0 / 6.0, g_pd)),
                (7, 3, w(1.0 / 2.0, g_pd)),
            ]));
            ops.push(amp(&[
                (5, 2, w(1.0 / 3.0, g_pd)),
                (6, 3, w(1.0 / 3.0, g_pd)),
            ]));
            if gamma_397_mhz > 0.0 {
                ops.push(deph(&[0, 1], g397));
            }
            if gamma_866_mhz > 0.0 {
                ops.push(deph(&[4, 5, 6, 7], g866));
            }
        }
    }
    Ok(ops)
}

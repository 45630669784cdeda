//! Temperature and parameter estimation from measured spectra.
//!
//! The estimation stack: a [`ForwardModel`] maps fit parameters to a model
//! lineshape, [`poisson_log_likelihood`] scores it against photon counts,
//! [`fit_spectrum_mcmc`] samples the posterior with adaptive
//! Metropolis-Hastings, and [`fit_spectrum_lsq`] gives a fast Levenberg
//! point estimate. Exponential relaxation of temperature time series and
//! the noise-scaling check live here too.
//!
//! Temperature enters the sampler as ln T with a log-uniform prior, so the
//! chain coordinate is uniform over [ln T_min, ln T_max]. When only
//! temperature, amplitude and offset are free, lineshapes are interpolated
//! from a precomputed table over the thermal width instead of re-solving
//! the steady state per likelihood call.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::io::{MeasuredSpectrum, RelaxationPoint, RunConfig};
use crate::levels::{DriveConfig, LevelSystem, ZeemanField};
use crate::spectrum::{
    doppler_width, effective_broadened_values, spectrum_thermal_quadrature, BeamGeometry,
    ThermalState,
};
use crate::{Error, Result};

/// Canonical order of fit parameters; free masks and sample columns use it.
pub const PARAM_NAMES: [&str; 9] = [
    "temperature",
    "rabi_397",
    "rabi_866",
    "detuning_397",
    "b_field",
    "linewidth_397",
    "linewidth_866",
    "amplitude",
    "offset",
];

const P_T: usize = 0;
const P_AMP: usize = 7;
const P_OFF: usize = 8;

const RHAT_LIMIT: f64 = 1.1;
/// Posterior mass allowed in the top 5 % of the ln T prior range before the
/// temperature is declared unbounded.
const EDGE_MASS_LIMIT: f64 = 0.05;
const EDGE_BAND: f64 = 0.05;
const DEFAULT_TABLE_NODES: usize = 96;

/// Full parameter vector of a spectrum fit, with a per-parameter free mask.
/// Frozen entries keep their values through the fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitParameters {
    pub t_mk: f64,
    pub rabi_397_mhz: f64,
    pub rabi_866_mhz: f64,
    pub detuning_397_mhz: f64,
    pub b_field_tesla: f64,
    pub linewidth_397_mhz: f64,
    pub linewidth_866_mhz: f64,
    /// Counts per unit fluorescence.
    pub amplitude: f64,
    /// Background counts per point.
    pub offset: f64,
    /// Free flags in [`PARAM_NAMES`] order.
    pub free: [bool; 9],
}

impl FitParameters {
    /// Parameters from a run config: physics from the config values,
    /// amplitude 1 and offset 0 (callers rescale amplitude to their data),
    /// free mask from `fit_free`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            t_mk: cfg.temperature_mk,
            rabi_397_mhz: cfg.rabi_397_mhz,
            rabi_866_mhz: cfg.rabi_866_mhz,
            detuning_397_mhz: cfg.detuning_397_mhz,
            b_field_tesla: cfg.b_field_tesla,
            linewidth_397_mhz: cfg.linewidth_397_mhz,
            linewidth_866_mhz: cfg.linewidth_866_mhz,
            amplitude: 1.0,
            offset: 0.0,
            free: free_mask_from_names(&cfg.fit_free)?,
        })
    }

    pub fn get(&self, idx: usize) -> f64 {
        match idx {
            0 => self.t_mk,
            1 => self.rabi_397_mhz,
            2 => self.rabi_866_mhz,
            3 => self.detuning_397_mhz,
            4 => self.b_field_tesla,
            5 => self.linewidth_397_mhz,
            6 => self.linewidth_866_mhz,
            7 => self.amplitude,
            8 => self.offset,
            _ => panic!("parameter index {idx} out of range"),
        }
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        match idx {
            0 => self.t_mk = v,
            1 => self.rabi_397_mhz = v,
            2 => self.rabi_866_mhz = v,
            3 => self.detuning_397_mhz = v,
            4 => self.b_field_tesla = v,
            5 => self.linewidth_397_mhz = v,
            6 => self.linewidth_866_mhz = v,
            7 => self.amplitude = v,
            8 => self.offset = v,
            _ => panic!("parameter index {idx} out of range"),
        }
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..9).filter(|&i| self.free[i]).collect()
    }

    /// Replace the free mask by the named parameters.
    pub fn with_free(mut self, names: &[&str]) -> Result<Self> {
        self.free = free_mask_from_names(names)?;
        Ok(self)
    }
}

/// Translate parameter names into a free mask.
pub fn free_mask_from_names<S: AsRef<str>>(names: &[S]) -> Result<[bool; 9]> {
    let mut mask = [false; 9];
    for n in names {
        let n = n.as_ref();
        let idx = PARAM_NAMES.iter().position(|&p| p == n).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown fit parameter {n:?}; valid names: {}",
                PARAM_NAMES.join(", ")
            ))
        })?;
        mask[idx] = true;
    }
    Ok(mask)
}

/// Prior bounds. Temperature is log-uniform over its range; everything else
/// is uniform inside its box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Priors {
    pub t_mk: (f64, f64),
    pub rabi_mhz: (f64, f64),
    pub detuning_mhz: (f64, f64),
    pub b_tesla: (f64, f64),
    pub linewidth_mhz: (f64, f64),
    pub amplitude: (f64, f64),
    pub offset: (f64, f64),
}

impl Priors {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let p = Self {
            t_mk: (cfg.prior_t_min_mk, cfg.prior_t_max_mk),
            rabi_mhz: (0.0, cfg.prior_rabi_max_mhz),
            detuning_mhz: (cfg.prior_detuning_min_mhz, cfg.prior_detuning_max_mhz),
            b_tesla: (0.0, cfg.prior_b_max_tesla),
            linewidth_mhz: (0.0, cfg.prior_linewidth_max_mhz),
            amplitude: (1e-12, 1e12),
            offset: (0.0, 1e12),
        };
        p.validate()?;
        Ok(p)
    }

    /// Scale the amplitude and offset boxes to the data at hand.
    pub fn for_data(mut self, data: &MeasuredSpectrum) -> Self {
        let max = data.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        self.amplitude = (1e-9 * max, 1e4 * max);
        self.offset = (0.0, 10.0 * max + 10.0);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_mk.0 > 0.0) {
            return Err(Error::InvalidParameter(
                "temperature prior must start above 0 mK".into(),
            ));
        }
        let pairs = [
            ("temperature", self.t_mk),
            ("rabi", self.rabi_mhz),
            ("detuning", self.detuning_mhz),
            ("b_field", self.b_tesla),
            ("linewidth", self.linewidth_mhz),
            ("amplitude", self.amplitude),
            ("offset", self.offset),
        ];
        for (name, (lo, hi)) in pairs {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "bad {name} prior bounds ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn bounds(&self, idx: usize) -> (f64, f64) {
        match idx {
            0 => self.t_mk,
            1 | 2 => self.rabi_mhz,
            3 => self.detuning_mhz,
            4 => self.b_tesla,
            5 | 6 => self.linewidth_mhz,
            7 => self.amplitude,
            8 => self.offset,
            _ => panic!("parameter index {idx} out of range"),
        }
    }

    /// All nine parameters inside their boxes, frozen ones included.
    pub fn contains(&self, p: &FitParameters) -> Result<()> {
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let (lo, hi) = self.bounds(i);
            let v = p.get(i);
            if !(v >= lo && v <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside prior [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Priors {
    fn default() -> Self {
        Priors::from_config(&RunConfig::default()).expect("default priors valid")
    }
}

/// Markov chain run lengths and seeding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSettings {
    pub chains: usize,
    pub burn_in: usize,
    /// Post-burn-in steps per chain (before thinning).
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self {
            chains: cfg.mcmc_chains,
            burn_in: cfg.mcmc_burn_in,
            samples: cfg.mcmc_samples,
            thin: cfg.mcmc_thin,
            seed: cfg.seed,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.chains < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 chains for convergence diagnostics".into(),
            ));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if self.samples < 20 * self.thin {
            return Err(Error::InvalidParameter(format!(
                "samples = {} keeps too few draws at thin = {}",
                self.samples, self.thin
            )));
        }
        if self.burn_in < 100 {
            return Err(Error::InvalidParameter(
                "burn_in must be at least 100".into(),
            ));
        }
        Ok(self)
    }
}

/// Lineshape model used inside fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitModel {
    /// Thermal width folded into the 866 dephasing channel; one sweep per
    /// evaluation and eligible for table lookup.
    Effective,
    /// Explicit velocity-class average; accurate and slow.
    Quadrature { nodes: usize },
}

impl FitModel {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match cfg.fit_model.as_str() {
            "effective" => Ok(FitModel::Effective),
            "quadrature" => Ok(FitModel::Quadrature {
                nodes: cfg.quadrature_nodes,
            }),
            other => Err(Error::Config(format!(
                "fit_model must be effective or quadrature, got {other:?}"
            ))),
        }
    }
}

struct GammaTable {
    physics: [f64; 6],
    ln_gamma_0: f64,
    step: f64,
    /// values[node][grid point]
    values: Vec<Vec<f64>>,
}

impl GammaTable {
    /// Cubic Hermite interpolation in ln(thermal width), clamped to the
    /// tabulated range.
    fn interp(&self, gamma: f64, out: &mut Vec<f64>) {
        let n = self.values.len();
        let npts = self.values[0].len();
        let x = gamma.max(1e-300).ln();
        let t = ((x - self.ln_gamma_0) / self.step).clamp(0.0, (n - 1) as f64 - 1e-9);
        let k = t.floor() as usize;
        let s = t - k as f64;
        let (h00, h10, h01, h11) = {
            let s2 = s * s;
            let s3 = s2 * s;
            (
                2.0 * s3 - 3.0 * s2 + 1.0,
                s3 - 2.0 * s2 + s,
                -2.0 * s3 + 3.0 * s2,
                s3 - s2,
            )
        };
        let v0 = &self.values[k];
        let v1 = &self.values[k + 1];
        let vm = &self.values[k.saturating_sub(1)];
        let vp = &self.values[(k + 2).min(n - 1)];
        let (c0, c1) = (
            if k == 0 { 1.0 } else { 0.5 },
            if k + 2 > n - 1 { 1.0 } else { 0.5 },
        );
        out.clear();
        out.reserve(npts);
        for i in 0..npts {
            let d0 = c0 * (v1[i] - vm[i]);
            let d1 = c1 * (vp[i] - v0[i]);
            let v = h00 * v0[i] + h10 * d0 + h01 * v1[i] + h11 * d1;
            out.push(v.max(0.0));
        }
    }
}

/// Maps fit parameters to model fluorescence on a fixed Δ₈₆₆ grid.
pub struct ForwardModel {
    sys: LevelSystem,
    base_a: DriveConfig,
    base_b: DriveConfig,
    geom: BeamGeometry,
    grid: Vec<f64>,
    model: FitModel,
    table: Option<GammaTable>,
}

impl ForwardModel {
    pub fn new(
        sys: LevelSystem,
        drive_a: DriveConfig,
        drive_b: DriveConfig,
        geom: BeamGeometry,
        grid: Vec<f64>,
        model: FitModel,
    ) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "model grid must be nonempty and strictly increasing".into(),
            ));
        }
        if let FitModel::Quadrature { nodes } = model {
            if nodes < 3 {
                return Err(Error::InvalidParameter(
                    "quadrature model needs at least 3 nodes".into(),
                ));
            }
        }
        Ok(Self {
            sys,
            base_a: drive_a,
            base_b: drive_b,
            geom,
            grid,
            model,
            table: None,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let sys = cfg.level_system()?;
        let (da, db) = cfg.drives()?;
        let geom = cfg.geometry()?;
        let grid = cfg.grid()?;
        Self::new(sys, da, db, geom, grid, FitModel::from_config(cfg)?)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn kind(&self) -> FitModel {
        self.model
    }

    fn physics_key(p: &FitParameters) -> [f64; 6] {
        [
            p.rabi_397_mhz,
            p.rabi_866_mhz,
            p.detuning_397_mhz,
            p.b_field_tesla,
            p.linewidth_397_mhz,
            p.linewidth_866_mhz,
        ]
    }

    fn drives_at(&self, p: &FitParameters) -> Result<(DriveConfig, DriveConfig)> {
        let a = DriveConfig::new(
            p.detuning_397_mhz,
            p.rabi_397_mhz,
            self.base_a.wavelength_nm,
            p.linewidth_397_mhz,
            self.base_a.direction,
        )?;
        let b = DriveConfig::new(
            0.0,
            p.rabi_866_mhz,
            self.base_b.wavelength_nm,
            p.linewidth_866_mhz,
            self.base_b.direction,
        )?;
        Ok((a, b))
    }

    /// Model fluorescence without table shortcuts.
    pub fn values_exact(&self, p: &FitParameters) -> Result<Vec<f64>> {
        let (da, db) = self.drives_at(p)?;
        let field = ZeemanField::new(p.b_field_tesla)?;
        let t = ThermalState::new(p.t_mk)?;
        match self.model {
            FitModel::Effective => {
                let gd = doppler_width(&t, &self.geom);
                effective_broadened_values(&self.sys, &da, &db, &field, &self.grid, gd)
            }
            FitModel::Quadrature { nodes } => spectrum_thermal_quadrature(
                &self.sys, &da, &db, &field, &self.grid, &t, &self.geom, nodes,
            )
            .map(|s| s.fluorescence),
        }
    }

    /// Model fluorescence, served from the table when one matches the
    /// parameters' physics.
    pub fn values(&self, p: &FitParameters) -> Result<Vec<f64>> {
        if self.table_ready_for(p) {
            let t = ThermalState::new(p.t_mk)?;
            let gd = doppler_width(&t, &self.geom);
            let mut out = Vec::new();
            self.table.as_ref().unwrap().interp(gd, &mut out);
            return Ok(out);
        }
        self.values_exact(p)
    }

    /// Tabulate effective lineshapes over the thermal width spanned by
    /// temperatures [t_min, t_max] at the physics in `p`. Fits with only
    /// temperature, amplitude and offset free then interpolate instead of
    /// solving steady states.
    pub fn prepare_table(
        &mut self,
        p: &FitParameters,
        t_min_mk: f64,
        t_max_mk: f64,
        nodes: usize,
    ) -> Result<()> {
        if self.model != FitModel::Effective {
            return Err(Error::InvalidParameter(
                "lineshape tables apply to the effective model only".into(),
            ));
        }
        if !(t_min_mk > 0.0 && t_max_mk > t_min_mk) {
            return Err(Error::InvalidParameter(format!(
                "bad table temperature range [{t_min_mk}, {t_max_mk}] mK"
            )));
        }
        if nodes < 8 {
            return Err(Error::InvalidParameter(
                "table needs at least 8 nodes".into(),
            ));
        }
        let g_lo = doppler_width(&ThermalState::new(t_min_mk)?, &self.geom);
        let g_hi = doppler_width(&ThermalState::new(t_max_mk)?, &self.geom);
        if !(g_lo > 0.0) {
            return Err(Error::InvalidParameter(
                "thermal width vanishes at the lower table bound".into(),
            ));
        }
        let (x0, x1) = (g_lo.ln(), g_hi.ln());
        let step = (x1 - x0) / (nodes - 1) as f64;
        let (da, db) = self.drives_at(p)?;
        let field = ZeemanField::new(p.b_field_tesla)?;
        let mut values = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let gamma = (x0 + k as f64 * step).exp();
            values.push(effective_broadened_values(
                &self.sys, &da, &db, &field, &self.grid, gamma,
            )?);
        }
        self.table = Some(GammaTable {
            physics: Self::physics_key(p),
            ln_gamma_0: x0,
            step,
            values,
        });
        Ok(())
    }

    pub fn table_ready_for(&self, p: &FitParameters) -> bool {
        self.model == FitModel::Effective
            && self
                .table
                .as_ref()
                .is_some_and(|t| t.physics == Self::physics_key(p))
    }
}

fn check_grids(data: &MeasuredSpectrum, model: &ForwardModel) -> Result<()> {
    if data.len() != model.grid.len()
        || data
            .detuning_mhz
            .iter()
            .zip(&model.grid)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::InvalidParameter(
            "data grid does not match the model grid".into(),
        ));
    }
    Ok(())
}

/// Poisson log-likelihood Σ nᵢ ln μᵢ − μᵢ − ln nᵢ! with expected counts
/// μᵢ = amplitude · F̃ᵢ + offset.
pub fn poisson_log_likelihood(
    data: &MeasuredSpectrum,
    params: &FitParameters,
    model: &ForwardModel,
) -> Result<f64> {
    check_grids(data, model)?;
    let f = model.values(params)?;
    let mut ll = 0.0;
    for (i, &fi) in f.iter().enumerate() {
        let mu = params.amplitude * fi + params.offset;
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "expected count {mu} is not positive at detuning {} MHz",
                data.detuning_mhz[i]
            )));
        }
        let n = data.counts[i] as f64;
        ll += n * mu.ln() - mu - ln_gamma(n + 1.0);
    }
    Ok(ll)
}

fn poisson_deviance(counts: &[u64], mu: &[f64]) -> f64 {
    let mut d = 0.0;
    for i in 0..counts.len() {
        let n = counts[i] as f64;
        d += 2.0 * (mu[i] - n);
        if n > 0.0 {
            d += 2.0 * n * (n / mu[i]).ln();
        }
    }
    d
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (q / 100.0) * (n - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < n {
        sorted[k] * (1.0 - frac) + sorted[k + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Split-chain Gelman-Rubin statistic for one coordinate.
fn split_rhat(chains: &[Vec<Vec<f64>>], dim: usize) -> f64 {
    let mut seqs: Vec<Vec<f64>> = Vec::new();
    for kept in chains {
        let vals: Vec<f64> = kept.iter().map(|x| x[dim]).collect();
        let half = vals.len() / 2;
        if half < 2 {
            return f64::INFINITY;
        }
        seqs.push(vals[..half].to_vec());
        seqs.push(vals[half..2 * half].to_vec());
    }
    let n = seqs[0].len() as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let vhat = (n - 1.0) / n * w + b / n;
    (vhat / w).sqrt()
}

struct ChainRun {
    kept: Vec<Vec<f64>>,
    acceptance: f64,
}

fn run_chain<F>(
    log_post: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    settings: &ChainSettings,
    chain_idx: usize,
) -> Result<ChainRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(chain_idx as u64));
    let margin = |j: usize| 1e-12 * (hi[j] - lo[j]);
    let start: Vec<f64> = (0..d)
        .map(|j| x0[j].clamp(lo[j] + margin(j), hi[j] - margin(j)))
        .collect();
    let f0 = log_post(&start);
    if !f0.is_finite() {
        return Err(Error::InvalidParameter(
            "initial parameters have zero posterior density".into(),
        ));
    }

    // Proposal scales from the log-posterior curvature at the start point
    // (Laplace width per coordinate); prior boxes can be many orders of
    // magnitude wider than the posterior, so a box fraction is only the
    // fallback where the curvature carries no information.
    let mut scale: Vec<f64> = Vec::with_capacity(d);
    for j in 0..d {
        let box_w = hi[j] - lo[j];
        let h = 1e-4 * box_w;
        let mut xp = start.clone();
        let mut xm = start.clone();
        xp[j] = (start[j] + h).min(hi[j] - margin(j));
        xm[j] = (start[j] - h).max(lo[j] + margin(j));
        let (fp, fm) = (log_post(&xp), log_post(&xm));
        let hp = xp[j] - start[j];
        let hm = start[j] - xm[j];
        let curv = if fp.is_finite() && fm.is_finite() && hp > 0.0 && hm > 0.0 {
            ((fp - f0) / hp - (f0 - fm) / hm) * 2.0 / (hp + hm)
        } else {
            0.0
        };
        let s = if curv < 0.0 {
            (2.4 / ((-curv).sqrt() * (d as f64).sqrt())).min(0.05 * box_w)
        } else {
            0.05 * box_w
        };
        scale.push(s.max(1e-12 * box_w));
    }

    // overdispersed start: a few posterior widths out, clamped into the box
    let mut x: Vec<f64> = (0..d)
        .map(|j| {
            let z: f64 = rng.sample(StandardNormal);
            (start[j] + 2.0 * scale[j] * z).clamp(lo[j] + margin(j), hi[j] - margin(j))
        })
        .collect();
    let mut fx = log_post(&x);
    if !fx.is_finite() {
        x = start.clone();
        fx = f0;
    }

    let mut window_acc = 0usize;
    let mut adapt_keep: Vec<Vec<f64>> = Vec::new();

    for step in 0..settings.burn_in {
        let prop: Vec<f64> = (0..d)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                x[j] + scale[j] * z
            })
            .collect();
        let fp = log_post(&prop);
        let u: f64 = rng.gen();
        if fp - fx > u.ln() {
            x = prop;
            fx = fp;
            window_acc += 1;
        }
        if (step + 1) % 50 == 0 {
            let rate = window_acc as f64 / 50.0;
            if rate > 0.45 {
                scale.iter_mut().for_each(|s| *s *= 1.6);
            } else if rate < 0.15 {
                scale.iter_mut().for_each(|s| *s *= 0.6);
            }
            window_acc = 0;
        }
        if step >= settings.burn_in / 2 {
            adapt_keep.push(x.clone());
        }
    }

    // freeze a correlated proposal from the late burn-in samples
    let chol: Option<DMatrix<f64>> = if adapt_keep.len() >= 10 * d.max(2) {
        let n = adapt_keep.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| adapt_keep.iter().map(|x| x[j]).sum::<f64>() / n)
            .collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for xk in &adapt_keep {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (xk[a] - mean[a]) * (xk[b] - mean[b]);
                }
            }
        }
        cov /= n - 1.0;
        let mut p = cov * (2.38 * 2.38 / d as f64);
        for j in 0..d {
            // floor keeps the proposal alive if a coordinate never moved
            p[(j, j)] += 1e-12 + 0.01 * scale[j] * scale[j];
        }
        Cholesky::new(p).map(|c| c.l())
    } else {
        None
    };

    let mut kept = Vec::with_capacity(settings.samples / settings.thin);
    let mut accepted = 0usize;
    for step in 0..settings.samples {
        let prop: Vec<f64> = match &chol {
            Some(l) => {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let dx = l * z;
                (0..d).map(|j| x[j] + dx[j]).collect()
            }
            None => (0..d)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    x[j] + scale[j] * z
                })
                .collect(),
        };
        let fp = log_post(&prop);
        let u: f64 = rng.gen();
        if fp - fx > u.ln() {
            x = prop;
            fx = fp;
            accepted += 1;
        }
        if (step + 1) % settings.thin == 0 {
            kept.push(x.clone());
        }
    }
    Ok(ChainRun {
        kept,
        acceptance: accepted as f64 / settings.samples as f64,
    })
}

/// 68 % interval and scale of one fitted parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamStat {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRhat {
    pub name: String,
    pub rhat: f64,
}

/// Outcome of a spectrum fit. MCMC fills the posterior fields; least
/// squares leaves `samples` empty and reports covariance-based sigmas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub point: FitParameters,
    pub intervals: Vec<ParamStat>,
    /// Thinned posterior draws, rows of free-parameter values in natural
    /// units, all chains concatenated.
    pub samples: Vec<Vec<f64>>,
    pub sample_names: Vec<String>,
    pub deviance: f64,
    pub acceptance_rate: Option<f64>,
    pub rhat: Vec<ParamRhat>,
}

impl FitResult {
    /// Interval for one parameter by name.
    pub fn interval(&self, name: &str) -> Option<&ParamStat> {
        self.intervals.iter().find(|s| s.name == name)
    }
}

fn apply_free(init: &FitParameters, free: &[usize], x: &[f64]) -> FitParameters {
    let mut p = init.clone();
    for (slot, &idx) in free.iter().enumerate() {
        let v = if idx == P_T { x[slot].exp() } else { x[slot] };
        p.set(idx, v);
    }
    p
}

/// Posterior sampling for spectrum fits: adaptive Metropolis-Hastings over
/// the free parameters, temperature in ln space. Deterministic per seed.
pub fn fit_spectrum_mcmc(
    data: &MeasuredSpectrum,
    model: &mut ForwardModel,
    init: &FitParameters,
    priors: &Priors,
    settings: &ChainSettings,
) -> Result<FitResult> {
    let settings = settings.clone().validated()?;
    check_grids(data, model)?;
    if data.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 data points, got {}",
            data.len()
        )));
    }
    let free = init.free_indices();
    if free.is_empty() {
        return Err(Error::InvalidParameter("no free parameters".into()));
    }
    priors.validate()?;
    priors.contains(init)?;

    let fast = free.iter().all(|&i| i == P_T || i == P_AMP || i == P_OFF)
        && model.kind() == FitModel::Effective;
    if fast && !model.table_ready_for(init) {
        model.prepare_table(init, priors.t_mk.0, priors.t_mk.1, DEFAULT_TABLE_NODES)?;
    }
    let model: &ForwardModel = model;

    // chain coordinates: free params in order, temperature as ln T
    let mut lo = Vec::with_capacity(free.len());
    let mut hi = Vec::with_capacity(free.len());
    let mut x0 = Vec::with_capacity(free.len());
    for &idx in &free {
        let (a, b) = priors.bounds(idx);
        if idx == P_T {
            lo.push(a.ln());
            hi.push(b.ln());
            x0.push(init.get(idx).ln());
        } else {
            lo.push(a);
            hi.push(b);
            x0.push(init.get(idx));
        }
    }

    let ln_fact: f64 = data.counts.iter().map(|&n| ln_gamma(n as f64 + 1.0)).sum();
    let log_post = |x: &[f64]| -> f64 {
        for j in 0..x.len() {
            if !(x[j] >= lo[j] && x[j] <= hi[j]) {
                return f64::NEG_INFINITY;
            }
        }
        let p = apply_free(init, &free, x);
        let Ok(f) = model.values(&p) else {
            return f64::NEG_INFINITY;
        };
        let mut ll = 0.0;
        for (i, &fi) in f.iter().enumerate() {
            let mu = p.amplitude * fi + p.offset;
            let n = data.counts[i] as f64;
            if !(mu > 0.0) {
                if n > 0.0 || mu < 0.0 {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            ll += n * mu.ln() - mu;
        }
        ll - ln_fact
    };

    let runs: Vec<Result<ChainRun>> = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain(&log_post, &x0, &lo, &hi, &settings, c))
        .collect();
    let mut chains = Vec::with_capacity(settings.chains);
    let mut acc_sum = 0.0;
    for r in runs {
        let r = r?;
        acc_sum += r.acceptance;
        chains.push(r.kept);
    }
    let acceptance = acc_sum / settings.chains as f64;

    let rhat: Vec<ParamRhat> = free
        .iter()
        .enumerate()
        .map(|(slot, &idx)| ParamRhat {
            name: PARAM_NAMES[idx].to_string(),
            rhat: split_rhat(&chains, slot),
        })
        .collect();

    // combined natural-unit samples
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for kept in &chains {
        for x in kept {
            samples.push(
                free.iter()
                    .enumerate()
                    .map(|(slot, &idx)| if idx == P_T { x[slot].exp() } else { x[slot] })
                    .collect(),
            );
        }
    }

    // a posterior piled against the upper temperature prior edge means the
    // data only support a lower bound
    if let Some(slot) = free.iter().position(|&i| i == P_T) {
        let lnt: Vec<f64> = chains
            .iter()
            .flat_map(|kept| kept.iter().map(move |x| x[slot]))
            .collect();
        let edge = hi[slot] - EDGE_BAND * (hi[slot] - lo[slot]);
        let mass = lnt.iter().filter(|&&u| u > edge).count() as f64 / lnt.len() as f64;
        if mass > EDGE_MASS_LIMIT {
            let mut t: Vec<f64> = lnt.iter().map(|u| u.exp()).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return Err(Error::TemperatureUnbounded {
                lower_bound_mk: percentile(&t, 5.0),
            });
        }
    }

    if let Some(worst) = rhat.iter().max_by(|a, b| {
        a.rhat
            .partial_cmp(&b.rhat)
            .unwrap_or(std::cmp::Ordering::Equal)
    }) {
        if !(worst.rhat <= RHAT_LIMIT) {
            return Err(Error::Convergence {
                max_rhat: worst.rhat,
                param: worst.name.clone(),
                acceptance,
            });
        }
    }

    let mut point = init.clone();
    let mut intervals = Vec::with_capacity(free.len());
    for (slot, &idx) in free.iter().enumerate() {
        let mut col: Vec<f64> = samples.iter().map(|s| s[slot]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = percentile(&col, 50.0);
        let lo68 = percentile(&col, 16.0);
        let hi68 = percentile(&col, 84.0);
        point.set(idx, med);
        intervals.push(ParamStat {
            name: PARAM_NAMES[idx].to_string(),
            lower: lo68,
            upper: hi68,
            sigma: 0.5 * (hi68 - lo68),
        });
    }

    let f = model.values(&point)?;
    let mu: Vec<f64> = f
        .iter()
        .map(|&v| point.amplitude * v + point.offset)
        .collect();
    let deviance = poisson_deviance(&data.counts, &mu);

    Ok(FitResult {
        point,
        intervals,
        samples,
        sample_names: free.iter().map(|&i| PARAM_NAMES[i].to_string()).collect(),
        deviance,
        acceptance_rate: Some(acceptance),
        rhat,
    })
}

fn finite_jacobian<F>(
    f: &mut F,
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    m: usize,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = x.len();
    let mut jac = DMatrix::<f64>::zeros(m, d);
    for j in 0..d {
        let h = (1e-6 * x[j].abs()).max(1e-9 * (hi[j] - lo[j])).max(1e-12);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] = (x[j] + h).min(hi[j]);
        xm[j] = (x[j] - h).max(lo[j]);
        let denom = xp[j] - xm[j];
        if denom == 0.0 {
            continue;
        }
        let rp = f(&xp)?;
        let rm = f(&xm)?;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / denom;
        }
    }
    Ok(jac)
}

struct LmFit {
    x: Vec<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

fn levenberg<F>(mut f: F, x0: Vec<f64>, lo: &[f64], hi: &[f64], max_iter: usize) -> Result<LmFit>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = x0.len();
    let mut x: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(j, &v)| v.clamp(lo[j], hi[j]))
        .collect();
    let mut r = f(&x)?;
    let m = r.len();
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut jac = finite_jacobian(&mut f, &x, lo, hi, m)?;
    let mut lambda = 1e-3;

    for _ in 0..max_iter {
        let jt = jac.transpose();
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() < 1e-12 * (1.0 + cost) {
            break;
        }
        let a = &jt * &jac;
        let mut improved = false;
        let mut stalled = false;
        for _ in 0..40 {
            let mut damped = a.clone();
            for k in 0..d {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
            }
            let step = match damped.lu().solve(&g) {
                Some(s) => s,
                None => {
                    lambda *= 5.0;
                    continue;
                }
            };
            let xt: Vec<f64> = (0..d)
                .map(|k| (x[k] - step[k]).clamp(lo[k], hi[k]))
                .collect();
            if let Ok(rt) = f(&xt) {
                let ct: f64 = rt.iter().map(|v| v * v).sum();
                if ct < cost {
                    let rel = (cost - ct) / cost.max(1e-300);
                    x = xt;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    stalled = rel < 1e-12;
                    break;
                }
            }
            lambda *= 5.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved || stalled {
            break;
        }
        jac = finite_jacobian(&mut f, &x, lo, hi, m)?;
    }
    Ok(LmFit {
        x,
        jacobian: jac,
        cost,
    })
}

/// Reject fits whose Jacobian has an (almost) null direction, naming the
/// parameters that span it.
fn degeneracy_check(jac: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let svd = jac.clone().svd(false, true);
    let smax = svd.singular_values.amax();
    let vt = svd.v_t.as_ref().expect("svd with v requested");
    let mut bad: Vec<String> = Vec::new();
    for k in 0..svd.singular_values.len() {
        if smax == 0.0 || svd.singular_values[k] / smax < 1e-10 {
            for (j, name) in names.iter().enumerate() {
                if (smax == 0.0 || vt[(k, j)].abs() > 0.3) && !bad.contains(name) {
                    bad.push(name.clone());
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::DegenerateFit(bad))
    }
}

/// Weighted Levenberg point fit with weights 1/max(nᵢ, 1). Returns
/// covariance-based errors and no posterior samples.
pub fn fit_spectrum_lsq(
    data: &MeasuredSpectrum,
    model: &mut ForwardModel,
    init: &FitParameters,
    priors: &Priors,
) -> Result<FitResult> {
    check_grids(data, model)?;
    let free = init.free_indices();
    if free.is_empty() {
        return Err(Error::InvalidParameter("no free parameters".into()));
    }
    if data.len() <= free.len() {
        return Err(Error::InvalidParameter(format!(
            "{} data points cannot constrain {} parameters",
            data.len(),
            free.len()
        )));
    }
    priors.validate()?;
    priors.contains(init)?;

    let fast = free.iter().all(|&i| i == P_T || i == P_AMP || i == P_OFF)
        && model.kind() == FitModel::Effective;
    if fast && !model.table_ready_for(init) {
        model.prepare_table(init, priors.t_mk.0, priors.t_mk.1, DEFAULT_TABLE_NODES)?;
    }
    let model: &ForwardModel = model;

    let (lo, hi): (Vec<f64>, Vec<f64>) = free.iter().map(|&idx| priors.bounds(idx)).unzip();
    let x0: Vec<f64> = free.iter().map(|&idx| init.get(idx)).collect();
    let w: Vec<f64> = data
        .counts
        .iter()
        .map(|&n| 1.0 / (n.max(1) as f64))
        .collect();
    let names: Vec<String> = free.iter().map(|&i| PARAM_NAMES[i].to_string()).collect();

    let mut residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let mut p = init.clone();
        for (slot, &idx) in free.iter().enumerate() {
            p.set(idx, x[slot]);
        }
        let f = model.values(&p)?;
        Ok((0..f.len())
            .map(|i| {
                let mu = p.amplitude * f[i] + p.offset;
                (data.counts[i] as f64 - mu) * w[i].sqrt()
            })
            .collect())
    };

    let j0 = finite_jacobian(&mut residuals, &x0, &lo, &hi, data.len())?;
    degeneracy_check(&j0, &names)?;

    let lm = levenberg(&mut residuals, x0, &lo, &hi, 100)?;
    degeneracy_check(&lm.jacobian, &names)?;

    let a = lm.jacobian.transpose() * &lm.jacobian;
    let cov = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateFit(names.clone()))?;

    let mut point = init.clone();
    for (slot, &idx) in free.iter().enumerate() {
        point.set(idx, lm.x[slot]);
    }
    let intervals: Vec<ParamStat> = free
        .iter()
        .enumerate()
        .map(|(slot, &idx)| {
            let sigma = cov[(slot, slot)].max(0.0).sqrt();
            ParamStat {
                name: PARAM_NAMES[idx].to_string(),
                lower: lm.x[slot] - sigma,
                upper: lm.x[slot] + sigma,
                sigma,
            }
        })
        .collect();

    let f = model.values(&point)?;
    let mu: Vec<f64> = f
        .iter()
        .map(|&v| point.amplitude * v + point.offset)
        .collect();
    let deviance = poisson_deviance(&data.counts, &mu);

    Ok(FitResult {
        point,
        intervals,
        samples: Vec::new(),
        sample_names: names,
        deviance,
        acceptance_rate: None,
        rhat: Vec::new(),
    })
}

/// Exponential relaxation fit a·exp(−t/τ) + offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationFit {
    /// Amplitude a, mK; negative for heating (temperature rising toward
    /// the asymptote).
    pub amplitude_mk: f64,
    pub tau_us: f64,
    pub offset_mk: f64,
    pub amplitude_err_mk: f64,
    pub tau_err_us: f64,
    pub offset_err_mk: f64,
}

/// Weighted fit of T(t) = a·exp(−t/τ) + offset to a temperature series.
pub fn fit_exponential_relaxation(series: &[RelaxationPoint]) -> Result<RelaxationFit> {
    if series.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 relaxation points, got {}",
            series.len()
        )));
    }
    for p in series {
        if !(p.sigma_mk > 0.0) || !p.time_us.is_finite() || !p.temperature_mk.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bad relaxation point at t = {} us",
                p.time_us
            )));
        }
    }
    let t_first = series
        .iter()
        .map(|p| p.time_us)
        .fold(f64::INFINITY, f64::min);
    let t_last = series
        .iter()
        .map(|p| p.time_us)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = t_last - t_first;
    if !(span > 0.0) {
        return Err(Error::InvalidParameter(
            "relaxation times are all equal".into(),
        ));
    }

    // weighted constant fit as the null model
    let wsum: f64 = series.iter().map(|p| 1.0 / (p.sigma_mk * p.sigma_mk)).sum();
    let wmean: f64 = series
        .iter()
        .map(|p| p.temperature_mk / (p.sigma_mk * p.sigma_mk))
        .sum::<f64>()
        / wsum;
    let sse_const: f64 = series
        .iter()
        .map(|p| ((p.temperature_mk - wmean) / p.sigma_mk).powi(2))
        .sum();

    let t_range: f64 = series
        .iter()
        .map(|p| p.temperature_mk)
        .fold(f64::NEG_INFINITY, f64::max)
        - series
            .iter()
            .map(|p| p.temperature_mk)
            .fold(f64::INFINITY, f64::min);
    let scale = t_range.abs().max(1.0);

    let first = series
        .iter()
        .min_by(|a, b| a.time_us.partial_cmp(&b.time_us).unwrap())
        .unwrap();
    let last = series
        .iter()
        .max_by(|a, b| a.time_us.partial_cmp(&b.time_us).unwrap())
        .unwrap();
    let x0 = vec![
        first.temperature_mk - last.temperature_mk,
        span / 3.0,
        last.temperature_mk,
    ];
    let tau_lo = span * 1e-3;
    let tau_hi = span * 1e3;
    let lo = [-100.0 * scale, tau_lo, last.temperature_mk - 100.0 * scale];
    let hi = [100.0 * scale, tau_hi, last.temperature_mk + 100.0 * scale];

    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(series
            .iter()
            .map(|p| {
                let model = x[0] * (-p.time_us / x[1]).exp() + x[2];
                (p.temperature_mk - model) / p.sigma_mk
            })
            .collect())
    };

    let lm = levenberg(residuals, x0, &lo, &hi, 200)?;

    if !(sse_const - lm.cost > 1e-3 * sse_const) {
        return Err(Error::FitBound(
            "exponential model does not improve on a constant; no relaxation detected".into(),
        ));
    }
    if lm.x[1] <= tau_lo * 1.01 || lm.x[1] >= tau_hi * 0.99 {
        return Err(Error::FitBound(format!(
            "time constant ran to the fit bound at {:.3} us",
            lm.x[1]
        )));
    }

    let names = ["amplitude", "tau", "offset"].map(String::from);
    degeneracy_check(&lm.jacobian, &names)?;
    let a = lm.jacobian.transpose() * &lm.jacobian;
    let cov = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateFit(names.to_vec()))?;

    Ok(RelaxationFit {
        amplitude_mk: lm.x[0],
        tau_us: lm.x[1],
        offset_mk: lm.x[2],
        amplitude_err_mk: cov[(0, 0)].max(0.0).sqrt(),
        tau_err_us: cov[(1, 1)].max(0.0).sqrt(),
        offset_err_mk: cov[(2, 2)].max(0.0).sqrt(),
    })
}

/// Log-log power-law fit for bath-noise scaling data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseScaling {
    pub exponent: f64,
    /// T at E_rms = 1 in the units of the inputs.
    pub prefactor: f64,
    pub exponent_err: f64,
}

/// Fit T = prefactor · E^exponent by ordinary least squares in log-log
/// space. Validates the expected quadratic scaling of engineered noise
/// heating.
pub fn noise_scaling_check(pairs: &[(f64, f64)]) -> Result<NoiseScaling> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 (E_rms, T) pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|&(e, t)| !(e > 0.0) || !(t > 0.0)) {
        return Err(Error::InvalidParameter(
            "noise-scaling pairs must be positive".into(),
        ));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter(
            "E_rms values must not all coincide".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let exponent_err = (sse / (n - 2.0) / sxx).sqrt();
    Ok(NoiseScaling {
        exponent: slope,
        prefactor: intercept.exp(),
        exponent_err,
    })
}

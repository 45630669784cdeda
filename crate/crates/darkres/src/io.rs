//! Configuration files, spectra on disk, and synthetic measurements.
//!
//! Formats are deliberately plain: JSON configs whose numeric keys spell
//! their unit in the key name (`rabi_397_mhz`, never `rabi_397`), a CSV
//! measurement format with header `detuning_mhz,counts,exposure_us,reps`,
//! and result JSON that always embeds the fully resolved config snapshot.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::levels::{
    build_ca40_system, build_lambda_system, DriveConfig, LevelSystem, ZeemanField,
};
use crate::spectrum::{BeamGeometry, Spectrum, ThermalState};
use crate::units::CA40_MASS_AMU;
use crate::{Error, Result};

/// A photon-count spectrum as it comes off the instrument (or a synthesizer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasuredSpectrum {
    /// Strictly increasing Δ₈₆₆ grid, MHz.
    pub detuning_mhz: Vec<f64>,
    /// Total photon counts per grid point.
    pub counts: Vec<u64>,
    /// Exposure per point, µs.
    pub exposure_us: Vec<f64>,
    /// Repetitions per point.
    pub reps: Vec<u32>,
    /// Detuning the scan parks at between points, if recorded.
    pub equilibration_detuning_mhz: Option<f64>,
}

impl MeasuredSpectrum {
    pub fn new(
        detuning_mhz: Vec<f64>,
        counts: Vec<u64>,
        exposure_us: Vec<f64>,
        reps: Vec<u32>,
        equilibration_detuning_mhz: Option<f64>,
    ) -> Result<Self> {
        let n = detuning_mhz.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty measurement".into()));
        }
        if counts.len() != n || exposure_us.len() != n || reps.len() != n {
            return Err(Error::InvalidParameter(format!(
                "column lengths differ: {} detunings, {} counts, {} exposures, {} reps",
                n,
                counts.len(),
                exposure_us.len(),
                reps.len()
            )));
        }
        if detuning_mhz.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite detuning".into()));
        }
        if detuning_mhz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "detuning grid must be strictly increasing".into(),
            ));
        }
        if exposure_us.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter(
                "exposure_us must be positive".into(),
            ));
        }
        Ok(Self {
            detuning_mhz,
            counts,
            exposure_us,
            reps,
            equilibration_detuning_mhz,
        })
    }

    pub fn len(&self) -> usize {
        self.detuning_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detuning_mhz.is_empty()
    }
}

/// Draw a synthetic measurement from a model spectrum: the model is scaled
/// so its maximum equals `photons_per_point` expected counts, then every
/// point is Poisson-distributed. Deterministic for a fixed seed.
pub fn synthesize_measurement(
    model: &Spectrum,
    photons_per_point: u64,
    seed: u64,
) -> Result<MeasuredSpectrum> {
    if photons_per_point == 0 {
        return Err(Error::InvalidParameter(
            "photons_per_point must be positive".into(),
        ));
    }
    let peak = model.fluorescence.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(
            "model spectrum is identically zero; nothing to scale to".into(),
        ));
    }
    let amplitude = photons_per_point as f64 / peak;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<u64> = model
        .fluorescence
        .iter()
        .map(|&f| {
            let mu = amplitude * f;
            if mu > 0.0 {
                Poisson::new(mu).expect("positive mean").sample(&mut rng) as u64
            } else {
                0
            }
        })
        .collect();
    let n = model.detuning_mhz.len();
    MeasuredSpectrum::new(
        model.detuning_mhz.clone(),
        counts,
        vec![20.0; n],
        vec![1; n],
        None,
    )
}

const SPECTRUM_HEADER: [&str; 4] = ["detuning_mhz", "counts", "exposure_us", "reps"];
const EQUIL_COMMENT_KEY: &str = "equilibration_detuning_mhz";

fn parse_field<T: FromStr>(rec: &StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or(Error::Parse {
        line,
        msg: format!("missing {name} column"),
    })?;
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} value {raw:?}"),
    })
}

/// Read a measurement CSV (header `detuning_mhz,counts,exposure_us,reps`,
/// optional leading `# equilibration_detuning_mhz = …` comment).
pub fn read_spectrum_csv(path: &Path) -> Result<MeasuredSpectrum> {
    let text = fs::read_to_string(path)?;
    let mut equil = None;
    let mut skipped = 0usize;
    let mut body_start = 0usize;
    for line in text.lines() {
        if !line.trim_start().starts_with('#') {
            break;
        }
        let stripped = line.trim_start().trim_start_matches('#').trim();
        if let Some((k, v)) = stripped.split_once('=') {
            if k.trim() == EQUIL_COMMENT_KEY {
                equil = Some(v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: skipped + 1,
                    msg: format!("bad {EQUIL_COMMENT_KEY} value {:?}", v.trim()),
                })?);
            }
        }
        skipped += 1;
        body_start += line.len() + 1;
    }
    let body = &text[body_start.min(text.len())..];

    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: skipped + 1,
            msg: e.to_string(),
        })?
        .clone();
    if !headers.iter().eq(SPECTRUM_HEADER) {
        return Err(Error::Parse {
            line: skipped + 1,
            msg: format!(
                "expected header {}, got {}",
                SPECTRUM_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut detuning = Vec::new();
    let mut counts = Vec::new();
    let mut exposure = Vec::new();
    let mut reps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0) + skipped,
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0) + skipped;
        let d: f64 = parse_field(&rec, 0, "detuning_mhz", line)?;
        if !d.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite detuning".into(),
            });
        }
        if let Some(&prev) = detuning.last() {
            if d <= prev {
                return Err(Error::Parse {
                    line,
                    msg: format!("detuning grid must be strictly increasing, {d} follows {prev}"),
                });
            }
        }
        let c: i64 = parse_field(&rec, 1, "counts", line)?;
        if c < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("counts must be nonnegative, got {c}"),
            });
        }
        let e: f64 = parse_field(&rec, 2, "exposure_us", line)?;
        if !(e > 0.0) {
            return Err(Error::Parse {
                line,
                msg: format!("exposure_us must be positive, got {e}"),
            });
        }
        let r: u32 = parse_field(&rec, 3, "reps", line)?;
        detuning.push(d);
        counts.push(c as u64);
        exposure.push(e);
        reps.push(r);
    }
    MeasuredSpectrum::new(detuning, counts, exposure, reps, equil)
}

pub fn write_spectrum_csv(ms: &MeasuredSpectrum, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(e) = ms.equilibration_detuning_mhz {
        buf.extend_from_slice(format!("# {EQUIL_COMMENT_KEY} = {e}\n").as_bytes());
    }
    let mut wtr = Writer::from_writer(buf);
    wtr.write_record(SPECTRUM_HEADER)?;
    for i in 0..ms.len() {
        wtr.serialize((
            ms.detuning_mhz[i],
            ms.counts[i],
            ms.exposure_us[i],
            ms.reps[i],
        ))?;
    }
    fs::write(
        path,
        wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

/// Write a model spectrum as `detuning_mhz,fluorescence` rows.
pub fn write_model_csv(s: &Spectrum, path: &Path) -> Result<()> {
    let mut wtr = Writer::from_writer(Vec::new());
    wtr.write_record(["detuning_mhz", "fluorescence"])?;
    for i in 0..s.detuning_mhz.len() {
        wtr.serialize((s.detuning_mhz[i], s.fluorescence[i]))?;
    }
    fs::write(
        path,
        wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

/// Read back a model spectrum written by [`write_model_csv`].
pub fn read_model_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if !headers.iter().eq(["detuning_mhz", "fluorescence"]) {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header detuning_mhz,fluorescence".into(),
        });
    }
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        grid.push(parse_field(&rec, 0, "detuning_mhz", line)?);
        values.push(parse_field(&rec, 1, "fluorescence", line)?);
    }
    Ok((grid, values))
}

/// One point of a temperature relaxation series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationPoint {
    pub time_us: f64,
    pub temperature_mk: f64,
    pub sigma_mk: f64,
}

/// Read a relaxation series CSV (header `time_us,temperature_mk,sigma_mk`).
pub fn read_relaxation_csv(path: &Path) -> Result<Vec<RelaxationPoint>> {
    let text = fs::read_to_string(path)?;
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if !headers.iter().eq(["time_us", "temperature_mk", "sigma_mk"]) {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header time_us,temperature_mk,sigma_mk".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let p = RelaxationPoint {
            time_us: parse_field(&rec, 0, "time_us", line)?,
            temperature_mk: parse_field(&rec, 1, "temperature_mk", line)?,
            sigma_mk: parse_field(&rec, 2, "sigma_mk", line)?,
        };
        if !(p.sigma_mk > 0.0) {
            return Err(Error::Parse {
                line,
                msg: format!("sigma_mk must be positive, got {}", p.sigma_mk),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_relaxation_csv(series: &[RelaxationPoint], path: &Path) -> Result<()> {
    let mut wtr = Writer::from_writer(Vec::new());
    for p in series {
        wtr.serialize(p)?;
    }
    fs::write(
        path,
        wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

/// Flat run configuration. Every key has a shipped default, so `{}` is a
/// valid config; numeric keys carry their unit in the name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `calcium8` or `lambda3`.
    pub system_kind: String,
    pub gamma_ps_mhz: f64,
    pub gamma_pd_mhz: f64,
    /// Total P decay rate, split by `branching_fraction` (lambda3 only).
    pub gamma_decay_mhz: f64,
    pub branching_fraction: f64,
    pub rabi_397_mhz: f64,
    pub rabi_866_mhz: f64,
    pub detuning_397_mhz: f64,
    pub linewidth_397_mhz: f64,
    pub linewidth_866_mhz: f64,
    pub wavelength_397_nm: f64,
    pub wavelength_866_nm: f64,
    pub b_field_tesla: f64,
    /// Angle between the beams, radians.
    pub alpha_rad: f64,
    pub mass_amu: f64,
    pub temperature_mk: f64,
    pub grid_start_mhz: f64,
    pub grid_stop_mhz: f64,
    pub grid_step_mhz: f64,
    pub quadrature_nodes: usize,
    pub photons_per_point: u64,
    pub exposure_us: f64,
    pub reps: u32,
    pub seed: u64,
    pub equilibration_detuning_mhz: Option<f64>,
    /// Parameters left free in fits; the rest are frozen at config values.
    pub fit_free: Vec<String>,
    /// Lineshape model used inside fits: `effective` or `quadrature`.
    pub fit_model: String,
    pub mcmc_chains: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_samples: usize,
    pub mcmc_thin: usize,
    pub prior_t_min_mk: f64,
    pub prior_t_max_mk: f64,
    pub prior_rabi_max_mhz: f64,
    pub prior_detuning_min_mhz: f64,
    pub prior_detuning_max_mhz: f64,
    pub prior_b_max_tesla: f64,
    pub prior_linewidth_max_mhz: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system_kind: "calcium8".into(),
            gamma_ps_mhz: 21.0,
            gamma_pd_mhz: 1.7,
            gamma_decay_mhz: 22.7,
            branching_fraction: 0.93,
            rabi_397_mhz: 12.0,
            rabi_866_mhz: 8.0,
            detuning_397_mhz: -14.0,
            linewidth_397_mhz: 0.45,
            linewidth_866_mhz: 0.49,
            wavelength_397_nm: 397.0,
            wavelength_866_nm: 866.0,
            b_field_tesla: 4.7e-4,
            alpha_rad: 0.0,
            mass_amu: CA40_MASS_AMU,
            temperature_mk: 3.1,
            grid_start_mhz: -34.0,
            grid_stop_mhz: 6.0,
            grid_step_mhz: 0.25,
            quadrature_nodes: 16,
            photons_per_point: 10_000,
            exposure_us: 20.0,
            reps: 1,
            seed: 1,
            equilibration_detuning_mhz: None,
            fit_free: vec!["temperature".into(), "amplitude".into()],
            fit_model: "effective".into(),
            mcmc_chains: 3,
            mcmc_burn_in: 1000,
            mcmc_samples: 2000,
            mcmc_thin: 2,
            prior_t_min_mk: 0.01,
            prior_t_max_mk: 1000.0,
            prior_rabi_max_mhz: 100.0,
            prior_detuning_min_mhz: -100.0,
            prior_detuning_max_mhz: 100.0,
            prior_b_max_tesla: 0.01,
            prior_linewidth_max_mhz: 10.0,
        }
    }
}

impl RunConfig {
    pub fn level_system(&self) -> Result<LevelSystem> {
        match self.system_kind.as_str() {
            "calcium8" => build_ca40_system(self.gamma_ps_mhz, self.gamma_pd_mhz),
            "lambda3" => build_lambda_system(self.gamma_decay_mhz, self.branching_fraction),
            other => Err(Error::Config(format!(
                "system_kind must be calcium8 or lambda3, got {other:?}"
            ))),
        }
    }

    /// The two drives; the 866 detuning starts at 0 and is swept by scans.
    pub fn drives(&self) -> Result<(DriveConfig, DriveConfig)> {
        let a = DriveConfig::new(
            self.detuning_397_mhz,
            self.rabi_397_mhz,
            self.wavelength_397_nm,
            self.linewidth_397_mhz,
            [1.0, 0.0, 0.0],
        )?;
        let b = DriveConfig::new(
            0.0,
            self.rabi_866_mhz,
            self.wavelength_866_nm,
            self.linewidth_866_mhz,
            [self.alpha_rad.cos(), self.alpha_rad.sin(), 0.0],
        )?;
        Ok((a, b))
    }

    pub fn field(&self) -> Result<ZeemanField> {
        ZeemanField::new(self.b_field_tesla)
    }

    pub fn geometry(&self) -> Result<BeamGeometry> {
        BeamGeometry::new(
            self.alpha_rad,
            self.wavelength_397_nm,
            self.wavelength_866_nm,
            self.mass_amu,
        )
    }

    pub fn thermal(&self) -> Result<ThermalState> {
        ThermalState::new(self.temperature_mk)
    }

    /// Δ₈₆₆ grid from start/stop/step.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (a, b, h) = (self.grid_start_mhz, self.grid_stop_mhz, self.grid_step_mhz);
        if !(h > 0.0) {
            return Err(Error::Config(format!(
                "grid_step_mhz must be positive, got {h}"
            )));
        }
        if !(b > a) {
            return Err(Error::Config(format!(
                "grid_stop_mhz ({b}) must exceed grid_start_mhz ({a})"
            )));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| a + k as f64 * h).collect())
    }
}

/// A parsed config together with the warnings its loading produced.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

const KNOWN_KEYS: [&str; 38] = [
    "system_kind",
    "gamma_ps_mhz",
    "gamma_pd_mhz",
    "gamma_decay_mhz",
    "branching_fraction",
    "rabi_397_mhz",
    "rabi_866_mhz",
    "detuning_397_mhz",
    "linewidth_397_mhz",
    "linewidth_866_mhz",
    "wavelength_397_nm",
    "wavelength_866_nm",
    "b_field_tesla",
    "alpha_rad",
    "mass_amu",
    "temperature_mk",
    "grid_start_mhz",
    "grid_stop_mhz",
    "grid_step_mhz",
    "quadrature_nodes",
    "photons_per_point",
    "exposure_us",
    "reps",
    "seed",
    "equilibration_detuning_mhz",
    "fit_free",
    "fit_model",
    "mcmc_chains",
    "mcmc_burn_in",
    "mcmc_samples",
    "mcmc_thin",
    "prior_t_min_mk",
    "prior_t_max_mk",
    "prior_rabi_max_mhz",
    "prior_detuning_min_mhz",
    "prior_detuning_max_mhz",
    "prior_b_max_tesla",
    "prior_linewidth_max_mhz",
];

const UNIT_SUFFIXES: [&str; 7] = ["_mhz", "_mk", "_nm", "_tesla", "_rad", "_us", "_amu"];

fn is_numeric(v: &Value) -> bool {
    match v {
        Value::Number(_) => true,
        Value::Array(a) => !a.is_empty() && a.iter().all(|x| x.is_number()),
        _ => false,
    }
}

fn validate_keys(map: &Map<String, Value>) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for (k, v) in map {
        if KNOWN_KEYS.contains(&k.as_str()) {
            if v.is_null() && k != "equilibration_detuning_mhz" {
                return Err(Error::Config(format!(
                    "key {k} is null; omit it to use the default"
                )));
            }
            continue;
        }
        if is_numeric(v) && !UNIT_SUFFIXES.iter().any(|s| k.ends_with(s)) {
            return Err(Error::Config(format!(
                "numeric key {k:?} carries no unit suffix; spell the unit in the \
                 key name as in rabi_397_mhz"
            )));
        }
        warnings.push(format!("unknown config key {k:?} ignored"));
    }
    Ok(warnings)
}

/// Fold `DARKRES_*` environment variables into the raw config map.
/// `DARKRES_RABI_397_MHZ=13.5` overrides key `rabi_397_mhz`; values are
/// parsed as JSON where possible, comma lists for `fit_free`.
pub fn apply_env_overrides<I>(map: &mut Map<String, Value>, vars: I) -> Vec<String>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut notes = Vec::new();
    for (name, raw) in vars {
        let Some(stripped) = name.strip_prefix("DARKRES_") else {
            continue;
        };
        let key = stripped.to_ascii_lowercase();
        let value = match serde_json::from_str::<Value>(&raw) {
            Ok(v) => v,
            Err(_) if key == "fit_free" => Value::Array(
                raw.split(',')
                    .map(|s| Value::String(s.trim().to_string()))
                    .collect(),
            ),
            Err(_) => Value::String(raw.clone()),
        };
        notes.push(format!("config key {key:?} overridden from {name}"));
        map.insert(key, value);
    }
    notes
}

/// Parse config JSON text, folding in the given environment.
pub fn parse_config_with_env(text: &str, vars: Vec<(String, String)>) -> Result<LoadedConfig> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
    let Value::Object(mut map) = root else {
        return Err(Error::Config("config root must be a JSON object".into()));
    };
    let mut warnings = apply_env_overrides(&mut map, vars);
    warnings.extend(validate_keys(&map)?);
    let config: RunConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::Config(format!("bad config value: {e}")))?;
    Ok(LoadedConfig { config, warnings })
}

/// Read a config file, applying `DARKRES_*` environment overrides.
pub fn read_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_with_env(&text, std::env::vars().collect())
}

/// Write a result JSON embedding the resolved config snapshot.
pub fn write_result<T: Serialize>(result: &T, config: &RunConfig, path: &Path) -> Result<()> {
    let doc = serde_json::json!({ "config": config, "result": result });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

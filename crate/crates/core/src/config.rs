//! TOML run configuration.
//!
//! Every table rejects unknown keys. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::LockinSettings;
use crate::model::{
    density_from_temperature, photon_flux_from_power, resonance_field, CalibrationAnchors,
    FieldParams, LinewidthModel, OpmParams, ProbeParams, PumpParams, TransmissionMode,
    TransmissionModel, VaporParams, D1_WAVELENGTH_M,
};
use crate::sim::{FieldScanPlan, SimMode};
use crate::spectral::BudgetFitOptions;
use crate::sweep::{SweepConfig, DEFAULT_DENSITIES};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "OPMLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub pump: PumpSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub linewidth: LinewidthSection,
    #[serde(default)]
    pub transmission: TransmissionSection,
    #[serde(default)]
    pub calibration: CalibrationAnchors,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub lockin: LockinSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// atoms/cm³. Ignored when `temperatures_k` is given.
    pub densities: Vec<f64>,
    pub temperatures_k: Option<Vec<f64>>,
    pub squeezing_db: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            densities: DEFAULT_DENSITIES.to_vec(),
            temperatures_k: None,
            squeezing_db: vec![0.0, -2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub power_w: f64,
    pub wavelength_m: f64,
    pub detuning_hz: f64,
    pub theta_deg: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            power_w: 400e-6,
            wavelength_m: D1_WAVELENGTH_M,
            detuning_hz: 20e9,
            theta_deg: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    pub power_w: f64,
    pub wavelength_m: f64,
    pub modulation_hz: f64,
}

impl Default for PumpSection {
    fn default() -> Self {
        Self {
            power_w: 500e-6,
            wavelength_m: D1_WAVELENGTH_M,
            modulation_hz: 30e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub gyromagnetic_ratio_hz_per_nt: f64,
    /// Defaults to the resonance field of the pump modulation.
    pub bias_field_t: Option<f64>,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            gyromagnetic_ratio_hz_per_nt: 6.998,
            bias_field_t: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinewidthSection {
    pub gamma0_plus_pump: f64,
    pub gamma2: f64,
    pub pump_broadening_coeff: f64,
}

impl Default for LinewidthSection {
    fn default() -> Self {
        let m = LinewidthModel::default();
        Self {
            gamma0_plus_pump: m.gamma0_plus_pump,
            gamma2: m.gamma2,
            pump_broadening_coeff: m.pump_broadening_coeff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransmissionSection {
    pub mode: TransmissionMode,
    pub table: Vec<(f64, f64)>,
}

impl Default for TransmissionSection {
    fn default() -> Self {
        let t = TransmissionModel::default();
        Self {
            mode: t.mode,
            table: t.table,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub mode: SimMode,
    pub cycles: usize,
    pub duration_s: f64,
    /// Defaults to 10 kHz (baseband) or 200 kHz (carrier).
    pub sample_rate_hz: Option<f64>,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            mode: SimMode::Baseband,
            cycles: 50,
            duration_s: 0.5,
            sample_rate_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub start_t: f64,
    pub end_t: f64,
    pub rate_t_per_s: f64,
    pub points: usize,
    pub noise: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        let s = FieldScanPlan::default();
        Self {
            start_t: s.start_t,
            end_t: s.end_t,
            rate_t_per_s: s.rate_t_per_s,
            points: s.points,
            noise: s.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub frequencies_hz: Vec<f64>,
    pub fit_range_hz: (f64, f64),
    pub exclusion_bands_hz: Vec<(f64, f64)>,
    pub bootstrap_resamples: usize,
    /// Density range searched for ζ; defaults to the swept span.
    pub advantage_density_range: Option<(f64, f64)>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![40.0, 500.0, 1000.0],
            fit_range_hz: (4.0, 2000.0),
            exclusion_bands_hz: Vec::new(),
            bootstrap_resamples: 1000,
            advantage_density_range: None,
        }
    }
}

/// Where the effective seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Config,
    Environment,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            seed: 0,
            output_dir: default_output_dir(),
            grid: GridSection::default(),
            probe: ProbeSection::default(),
            pump: PumpSection::default(),
            field: FieldSection::default(),
            linewidth: LinewidthSection::default(),
            transmission: TransmissionSection::default(),
            calibration: CalibrationAnchors::default(),
            acquisition: AcquisitionSection::default(),
            scan: ScanSection::default(),
            analysis: AnalysisSection::default(),
            lockin: LockinSettings::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Config seed unless `OPMLAB_SEED` is set.
    pub fn effective_seed(&self) -> Result<(u64, SeedSource)> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse::<u64>()
                .map(|s| (s, SeedSource::Environment))
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok((self.seed, SeedSource::Config)),
        }
    }

    pub fn linewidth_model(&self, pump_flux: f64) -> LinewidthModel {
        LinewidthModel {
            gamma0_plus_pump: self.linewidth.gamma0_plus_pump,
            gamma2: self.linewidth.gamma2,
            pump_broadening_coeff: self.linewidth.pump_broadening_coeff,
            reference_pump_flux: pump_flux,
        }
    }

    pub fn transmission_model(&self) -> Result<TransmissionModel> {
        let mut t = TransmissionModel::table(self.transmission.table.clone())?;
        t.mode = self.transmission.mode;
        Ok(t)
    }

    /// Operating point at density `n` with the config's optics and calibration.
    pub fn params(&self, n: f64) -> Result<OpmParams> {
        if !(0.0..=180.0).contains(&self.probe.theta_deg) {
            return Err(Error::Config(format!("theta_deg {} outside [0, 180]", self.probe.theta_deg)));
        }
        let probe = ProbeParams {
            photon_flux: photon_flux_from_power(self.probe.power_w, self.probe.wavelength_m),
            squeezing_factor: 1.0,
            detuning_hz: self.probe.detuning_hz,
            theta: self.probe.theta_deg.to_radians(),
        };
        let pump = PumpParams {
            photon_flux: photon_flux_from_power(self.pump.power_w, self.pump.wavelength_m),
            modulation_freq: crate::angular(self.pump.modulation_hz),
        };
        let gamma = self.field.gyromagnetic_ratio_hz_per_nt;
        let field = FieldParams {
            bias_field: self
                .field
                .bias_field_t
                .unwrap_or_else(|| resonance_field(pump.modulation_freq, gamma * 1e9)),
            gyromagnetic_ratio: gamma,
        };
        // The linewidth intercept refers to the configured pump power.
        let linewidth = self.linewidth_model(pump.photon_flux);
        let calibration = self.calibration.solve(&probe, &pump, &linewidth)?;
        let p = OpmParams {
            vapor: VaporParams::at_density(n),
            linewidth,
            probe,
            pump,
            field,
            calibration,
            transmission: self.transmission_model()?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Grid densities, derived from temperatures when those are given.
    pub fn densities(&self) -> Result<Vec<f64>> {
        match &self.grid.temperatures_k {
            Some(ts) => ts
                .iter()
                .map(|&t| density_from_temperature(&VaporParams::at_temperature(t)))
                .collect(),
            None => Ok(self.grid.densities.clone()),
        }
    }

    pub fn sweep_config(&self, seed: u64) -> Result<SweepConfig> {
        let densities = self.densities()?;
        let base = self.params(densities.first().copied().unwrap_or(4.3e12))?;
        let mode = self.acquisition.mode;
        let cfg = SweepConfig {
            base,
            densities,
            squeezing_db: self.grid.squeezing_db.clone(),
            analysis_freqs_hz: self.analysis.frequencies_hz.clone(),
            mode,
            cycles: self.acquisition.cycles,
            duration: self.acquisition.duration_s,
            sample_rate: self.acquisition.sample_rate_hz.unwrap_or(mode.default_sample_rate()),
            lockin: self.lockin,
            scan: FieldScanPlan {
                start_t: self.scan.start_t,
                end_t: self.scan.end_t,
                rate_t_per_s: self.scan.rate_t_per_s,
                points: self.scan.points,
                noise: self.scan.noise,
            },
            fit: BudgetFitOptions {
                freq_range: self.analysis.fit_range_hz,
                exclusions: self.analysis.exclusion_bands_hz.clone(),
                ..BudgetFitOptions::default()
            },
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = Config::parse("version = 1\n").unwrap();
        assert_eq!(cfg, Config::default());
        let p = cfg.params(4.3e12).unwrap();
        let d = OpmParams::calibrated(4.3e12);
        assert_relative_eq!(p.calibration.spn_scale, d.calibration.spn_scale, max_relative = 1e-12);
        assert_eq!(p.probe.cos_theta(), 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::parse("version = 1\nsed = 3\n"), Err(Error::Config(_))));
        assert!(Config::parse("version = 1\n[probe]\npower = 1e-3\n").is_err());
        assert!(Config::parse("version = 1\n[bogus]\n").is_err());
        assert!(Config::parse("version = 2\n").is_err());
    }

    #[test]
    fn temperature_grid() {
        let cfg = Config::parse("version = 1\n[grid]\ntemperatures_k = [368.15]\n").unwrap();
        let n = cfg.densities().unwrap();
        assert!((4.2e12..4.5e12).contains(&n[0]));
        let bad = Config::parse("version = 1\n[grid]\ntemperatures_k = [300.0]\n").unwrap();
        assert!(bad.densities().is_err());
    }

    #[test]
    fn sweep_config_round_trip() {
        let text = r#"
version = 1
seed = 42
[grid]
densities = [2e12, 4e12, 6e12, 8e12]
squeezing_db = [0.0, -2.0]
[probe]
theta_deg = 0.0
[acquisition]
mode = "carrier"
cycles = 10
[analysis]
exclusion_bands_hz = [[49.0, 51.0]]
[transmission]
mode = "table"
"#;
        let cfg = Config::parse(text).unwrap();
        let sc = cfg.sweep_config(42).unwrap();
        assert_eq!(sc.sample_rate, 200e3);
        assert_eq!(sc.cycles, 10);
        assert_eq!(sc.fit.exclusions, vec![(49.0, 51.0)]);
        assert_eq!(sc.base.probe.theta, 0.0);
        assert_eq!(sc.base.transmission.mode, TransmissionMode::Table);
        let back = toml::to_string(&cfg).unwrap();
        assert_eq!(Config::parse(&back).unwrap(), cfg);
    }
}

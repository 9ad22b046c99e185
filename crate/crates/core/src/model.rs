//! Deterministic physical parameter models.
//!
//! Everything in here is a pure function of its inputs. Rates (linewidths,
//! detunings) share the γ·B scale: a field offset δB corresponds to the rate
//! `γ·δB` with γ in Hz/T, and that number is used directly as s⁻¹ in the spin
//! dynamics and in `L(ω)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Density unit used by the linewidth and calibration coefficients.
pub const DENSITY_UNIT: f64 = 1e12;

/// Lower temperature bound of the vapor-pressure formula.
pub const VAPOR_FORMULA_MIN_T: f64 = 312.5;

const PLANCK: f64 = 6.626_070_15e-34;
const LIGHT_SPEED: f64 = 299_792_458.0;
/// Rb D1 wavelength.
pub const D1_WAVELENGTH_M: f64 = 794.979e-9;

/// Converts a squeezing level in dB (negative = squeezed) to the variance ratio ξ².
pub fn xi2_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a variance ratio ξ² to dB.
pub fn xi2_to_db(xi2: f64) -> f64 {
    10.0 * xi2.log10()
}

/// Photon flux (photons/s) of a beam of the given power and wavelength.
pub fn photon_flux_from_power(power_w: f64, wavelength_m: f64) -> f64 {
    power_w * wavelength_m / (PLANCK * LIGHT_SPEED)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaporParams {
    /// Cell temperature in kelvin, if the density is to be derived from it.
    pub temperature: Option<f64>,
    /// Explicit number density in atoms/cm³. Takes precedence over `temperature`.
    pub density: Option<f64>,
    pub vapor_coeff_a: f64,
    /// Kelvin.
    pub vapor_coeff_b: f64,
}

impl Default for VaporParams {
    fn default() -> Self {
        Self {
            temperature: None,
            density: None,
            vapor_coeff_a: 4.312,
            vapor_coeff_b: 4040.0,
        }
    }
}

impl VaporParams {
    pub fn at_density(density: f64) -> Self {
        Self {
            density: Some(density),
            ..Self::default()
        }
    }

    pub fn at_temperature(temperature: f64) -> Self {
        Self {
            temperature: Some(temperature),
            ..Self::default()
        }
    }

    /// The explicit density, or the one derived from the temperature.
    pub fn number_density(&self) -> Result<f64> {
        match (self.density, self.temperature) {
            (Some(n), _) if n > 0.0 && n.is_finite() => Ok(n),
            (Some(n), _) => Err(domain("density", n, "must be positive and finite")),
            (None, Some(_)) => density_from_temperature(self),
            (None, None) => Err(Error::Config(
                "vapor needs either a density or a temperature".into(),
            )),
        }
    }
}

/// Number density (atoms/cm³) from `log10(T·n) = 21.866 + A − B/T`.
pub fn density_from_temperature(vapor: &VaporParams) -> Result<f64> {
    let t = vapor
        .temperature
        .ok_or_else(|| Error::Config("temperature not set".into()))?;
    if !(t > VAPOR_FORMULA_MIN_T) || !t.is_finite() {
        return Err(domain(
            "temperature",
            t,
            "vapor-pressure formula is only valid above 312.5 K",
        ));
    }
    let log_tn = 21.866 + vapor.vapor_coeff_a - vapor.vapor_coeff_b / t;
    Ok(10f64.powf(log_tn) / t)
}

/// Magnetic-resonance HWHM as an affine function of density.
///
/// `Δω = (Γ + P̄) + k·(Φ_pump − Φ_ref) + Γ₂·n/10¹²`. With the default `k = 0`
/// the pump broadening stays folded into the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinewidthModel {
    /// Γ + P̄ at the reference pump flux (s⁻¹ on the γ·B scale).
    pub gamma0_plus_pump: f64,
    /// Collisional broadening per 10¹² atoms/cm³.
    pub gamma2: f64,
    /// Extra broadening per photon/s of pump flux away from `reference_pump_flux`.
    pub pump_broadening_coeff: f64,
    pub reference_pump_flux: f64,
}

impl Default for LinewidthModel {
    fn default() -> Self {
        Self {
            gamma0_plus_pump: 137.0,
            gamma2: 23.6,
            pump_broadening_coeff: 0.0,
            reference_pump_flux: 0.0,
        }
    }
}

impl LinewidthModel {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("gamma0_plus_pump", self.gamma0_plus_pump),
            ("gamma2", self.gamma2),
            ("pump_broadening_coeff", self.pump_broadening_coeff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(domain(what, v, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Linewidth at a given density and pump flux.
    pub fn at(&self, n: f64, pump_flux: f64) -> Result<f64> {
        if !(n >= 0.0) {
            return Err(domain("density", n, "must be non-negative"));
        }
        let pump = self.pump_broadening_coeff * (pump_flux - self.reference_pump_flux);
        let dw = self.gamma0_plus_pump + pump + self.gamma2 * (n / DENSITY_UNIT);
        if !(dw > 0.0) {
            return Err(domain("linewidth", dw, "must be positive"));
        }
        Ok(dw)
    }

    /// Density that minimizes `Δω³/n`, i.e. `(Γ+P̄)/(2Γ₂)`.
    pub fn spn_optimal_density(&self) -> f64 {
        self.gamma0_plus_pump / (2.0 * self.gamma2) * DENSITY_UNIT
    }
}

/// Linewidth at the reference pump flux.
pub fn linewidth(n: f64, m: &LinewidthModel) -> Result<f64> {
    m.at(n, m.reference_pump_flux)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// Photons/s.
    pub photon_flux: f64,
    /// Input variance ratio ξ² of the detected Stokes component.
    pub squeezing_factor: f64,
    /// Informational; the coupling constants are calibrated at this detuning.
    pub detuning_hz: f64,
    /// Angle between probe direction and bias field, radians.
    pub theta: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            photon_flux: photon_flux_from_power(400e-6, D1_WAVELENGTH_M),
            squeezing_factor: 1.0,
            detuning_hz: 20e9,
            theta: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl ProbeParams {
    /// `cos θ`, computed so that θ = π/2 gives exactly zero.
    pub fn cos_theta(&self) -> f64 {
        (std::f64::consts::FRAC_PI_2 - self.theta).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.squeezing_factor > 0.0) {
            return Err(domain("squeezing_factor", self.squeezing_factor, "must be > 0"));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) {
            return Err(domain("theta", self.theta, "must lie in [0, π]"));
        }
        if !(self.photon_flux >= 0.0) {
            return Err(domain("probe photon_flux", self.photon_flux, "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    /// Photons/s.
    pub photon_flux: f64,
    /// Modulation frequency Ω in rad/s.
    pub modulation_freq: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        Self {
            photon_flux: photon_flux_from_power(500e-6, D1_WAVELENGTH_M),
            modulation_freq: crate::angular(30e3),
        }
    }
}

impl PumpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.photon_flux >= 0.0) {
            return Err(domain("pump photon_flux", self.photon_flux, "must be >= 0"));
        }
        if !(self.modulation_freq > 0.0) {
            return Err(domain("modulation_freq", self.modulation_freq, "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Bias field B₀ in tesla.
    pub bias_field: f64,
    /// Gyromagnetic ratio γ in Hz/nT.
    pub gyromagnetic_ratio: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        let gyromagnetic_ratio = 6.998;
        Self {
            bias_field: resonance_field(crate::angular(30e3), gyromagnetic_ratio * 1e9),
            gyromagnetic_ratio,
        }
    }
}

impl FieldParams {
    /// γ in Hz/T.
    pub fn gamma(&self) -> f64 {
        self.gyromagnetic_ratio * 1e9
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gyromagnetic_ratio > 0.0) {
            return Err(domain("gyromagnetic_ratio", self.gyromagnetic_ratio, "must be > 0"));
        }
        Ok(())
    }
}

/// Resonance field B₀ = (Ω/2π)/γ for a modulation Ω (rad/s) and γ in Hz/T.
pub fn resonance_field(modulation_freq: f64, gamma_hz_per_t: f64) -> f64 {
    modulation_freq / (2.0 * std::f64::consts::PI) / gamma_hz_per_t
}

/// Detuning `γ·(B − B₀)` of a field from the pump resonance, on the linewidth scale.
pub fn detuning_rate(b: f64, field: &FieldParams, pump: &PumpParams) -> f64 {
    field.gamma() * (b - resonance_field(pump.modulation_freq, field.gamma()))
}

/// Aggregated light-atom coupling and detector normalizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    /// K in `A = K·n·Φ_pr·Φ_pump/Δω`.
    pub amplitude_gain: f64,
    /// `s_spn = spn_scale·Φ_pr²·n/Δω`.
    pub spn_scale: f64,
    /// `s_psn = psn_scale·ξ²_out·Φ_pr`.
    pub psn_scale: f64,
    /// `s_mba = mba_scale·cos²θ·(Φ_pr³/ξ²_out)·n²·Φ_pump²/Δω⁴`.
    pub mba_scale: f64,
}

impl CalibrationConstants {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("amplitude_gain", self.amplitude_gain),
            ("spn_scale", self.spn_scale),
            ("psn_scale", self.psn_scale),
            ("mba_scale", self.mba_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(domain(what, v, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Observable quantities that pin down [`CalibrationConstants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationAnchors {
    /// S_SPN (V²/Hz) at `spn_density`.
    pub spn_v2hz: f64,
    pub spn_density: f64,
    /// Coherent-state S_PSN (V²/Hz) at the anchor probe flux.
    pub psn_coherent_v2hz: f64,
    /// Signal amplitude (V) at `amplitude_density`.
    pub amplitude_v: f64,
    pub amplitude_density: f64,
    /// s_mba/s_spn for θ = 0 and ξ² = 1 at `mba_density`.
    pub mba_to_spn: f64,
    pub mba_density: f64,
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        Self {
            spn_v2hz: 1.6e-13,
            spn_density: 0.5e12,
            psn_coherent_v2hz: 9.52e-14,
            amplitude_v: 0.2,
            amplitude_density: 4.3e12,
            mba_to_spn: 1.0,
            mba_density: 4.3e12,
        }
    }
}

impl CalibrationAnchors {
    /// Solves for the calibration constants at the given probe, pump and linewidth model.
    pub fn solve(
        &self,
        probe: &ProbeParams,
        pump: &PumpParams,
        lw: &LinewidthModel,
    ) -> Result<CalibrationConstants> {
        let pr = probe.photon_flux;
        let pp = pump.photon_flux;
        if !(pr > 0.0) || !(pp > 0.0) {
            return Err(Error::Config(
                "calibration anchors need non-zero probe and pump fluxes".into(),
            ));
        }
        let dw_spn = lw.at(self.spn_density, pp)?;
        let dw_amp = lw.at(self.amplitude_density, pp)?;
        let dw_mba = lw.at(self.mba_density, pp)?;

        let spn_scale = self.spn_v2hz * dw_spn / (pr * pr * self.spn_density);
        let psn_scale = self.psn_coherent_v2hz / pr;
        let amplitude_gain = self.amplitude_v * dw_amp / (self.amplitude_density * pr * pp);
        let spn_at_mba = spn_scale * pr * pr * self.mba_density / dw_mba;
        let mba_scale = self.mba_to_spn * spn_at_mba * dw_mba.powi(4)
            / (pr.powi(3) * self.mba_density.powi(2) * pp * pp);
        let cal = CalibrationConstants {
            amplitude_gain,
            spn_scale,
            psn_scale,
            mba_scale,
        };
        cal.validate()?;
        Ok(cal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmissionMode {
    Table,
    BeerLambert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionModel {
    pub mode: TransmissionMode,
    /// (density, transmission) pairs, strictly increasing in density.
    pub table: Vec<(f64, f64)>,
    /// κ in `T = exp(−κ·n)`, cm³/atom.
    pub absorption_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub value: f64,
    /// Set when table mode was queried outside its density hull.
    pub extrapolated: bool,
}

impl Default for TransmissionModel {
    fn default() -> Self {
        Self::beer_lambert_from_table(vec![(0.0, 1.0), (2.18e12, 0.958), (1.13e13, 0.847)])
            .expect("default transmission table is valid")
    }
}

impl TransmissionModel {
    /// Table-mode model with a Beer–Lambert coefficient fitted alongside.
    pub fn table(table: Vec<(f64, f64)>) -> Result<Self> {
        let absorption_coeff = fit_absorption_coeff(&table)?;
        let m = Self {
            mode: TransmissionMode::Table,
            table,
            absorption_coeff,
        };
        m.validate()?;
        Ok(m)
    }

    /// Beer–Lambert model `exp(−κn)` with κ from a least-squares fit of
    /// `−ln T = κ·n` through the origin over the table.
    pub fn beer_lambert_from_table(table: Vec<(f64, f64)>) -> Result<Self> {
        let mut m = Self::table(table)?;
        m.mode = TransmissionMode::BeerLambert;
        Ok(m)
    }

    /// Lossless probe.
    pub fn lossless() -> Self {
        Self {
            mode: TransmissionMode::BeerLambert,
            table: vec![(0.0, 1.0)],
            absorption_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.table.is_empty() {
            return Err(Error::Config("transmission table is empty".into()));
        }
        for &(n, t) in &self.table {
            if !(n >= 0.0) {
                return Err(domain("transmission table density", n, "must be >= 0"));
            }
            if !(t > 0.0 && t <= 1.0) {
                return Err(domain("transmission", t, "must lie in (0, 1]"));
            }
        }
        for w in self.table.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(
                    "transmission table densities must be strictly increasing".into(),
                ));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::Config(
                    "transmission must be non-increasing in density".into(),
                ));
            }
        }
        if !(self.absorption_coeff >= 0.0) {
            return Err(domain("absorption_coeff", self.absorption_coeff, "must be >= 0"));
        }
        Ok(())
    }
}

fn fit_absorption_coeff(table: &[(f64, f64)]) -> Result<f64> {
    let (num, den) = table.iter().fold((0.0, 0.0), |(num, den), &(n, t)| {
        (num + n * -t.ln(), den + n * n)
    });
    if den == 0.0 {
        return Err(Error::InsufficientData(
            "transmission table needs a point at non-zero density".into(),
        ));
    }
    Ok(num / den)
}

/// Probe transmission through the vapor at density `n`.
pub fn transmission(n: f64, t: &TransmissionModel) -> Result<Transmission> {
    if !(n >= 0.0) {
        return Err(domain("density", n, "must be non-negative"));
    }
    match t.mode {
        TransmissionMode::BeerLambert => Ok(Transmission {
            value: (-t.absorption_coeff * n).exp(),
            extrapolated: false,
        }),
        TransmissionMode::Table => {
            let first = t.table[0];
            let last = t.table[t.table.len() - 1];
            if n < first.0 {
                return Ok(Transmission {
                    value: first.1,
                    extrapolated: true,
                });
            }
            if n > last.0 {
                return Ok(Transmission {
                    value: last.1,
                    extrapolated: true,
                });
            }
            let i = t.table.partition_point(|&(d, _)| d <= n).max(1).min(t.table.len() - 1);
            let (n0, t0) = t.table[i - 1];
            let (n1, t1) = t.table[i];
            let value = if n1 == n0 {
                t0
            } else {
                t0 + (t1 - t0) * (n - n0) / (n1 - n0)
            };
            Ok(Transmission {
                value,
                extrapolated: false,
            })
        }
    }
}

/// Variance ratio after a beamsplitter loss with transmission `eta`.
pub fn squeezing_after_loss(xi2_in: f64, eta: f64) -> Result<f64> {
    if !(xi2_in > 0.0) {
        return Err(domain("xi2_in", xi2_in, "must be > 0"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(domain("eta", eta, "must lie in [0, 1]"));
    }
    // Written as 1 + η(ξ² − 1) so that ξ² = 1 maps to exactly 1.
    Ok(1.0 + eta * (xi2_in - 1.0))
}

/// Signal amplitude `A = K·n·Φ_pr·Φ_pump/Δω(n)` in volts.
pub fn signal_amplitude(
    n: f64,
    pump: &PumpParams,
    probe: &ProbeParams,
    cal: &CalibrationConstants,
    m: &LinewidthModel,
) -> Result<f64> {
    if !(probe.photon_flux >= 0.0) || !(pump.photon_flux >= 0.0) {
        return Err(domain("photon flux", probe.photon_flux.min(pump.photon_flux), "must be >= 0"));
    }
    let dw = m.at(n, pump.photon_flux)?;
    Ok(cal.amplitude_gain * n * probe.photon_flux * pump.photon_flux / dw)
}

/// Magnetic responsivity of the dispersive quadrature at resonance, V/T.
///
/// For `u + iv = A·Δω/(Δω − iγδB)` the slope is `dv/dB = γ·A/Δω`.
pub fn scan_slope(a: f64, dw: f64, field: &FieldParams) -> Result<f64> {
    if !(dw > 0.0) {
        return Err(domain("linewidth", dw, "must be > 0"));
    }
    Ok(field.gamma() * a / dw)
}

/// Full physical operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpmParams {
    pub vapor: VaporParams,
    pub linewidth: LinewidthModel,
    pub probe: ProbeParams,
    pub pump: PumpParams,
    pub field: FieldParams,
    pub calibration: CalibrationConstants,
    pub transmission: TransmissionModel,
}

impl OpmParams {
    /// Operating point with every constant taken from the default anchors:
    /// 400 µW probe, 500 µW pump, 30 kHz modulation, back-action evading geometry.
    pub fn calibrated(density: f64) -> Self {
        let probe = ProbeParams::default();
        let pump = PumpParams::default();
        let linewidth = LinewidthModel {
            reference_pump_flux: pump.photon_flux,
            ..LinewidthModel::default()
        };
        let calibration = CalibrationAnchors::default()
            .solve(&probe, &pump, &linewidth)
            .expect("default anchors are consistent");
        Self {
            vapor: VaporParams::at_density(density),
            linewidth,
            probe,
            pump,
            field: FieldParams::default(),
            calibration,
            transmission: TransmissionModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vapor.number_density()?;
        self.linewidth.validate()?;
        self.probe.validate()?;
        self.pump.validate()?;
        self.field.validate()?;
        self.calibration.validate()?;
        self.transmission.validate()
    }

    pub fn density(&self) -> Result<f64> {
        self.vapor.number_density()
    }

    pub fn with_density(mut self, n: f64) -> Self {
        self.vapor.density = Some(n);
        self
    }

    pub fn with_squeezing(mut self, xi2: f64) -> Self {
        self.probe.squeezing_factor = xi2;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.probe.theta = theta;
        self
    }

    /// The same cell without optical pumping (spin-noise spectroscopy condition).
    pub fn unpumped(mut self) -> Self {
        self.pump.photon_flux = 0.0;
        self
    }

    /// Linewidth at the operating density and pump flux.
    pub fn linewidth_rate(&self) -> Result<f64> {
        self.linewidth.at(self.density()?, self.pump.photon_flux)
    }

    pub fn transmission(&self) -> Result<Transmission> {
        transmission(self.density()?, &self.transmission)
    }

    /// Squeezing after absorption in the cell.
    pub fn xi2_out(&self) -> Result<f64> {
        squeezing_after_loss(self.probe.squeezing_factor, self.transmission()?.value)
    }

    pub fn amplitude(&self) -> Result<f64> {
        signal_amplitude(
            self.density()?,
            &self.pump,
            &self.probe,
            &self.calibration,
            &self.linewidth,
        )
    }

    pub fn slope(&self) -> Result<f64> {
        scan_slope(self.amplitude()?, self.linewidth_rate()?, &self.field)
    }

    /// Field at which the pump modulation is resonant.
    pub fn resonance_field(&self) -> f64 {
        resonance_field(self.pump.modulation_freq, self.field.gamma())
    }

    /// Detuning of the bias field from resonance, on the linewidth scale.
    pub fn detuning(&self) -> f64 {
        detuning_rate(self.field.bias_field, &self.field, &self.pump)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vapor_density_at_95c() {
        let n = density_from_temperature(&VaporParams::at_temperature(368.15)).unwrap();
        assert!((4.2e12..4.5e12).contains(&n), "n = {n:e}");
    }

    #[test]
    fn vapor_density_derived_examples() {
        // Direct evaluations of log10(T n) = 21.866 + 4.312 − 4040/T.
        let n = density_from_temperature(&VaporParams::at_temperature(383.15)).unwrap();
        assert_relative_eq!(n, 1.1230e13, max_relative = 2e-3);
        let n = density_from_temperature(&VaporParams::at_temperature(312.6)).unwrap();
        assert_relative_eq!(n, 5.745e10, max_relative = 2e-3);
    }

    #[test]
    fn vapor_formula_domain() {
        assert!(matches!(
            density_from_temperature(&VaporParams::at_temperature(312.5)),
            Err(Error::Domain { .. })
        ));
        assert!(density_from_temperature(&VaporParams::at_temperature(300.0)).is_err());
    }

    #[test]
    fn explicit_density_wins() {
        let v = VaporParams {
            temperature: Some(368.15),
            density: Some(1e12),
            ..VaporParams::default()
        };
        assert_eq!(v.number_density().unwrap(), 1e12);
        assert!(VaporParams::default().number_density().is_err());
    }

    #[test]
    fn linewidth_examples() {
        let m = LinewidthModel::default();
        assert_eq!(linewidth(0.0, &m).unwrap(), 137.0);
        assert_relative_eq!(linewidth(4.3e12, &m).unwrap(), 238.48, max_relative = 1e-12);
        assert_relative_eq!(linewidth(1.13e13, &m).unwrap(), 403.68, max_relative = 1e-12);
        assert!(linewidth(-1.0, &m).is_err());
    }

    #[test]
    fn pump_broadening_is_linear_in_flux() {
        let m = LinewidthModel {
            pump_broadening_coeff: 1e-14,
            reference_pump_flux: 2e15,
            ..LinewidthModel::default()
        };
        assert_eq!(m.at(0.0, 2e15).unwrap(), 137.0);
        assert_relative_eq!(m.at(0.0, 3e15).unwrap(), 147.0, max_relative = 1e-12);
    }

    #[test]
    fn amplitude_examples() {
        let p = OpmParams::calibrated(4.3e12);
        let a = |n: f64, p: &OpmParams| {
            signal_amplitude(n, &p.pump, &p.probe, &p.calibration, &p.linewidth).unwrap()
        };
        assert_eq!(a(0.0, &p), 0.0);
        assert_relative_eq!(a(4.3e12, &p), 0.2, max_relative = 1e-12);

        let mut doubled = p.clone();
        doubled.probe.photon_flux *= 2.0;
        assert_relative_eq!(a(3e12, &doubled), 2.0 * a(3e12, &p), max_relative = 1e-12);

        // n/Δω(n) → 10¹²/Γ₂ as n → ∞.
        let plateau = p.calibration.amplitude_gain * p.probe.photon_flux * p.pump.photon_flux
            * DENSITY_UNIT
            / p.linewidth.gamma2;
        assert_relative_eq!(a(1e20, &p), plateau, max_relative = 1e-6);
    }

    #[test]
    fn slope_examples() {
        let f = FieldParams::default();
        assert_eq!(scan_slope(0.0, 137.0, &f).unwrap(), 0.0);
        assert_relative_eq!(scan_slope(1.0, 137.0, &f).unwrap(), 6.998e9 / 137.0, max_relative = 1e-12);
        assert!(scan_slope(1.0, 0.0, &f).is_err());
    }

    #[test]
    fn slope_peaks_near_working_density() {
        let p = OpmParams::calibrated(1e12);
        let ns: Vec<f64> = (0..2000).map(|i| 1e11 * 1.003f64.powi(i)).collect();
        let best = ns
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let s = |n: f64| p.clone().with_density(n).slope().unwrap();
                s(a).total_cmp(&s(b))
            })
            .unwrap();
        // n/Δω² is maximal at (Γ+P̄)/Γ₂ = 5.8e12; the experiment runs at 4.3e12.
        assert!((3.5e12..7e12).contains(&best), "argmax {best:e}");
        assert_relative_eq!(best, 137.0 / 23.6 * 1e12, max_relative = 5e-3);
    }

    #[test]
    fn transmission_table_examples() {
        let t = TransmissionModel::table(vec![(0.0, 1.0), (2.18e12, 0.958), (1.13e13, 0.847)]).unwrap();
        assert_eq!(transmission(0.0, &t).unwrap().value, 1.0);
        assert_relative_eq!(transmission(2.18e12, &t).unwrap().value, 0.958);
        assert_relative_eq!(transmission(1.13e13, &t).unwrap().value, 0.847);
        let mid = transmission(6e12, &t).unwrap();
        assert!(mid.value < 0.958 && mid.value > 0.847 && !mid.extrapolated);
        let out = transmission(2e13, &t).unwrap();
        assert!(out.extrapolated);
        assert_eq!(out.value, 0.847);
    }

    #[test]
    fn transmission_beer_lambert_default() {
        let t = TransmissionModel::default();
        assert_eq!(t.mode, TransmissionMode::BeerLambert);
        assert_eq!(transmission(0.0, &t).unwrap().value, 1.0);
        // κ = Σ n(−ln T)/Σ n² over the two endpoints.
        let kappa = (2.18 * -(0.958f64).ln() + 11.3 * -(0.847f64).ln()) / (2.18f64.powi(2) + 11.3f64.powi(2)) * 1e-12;
        assert_relative_eq!(t.absorption_coeff, kappa, max_relative = 1e-12);
        let t_hi = transmission(1.13e13, &t).unwrap().value;
        assert!((t_hi - 0.847).abs() < 0.01);
    }

    #[test]
    fn transmission_rejects_bad_tables() {
        assert!(TransmissionModel::table(vec![(0.0, 1.0), (1e12, 1.1)]).is_err());
        assert!(TransmissionModel::table(vec![(1e12, 0.9), (2e12, 0.95)]).is_err());
        assert!(TransmissionModel::table(vec![(2e12, 0.9), (1e12, 0.8)]).is_err());
    }

    #[test]
    fn squeezing_loss_examples() {
        assert_eq!(squeezing_after_loss(0.631, 1.0).unwrap(), 0.631);
        for eta in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(squeezing_after_loss(1.0, eta).unwrap(), 1.0);
        }
        let out = squeezing_after_loss(0.631, 0.85).unwrap();
        assert_relative_eq!(out, 0.68635, max_relative = 1e-6);
        assert!((xi2_to_db(out) + 1.635).abs() < 0.01);
        assert!(squeezing_after_loss(0.0, 0.5).is_err());
        assert!(squeezing_after_loss(0.5, 1.5).is_err());
    }

    #[test]
    fn calibration_reproduces_anchors() {
        let p = OpmParams::calibrated(0.5e12);
        let spn = p.calibration.spn_scale * p.probe.photon_flux.powi(2) * 0.5e12 / p.linewidth_rate().unwrap();
        assert_relative_eq!(spn, 1.6e-13, max_relative = 1e-12);
        assert_relative_eq!(p.calibration.psn_scale * p.probe.photon_flux, 9.52e-14, max_relative = 1e-12);
    }

    #[test]
    fn cos_theta_exact_at_right_angle() {
        let p = ProbeParams::default();
        assert_eq!(p.cos_theta(), 0.0);
        let p = ProbeParams { theta: 90f64.to_radians(), ..p };
        assert_eq!(p.cos_theta(), 0.0);
        let p = ProbeParams { theta: 0.0, ..p };
        assert_eq!(p.cos_theta(), 1.0);
    }

    #[test]
    fn resonance_field_at_30khz() {
        let f = FieldParams::default();
        assert_relative_eq!(f.bias_field, 30000.0 / 6.998 * 1e-9, max_relative = 1e-12);
        assert!((f.bias_field - 4.287e-6).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn density_increasing_in_temperature(t in 313.0f64..500.0, dt in 0.01f64..50.0) {
                let lo = density_from_temperature(&VaporParams::at_temperature(t)).unwrap();
                let hi = density_from_temperature(&VaporParams::at_temperature(t + dt)).unwrap();
                prop_assert!(hi > lo);
            }

            #[test]
            fn linewidth_affine(n in 0.0f64..1e14, g0 in 0.0f64..500.0, g2 in 0.001f64..100.0) {
                let m = LinewidthModel { gamma0_plus_pump: g0 + 1e-3, gamma2: g2, ..LinewidthModel::default() };
                let l0 = linewidth(0.0, &m).unwrap();
                prop_assert_eq!(l0, m.gamma0_plus_pump);
                let l = linewidth(n, &m).unwrap();
                prop_assert!((l - l0 - g2 * n / DENSITY_UNIT).abs() <= 1e-9 * l);
                prop_assert!(linewidth(n * 1.01 + 1e9, &m).unwrap() > l);
            }

            #[test]
            fn amplitude_per_atom_decreasing(n in 1e10f64..1e14, f in 1.001f64..3.0) {
                let p = OpmParams::calibrated(n);
                let a = |n: f64| signal_amplitude(n, &p.pump, &p.probe, &p.calibration, &p.linewidth).unwrap() / n;
                prop_assert!(a(n * f) < a(n));
            }

            #[test]
            fn loss_keeps_squeezing_between_input_and_one(xi in 0.01f64..0.999, eta in 0.0f64..=1.0) {
                let out = squeezing_after_loss(xi, eta).unwrap();
                prop_assert!(out >= xi - 1e-15 && out <= 1.0 + 1e-15);
            }

            #[test]
            fn transmission_non_increasing(n in 0.0f64..2e13, dn in 0.0f64..1e13) {
                for t in [TransmissionModel::default(), TransmissionModel::table(TransmissionModel::default().table).unwrap()] {
                    let a = transmission(n, &t).unwrap().value;
                    let b = transmission(n + dn, &t).unwrap().value;
                    prop_assert!(b <= a && b > 0.0 && a <= 1.0);
                }
            }
        }
    }

    #[test]
    fn slope_has_unique_interior_max() {
        let p = OpmParams::calibrated(1e12);
        let ns: Vec<f64> = (0..400).map(|i| 1e11 * (1e3f64).powf(i as f64 / 399.0)).collect();
        let s: Vec<f64> = ns.iter().map(|&n| p.clone().with_density(n).slope().unwrap()).collect();
        let peaks = (1..s.len() - 1).filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1]).count();
        assert_eq!(peaks, 1);
        let imax = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(imax > 0 && imax < s.len() - 1);
    }
}

//! Stochastic polarimeter traces.
//!
//! The spin noise in each quadrature is an Ornstein–Uhlenbeck process of
//! decay rate Δω; photon shot noise is white detector noise added after the
//! dynamics. Each cycle draws from its own ChaCha stream so cycles can be
//! generated in parallel and still come out bit-identical.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{noise_components, optical_psd, NoiseBudget};
use crate::error::{domain, Error, Result};
use crate::lockin::{demodulate, LockinSettings, ScanResult};
use crate::model::OpmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    RawCarrier,
    QuadratureU,
    QuadratureV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub channel: Channel,
    pub seed: u64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64, channel: Channel, seed: u64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(domain("sample_rate", sample_rate, "must be > 0"));
        }
        if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(domain("sample", *bad, "must be finite"));
        }
        Ok(Self {
            samples,
            sample_rate,
            channel,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Baseband,
    Carrier,
}

impl SimMode {
    pub fn default_sample_rate(self) -> f64 {
        match self {
            SimMode::Baseband => 10e3,
            SimMode::Carrier => 200e3,
        }
    }
}

/// Sinusoidal field perturbation `δB·sin(2π f t)` added to the bias field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestTone {
    pub frequency_hz: f64,
    pub amplitude_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldScanPlan {
    pub start_t: f64,
    pub end_t: f64,
    /// |dB/dt| in T/s.
    pub rate_t_per_s: f64,
    pub points: usize,
    /// Add the white detector-noise equivalent of the optical PSD to each point.
    pub noise: bool,
}

impl Default for FieldScanPlan {
    fn default() -> Self {
        Self {
            start_t: 4.2e-6,
            end_t: 4.45e-6,
            rate_t_per_s: 2e-8,
            points: 501,
            noise: true,
        }
    }
}

impl FieldScanPlan {
    pub fn duration(&self) -> f64 {
        (self.end_t - self.start_t).abs() / self.rate_t_per_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub params: OpmParams,
    /// Seconds per cycle.
    pub duration: f64,
    pub cycles: usize,
    pub sample_rate: f64,
    pub mode: SimMode,
    pub test_tone: Option<TestTone>,
    pub field_scan: Option<FieldScanPlan>,
    pub lockin: LockinSettings,
    pub seed: u64,
}

impl SimPlan {
    pub fn new(params: OpmParams, mode: SimMode, seed: u64) -> Self {
        Self {
            params,
            duration: 0.5,
            cycles: 50,
            sample_rate: mode.default_sample_rate(),
            mode,
            test_tone: None,
            field_scan: None,
            lockin: LockinSettings::default(),
            seed,
        }
    }

    pub fn samples_per_cycle(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.sample_rate > 0.0) {
            return Err(domain("sample_rate", self.sample_rate, "must be > 0"));
        }
        if self.samples_per_cycle() < 16 {
            return Err(Error::InsufficientData(format!(
                "{} samples per cycle; need at least 16",
                self.samples_per_cycle()
            )));
        }
        if self.cycles == 0 {
            return Err(Error::InsufficientData("zero cycles".into()));
        }
        if let Some(t) = self.test_tone {
            if !(t.frequency_hz >= 0.0 && t.frequency_hz < self.sample_rate / 2.0) {
                return Err(Error::Nyquist(format!(
                    "test tone at {} Hz with sample rate {} Hz",
                    t.frequency_hz, self.sample_rate
                )));
            }
        }
        if self.mode == SimMode::Carrier {
            let carrier_hz = self.params.pump.modulation_freq / (2.0 * PI);
            if self.sample_rate < 4.0 * carrier_hz {
                return Err(Error::Nyquist(format!(
                    "carrier at {carrier_hz} Hz needs at least {} Hz sampling, got {}",
                    4.0 * carrier_hz,
                    self.sample_rate
                )));
            }
        }
        Ok(())
    }

    fn require_mode(&self, mode: SimMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Config(format!(
                "plan is in {:?} mode, operation needs {:?}",
                self.mode, mode
            )));
        }
        Ok(())
    }
}

/// Stationary OU process with exact discretization.
struct OrnsteinUhlenbeck {
    decay: f64,
    innovation_sd: f64,
    state: f64,
}

impl OrnsteinUhlenbeck {
    /// `spin_noise` is the single-sided low-frequency density, so that the
    /// spectrum is `spin_noise·L(ω)` and the variance `spin_noise·Δω/4`.
    fn new(spin_noise: f64, dw: f64, dt: f64, rng: &mut ChaCha8Rng) -> Self {
        let variance = spin_noise * dw / 4.0;
        let decay = (-dw * dt).exp();
        let sd = variance.sqrt();
        let start: f64 = StandardNormal.sample(rng);
        Self {
            decay,
            innovation_sd: (variance * (1.0 - decay * decay)).sqrt(),
            state: sd * start,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let out = self.state;
        let e: f64 = StandardNormal.sample(rng);
        self.state = self.decay * self.state + self.innovation_sd * e;
        out
    }
}

/// Everything a cycle generator needs, computed once per plan.
struct CycleModel {
    budget: NoiseBudget,
    slope: f64,
    u_mean: f64,
    v_mean: f64,
    tone: Option<TestTone>,
    n: usize,
    fs: f64,
    carrier: f64,
    seed: u64,
}

impl CycleModel {
    fn new(plan: &SimPlan) -> Result<Self> {
        plan.validate()?;
        let budget = noise_components(&plan.params)?;
        let dw = budget.linewidth;
        let a = plan.params.amplitude()?;
        let slope = plan.params.slope()?;
        let delta = plan.params.detuning();
        let denom = dw * dw + delta * delta;
        Ok(Self {
            budget,
            slope,
            u_mean: a * dw * dw / denom,
            v_mean: a * dw * delta / denom,
            tone: plan.test_tone,
            n: plan.samples_per_cycle(),
            fs: plan.sample_rate,
            carrier: plan.params.pump.modulation_freq,
            seed: plan.seed,
        })
    }

    fn rng(&self, cycle: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(cycle as u64);
        rng
    }

    /// Steady-state response of v to the test tone at time t.
    fn tone_response(&self, t: f64) -> f64 {
        match self.tone {
            None => 0.0,
            Some(tone) => {
                let w = crate::angular(tone.frequency_hz);
                let dw = self.budget.linewidth;
                let gain = self.slope * dw / (dw * dw + w * w).sqrt();
                let phase = -(w / dw).atan();
                gain * tone.amplitude_t * (w * t + phase).sin()
            }
        }
    }

    fn baseband(&self, cycle: usize) -> Vec<f64> {
        let mut rng = self.rng(cycle);
        let dt = 1.0 / self.fs;
        let mut spin = OrnsteinUhlenbeck::new(self.budget.spin_noise(), self.budget.linewidth, dt, &mut rng);
        let psn_sd = (self.budget.s_psn * self.fs / 2.0).sqrt();
        (0..self.n)
            .map(|k| {
                let t = k as f64 * dt;
                let e: f64 = StandardNormal.sample(&mut rng);
                self.v_mean + spin.step(&mut rng) + psn_sd * e + self.tone_response(t)
            })
            .collect()
    }

    fn carrier(&self, cycle: usize) -> Vec<f64> {
        let mut rng = self.rng(cycle);
        let dt = 1.0 / self.fs;
        let (s, dw) = (self.budget.spin_noise(), self.budget.linewidth);
        let mut spin_u = OrnsteinUhlenbeck::new(s, dw, dt, &mut rng);
        let mut spin_v = OrnsteinUhlenbeck::new(s, dw, dt, &mut rng);
        // Mixing with 2·cos/2·sin doubles the white density, so inject half of it.
        let psn_sd = (self.budget.s_psn / 2.0 * self.fs / 2.0).sqrt();
        (0..self.n)
            .map(|k| {
                let t = k as f64 * dt;
                let u = self.u_mean + spin_u.step(&mut rng);
                let v = self.v_mean + spin_v.step(&mut rng) + self.tone_response(t);
                let e: f64 = StandardNormal.sample(&mut rng);
                let (sin, cos) = (self.carrier * t).sin_cos();
                u * cos + v * sin + psn_sd * e
            })
            .collect()
    }
}

/// The first cycle of the baseband v quadrature.
pub fn simulate_quadrature_trace(plan: &SimPlan) -> Result<TimeSeries> {
    let mut one = plan.clone();
    one.cycles = 1;
    Ok(simulate_quadrature_cycles(&one)?.remove(0))
}

/// All cycles of the baseband v quadrature.
pub fn simulate_quadrature_cycles(plan: &SimPlan) -> Result<Vec<TimeSeries>> {
    plan.require_mode(SimMode::Baseband)?;
    let model = CycleModel::new(plan)?;
    (0..plan.cycles)
        .into_par_iter()
        .map(|c| TimeSeries::new(model.baseband(c), model.fs, Channel::QuadratureV, plan.seed))
        .collect()
}

/// The first cycle of the raw carrier signal.
pub fn simulate_carrier_trace(plan: &SimPlan) -> Result<TimeSeries> {
    let mut one = plan.clone();
    one.cycles = 1;
    Ok(simulate_carrier_cycles(&one)?.remove(0))
}

pub fn simulate_carrier_cycles(plan: &SimPlan) -> Result<Vec<TimeSeries>> {
    plan.require_mode(SimMode::Carrier)?;
    let model = CycleModel::new(plan)?;
    (0..plan.cycles)
        .into_par_iter()
        .map(|c| TimeSeries::new(model.carrier(c), model.fs, Channel::RawCarrier, plan.seed))
        .collect()
}

/// v-quadrature cycles in either mode; carrier traces go through the lock-in.
pub fn simulate_v_cycles(plan: &SimPlan) -> Result<Vec<TimeSeries>> {
    match plan.mode {
        SimMode::Baseband => simulate_quadrature_cycles(plan),
        SimMode::Carrier => {
            let raw = simulate_carrier_cycles(plan)?;
            let w = plan.params.pump.modulation_freq;
            raw.par_iter()
                .map(|r| demodulate(r, w, plan.lockin.cutoff_hz, plan.lockin.order).map(|(_, v)| v))
                .collect()
        }
    }
}

/// Adiabaticity threshold on `γ·(dB/dt)/Δω²`.
pub const ADIABATIC_LIMIT: f64 = 0.01;

/// Slow field sweep through resonance, integrating the demodulated response exactly.
pub fn simulate_field_scan(plan: &SimPlan) -> Result<ScanResult> {
    let scan = plan
        .field_scan
        .ok_or_else(|| Error::Config("plan has no field scan".into()))?;
    plan.params.validate()?;
    if scan.points < 2 {
        return Err(Error::InsufficientData("field scan needs at least 2 points".into()));
    }
    if !(scan.rate_t_per_s > 0.0) || scan.start_t == scan.end_t {
        return Err(domain("scan rate", scan.rate_t_per_s, "need a positive rate and a non-empty range"));
    }
    let p = &plan.params;
    let dw = p.linewidth_rate()?;
    let a = p.amplitude()?;
    let gamma = p.field.gamma();
    let b0 = p.resonance_field();
    let non_adiabatic = gamma * scan.rate_t_per_s / (dw * dw) > ADIABATIC_LIMIT;

    let total = scan.duration();
    let dt_point = total / (scan.points - 1) as f64;
    let substeps = ((dt_point * dw / 0.1).ceil() as usize).max(1);
    let h = dt_point / substeps as f64;
    let field_at = |t: f64| scan.start_t + (scan.end_t - scan.start_t) * t / total;

    // z = u + iv obeys z' = −(Δω − iδ)z + Δω·A with δ = γ(B − B₀).
    let steady = |delta: f64| {
        let d = dw * dw + delta * delta;
        (a * dw * dw / d, a * dw * delta / d)
    };
    let (mut u, mut v) = steady(gamma * (scan.start_t - b0));
    let decay = (-dw * h).exp();

    let noise_sd = if scan.noise {
        (optical_psd(0.0, &noise_components(p)?) / (2.0 * dt_point)).sqrt()
    } else {
        0.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(u64::MAX);

    let mut field = Vec::with_capacity(scan.points);
    let mut us = Vec::with_capacity(scan.points);
    let mut vs = Vec::with_capacity(scan.points);
    for i in 0..scan.points {
        if i > 0 {
            for s in 0..substeps {
                let t_mid = ((i - 1) * substeps + s) as f64 * h + 0.5 * h;
                let delta = gamma * (field_at(t_mid) - b0);
                let (us_, vs_) = steady(delta);
                let (sin, cos) = (delta * h).sin_cos();
                let (du, dv) = (u - us_, v - vs_);
                u = us_ + decay * (du * cos - dv * sin);
                v = vs_ + decay * (du * sin + dv * cos);
            }
        }
        let (e1, e2): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        field.push(field_at(i as f64 * dt_point));
        us.push(u + noise_sd * e1);
        vs.push(v + noise_sd * e2);
    }
    ScanResult::new(field, us, vs).map(|s| s.with_non_adiabatic(non_adiabatic))
}

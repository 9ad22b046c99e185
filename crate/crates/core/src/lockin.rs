//! Digital lock-in and resonance fitting.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions, Residuals};
use crate::sim::{Channel, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockinSettings {
    /// −3 dB point of the whole low-pass cascade, Hz.
    pub cutoff_hz: f64,
    pub order: u32,
}

impl Default for LockinSettings {
    fn default() -> Self {
        Self {
            cutoff_hz: 2500.0,
            order: 4,
        }
    }
}

/// Cascade of identical single-pole low-pass sections.
#[derive(Debug, Clone)]
struct PoleCascade {
    alpha: f64,
    state: Vec<f64>,
}

impl PoleCascade {
    fn new(cutoff_hz: f64, order: u32, fs: f64) -> Self {
        // Per-section corner that puts the cascade's −3 dB point at cutoff_hz.
        let section = cutoff_hz / (2f64.powf(1.0 / order as f64) - 1.0).sqrt();
        Self {
            alpha: 1.0 - (-2.0 * PI * section / fs).exp(),
            state: vec![0.0; order as usize],
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        let mut y = x;
        for s in &mut self.state {
            *s += self.alpha * (y - *s);
            y = *s;
        }
        y
    }
}

/// Output decimation factor for a given cutoff, aiming at an output rate of 8·cutoff.
pub fn decimation_factor(fs: f64, cutoff_hz: f64) -> usize {
    ((fs / (8.0 * cutoff_hz)).floor() as usize).max(1)
}

/// Mixes `raw` with `2cos(ref·t)` and `2sin(ref·t)`, low-passes and decimates.
pub fn demodulate(
    raw: &TimeSeries,
    ref_freq: f64,
    lp_cutoff: f64,
    lp_order: u32,
) -> Result<(TimeSeries, TimeSeries)> {
    if raw.channel != Channel::RawCarrier {
        return Err(Error::Config("demodulation needs a raw carrier trace".into()));
    }
    let ref_hz = ref_freq / (2.0 * PI);
    if !(lp_cutoff > 0.0) || lp_cutoff >= ref_hz / 2.0 {
        return Err(domain("lp_cutoff", lp_cutoff, "must lie in (0, f_ref/2)"));
    }
    if ref_hz >= raw.sample_rate / 2.0 {
        return Err(Error::Nyquist(format!(
            "reference at {ref_hz} Hz with sample rate {} Hz",
            raw.sample_rate
        )));
    }
    if lp_order == 0 {
        return Err(domain("lp_order", 0.0, "must be >= 1"));
    }
    let fs = raw.sample_rate;
    let step = decimation_factor(fs, lp_cutoff);
    let mut lp_u = PoleCascade::new(lp_cutoff, lp_order, fs);
    let mut lp_v = lp_u.clone();
    let mut u = Vec::with_capacity(raw.len() / step + 1);
    let mut v = Vec::with_capacity(raw.len() / step + 1);
    for (k, &x) in raw.samples.iter().enumerate() {
        let (sin, cos) = (ref_freq * k as f64 / fs).sin_cos();
        let yu = lp_u.push(2.0 * x * cos);
        let yv = lp_v.push(2.0 * x * sin);
        if k % step == 0 {
            u.push(yu);
            v.push(yv);
        }
    }
    let out_fs = fs / step as f64;
    Ok((
        TimeSeries::new(u, out_fs, Channel::QuadratureU, raw.seed)?,
        TimeSeries::new(v, out_fs, Channel::QuadratureV, raw.seed)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub field: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Set when the sweep was too fast for the response to follow.
    #[serde(default)]
    pub non_adiabatic: bool,
}

impl ScanResult {
    pub fn new(field: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if field.len() != u.len() || field.len() != v.len() {
            return Err(Error::Format(format!(
                "scan arrays differ in length: {}, {}, {}",
                field.len(),
                u.len(),
                v.len()
            )));
        }
        let up = field.windows(2).all(|w| w[1] > w[0]);
        let down = field.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Format("scan field axis is not strictly monotone".into()));
        }
        Ok(Self {
            field,
            u,
            v,
            non_adiabatic: false,
        })
    }

    pub fn with_non_adiabatic(mut self, flag: bool) -> Self {
        self.non_adiabatic = flag;
        self
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    pub amplitude: f64,
    pub center: f64,
    pub hwhm_field: f64,
    /// γ·hwhm_field.
    pub hwhm_freq: f64,
    pub offset: f64,
    /// dv/dB at the center = amplitude/hwhm_field.
    pub slope: f64,
    pub residual_rms: f64,
    /// Covariance of (amplitude, center, hwhm_freq).
    pub covariance: [[f64; 3]; 3],
    pub iterations: usize,
}

impl ResonanceFit {
    pub fn amplitude_err(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }
    pub fn center_err(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
    pub fn hwhm_freq_err(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }
}

/// Lorentzian plus offset in scaled units: p = (A, x₀, h, c).
struct LorentzProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
}

impl Residuals for LorentzProblem<'_> {
    fn len(&self) -> usize {
        self.x.len()
    }

    fn eval(&self, p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>) {
        let (a, x0, h, c) = (p[0], p[1], p[2], p[3]);
        let h2 = h * h;
        for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            let d = x - x0;
            let den = d * d + h2;
            let shape = h2 / den;
            r[i] = a * shape + c - y;
            jac[(i, 0)] = shape;
            jac[(i, 1)] = a * 2.0 * d * h2 / (den * den);
            jac[(i, 2)] = a * 2.0 * h * d * d / (den * den);
            jac[(i, 3)] = 1.0;
        }
    }
}

/// Fits `u(B) = A·h²/((B − B₀)² + h²) + c` and derives Δω = γ·h and the slope.
pub fn fit_resonance(scan: &ScanResult, gamma_hz_per_nt: f64) -> Result<ResonanceFit> {
    if !(gamma_hz_per_nt > 0.0) {
        return Err(domain("gyromagnetic_ratio", gamma_hz_per_nt, "must be > 0"));
    }
    if scan.len() < 8 {
        return Err(Error::InsufficientData(format!("{} scan points", scan.len())));
    }
    let gamma = gamma_hz_per_nt * 1e9;
    let (bmin, bmax) = scan
        .field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    let b_mid = 0.5 * (bmin + bmax);
    let b_scale = bmax - bmin;
    let y_scale = scan.u.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if !(y_scale > 0.0) {
        return Err(Error::InsufficientData("scan has no signal".into()));
    }
    let x: Vec<f64> = scan.field.iter().map(|b| (b - b_mid) / b_scale).collect();
    let y: Vec<f64> = scan.u.iter().map(|u| u / y_scale).collect();

    let initial = initial_guess(&x, &y)?;
    let sol = levenberg_marquardt(&LorentzProblem { x: &x, y: &y }, &initial, LmOptions::default())?;
    let (a, x0, h, c) = (sol.params[0], sol.params[1], sol.params[2].abs(), sol.params[3]);

    let dof = (x.len() - 4) as f64;
    let sigma2 = sol.cost / dof;
    let rms = (sol.cost / x.len() as f64).sqrt() * y_scale;

    let amplitude = a * y_scale;
    let center = b_mid + x0 * b_scale;
    let hwhm_field = h * b_scale;
    let hwhm_freq = gamma * hwhm_field;
    let scale = [y_scale, b_scale, gamma * b_scale];
    let mut covariance = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            covariance[i][j] = sol.covariance[(i, j)] * sigma2 * scale[i] * scale[j];
        }
    }
    Ok(ResonanceFit {
        amplitude,
        center,
        hwhm_field,
        hwhm_freq,
        offset: c * y_scale,
        slope: amplitude / hwhm_field,
        residual_rms: rms,
        covariance,
        iterations: sol.iterations,
    })
}

fn initial_guess(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let ipk = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let offset = y[0].min(y[y.len() - 1]);
    let amp = y[ipk] - offset;
    if !(amp > 0.0) {
        return Err(Error::InsufficientData("scan has no resonance peak".into()));
    }
    let half = offset + amp / 2.0;
    let left = (0..ipk).rev().find(|&i| y[i] < half).map(|i| x[i]);
    let right = (ipk + 1..y.len()).find(|&i| y[i] < half).map(|i| x[i]);
    let h = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (Some(l), None) => x[ipk] - l,
        (None, Some(r)) => r - x[ipk],
        (None, None) => 0.25,
    };
    Ok(vec![amp, x[ipk], h.abs().max(1e-6), offset])
}

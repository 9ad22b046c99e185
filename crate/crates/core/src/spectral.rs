//! Hann-window PSD estimation and spectral model fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::budget::lorentzian_response;
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions, Residuals};
use crate::model::DENSITY_UNIT;
use crate::sim::TimeSeries;

/// Single-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Hz.
    pub freq: Vec<f64>,
    /// V²/Hz.
    pub psd: Vec<f64>,
    /// Number of periodograms averaged per bin.
    pub n_averages: usize,
    /// Bin spacing, Hz.
    pub resolution: f64,
}

impl Spectrum {
    pub fn new(freq: Vec<f64>, psd: Vec<f64>, n_averages: usize) -> Result<Self> {
        if freq.len() != psd.len() || freq.len() < 2 {
            return Err(Error::Format("spectrum needs matching freq/psd arrays of length ≥ 2".into()));
        }
        if !freq.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Format("spectrum frequencies must be ascending".into()));
        }
        if psd.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Format("spectrum has a negative or NaN bin".into()));
        }
        let resolution = freq[1] - freq[0];
        Ok(Self {
            freq,
            psd,
            n_averages: n_averages.max(1),
            resolution,
        })
    }

    /// `Σ psd·Δf`.
    pub fn integrated_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdOptions {
    /// Segment length for Welch mode; `None` uses each whole cycle as one segment.
    pub segment_len: Option<usize>,
    /// Fractional overlap of Welch segments, in [0, 1).
    pub overlap: f64,
}

impl Default for PsdOptions {
    fn default() -> Self {
        Self {
            segment_len: None,
            overlap: 0.5,
        }
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    let m = (n - 1) as f64;
    (0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / m).cos())).collect()
}

/// Cycle-averaged Hann periodogram, one segment per cycle.
pub fn psd_hann(cycles: &[TimeSeries]) -> Result<Spectrum> {
    psd_hann_with(cycles, PsdOptions::default())
}

pub fn psd_hann_with(cycles: &[TimeSeries], opts: PsdOptions) -> Result<Spectrum> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::InsufficientData("no cycles".into()))?;
    let (len, fs) = (first.len(), first.sample_rate);
    if cycles.iter().any(|c| c.len() != len || c.sample_rate != fs) {
        return Err(Error::Heterogeneous(
            "cycles differ in length or sample rate".into(),
        ));
    }
    let n = opts.segment_len.unwrap_or(len);
    if n < 16 || n > len {
        return Err(Error::InsufficientData(format!(
            "segment of {n} samples from cycles of {len}"
        )));
    }
    if !(0.0..1.0).contains(&opts.overlap) {
        return Err(crate::error::domain("overlap", opts.overlap, "must lie in [0, 1)"));
    }
    let hop = if n == len {
        len
    } else {
        (((1.0 - opts.overlap) * n as f64).round() as usize).max(1)
    };
    let starts: Vec<usize> = (0..).map(|i| i * hop).take_while(|s| s + n <= len).collect();

    let window = hann(n);
    let norm = window.iter().map(|w| w * w).sum::<f64>() * fs;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;

    let per_cycle: Vec<Vec<f64>> = cycles
        .par_iter()
        .map(|c| {
            let mut acc = vec![0.0; bins];
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for &s in &starts {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(c.samples[s + k] * window[k], 0.0);
                }
                fft.process(&mut buf);
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += buf[k].norm_sqr();
                }
            }
            acc
        })
        .collect();

    let segments = (starts.len() * cycles.len()) as f64;
    let mut psd = vec![0.0; bins];
    for acc in &per_cycle {
        for (p, a) in psd.iter_mut().zip(acc) {
            *p += a;
        }
    }
    for (k, p) in psd.iter_mut().enumerate() {
        let single = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        *p *= single / (norm * segments);
    }
    let freq = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Spectrum::new(freq, psd, segments as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetFitOptions {
    /// Fit s_mba as zero; otherwise `spn_reference` must be given.
    pub mba_fixed_zero: bool,
    /// Starting linewidth (rate), e.g. from a resonance fit.
    pub linewidth_hint: Option<f64>,
    /// Fitted frequency interval, Hz.
    pub freq_range: (f64, f64),
    /// Excluded frequency bands, Hz.
    pub exclusions: Vec<(f64, f64)>,
    /// s_spn measured without back-action (unpumped spectrum).
    pub spn_reference: Option<f64>,
}

impl Default for BudgetFitOptions {
    fn default() -> Self {
        Self {
            mba_fixed_zero: true,
            linewidth_hint: None,
            freq_range: (4.0, 2000.0),
            exclusions: Vec::new(),
            spn_reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetFit {
    pub s_psn: f64,
    pub s_spn: f64,
    pub s_mba: f64,
    /// Fitted knee as a rate (same scale as the resonance linewidth).
    pub linewidth: f64,
    pub s_psn_err: f64,
    pub s_spn_err: f64,
    pub s_mba_err: f64,
    pub linewidth_err: f64,
    pub chi2_per_dof: f64,
    pub bins_used: usize,
    pub linewidth_hint: Option<f64>,
}

/// `m(ω) = s_psn + L(ω)·s_lor`, parameters in logs, residuals `√K(m − y)/w`.
struct KneeProblem<'a> {
    omega: &'a [f64],
    y: &'a [f64],
    /// Fixed weight model of the current reweighting round.
    scale: Vec<f64>,
    sqrt_k: f64,
}

impl KneeProblem<'_> {
    fn model(omega: f64, p: &[f64]) -> (f64, f64, f64, f64) {
        let (psn, lor, dw) = (p[0].exp(), p[1].exp(), p[2].exp());
        let l = lorentzian_response(omega, dw);
        (psn + l * lor, psn, l * lor, lor * 2.0 * l * (1.0 - l))
    }
}

impl Residuals for KneeProblem<'_> {
    fn len(&self) -> usize {
        self.omega.len()
    }

    fn eval(&self, p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>) {
        for i in 0..self.omega.len() {
            let (m, d0, d1, d2) = Self::model(self.omega[i], p);
            let s = self.sqrt_k / self.scale[i];
            r[i] = s * (m - self.y[i]);
            jac[(i, 0)] = s * d0;
            jac[(i, 1)] = s * d1;
            jac[(i, 2)] = s * d2;
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits `s_psn + L(ω)·(s_spn + s_mba)` to an averaged spectrum.
pub fn fit_noise_budget(s: &Spectrum, opts: &BudgetFitOptions) -> Result<BudgetFit> {
    let (f_lo, f_hi) = opts.freq_range;
    let keep = |f: f64| {
        f >= f_lo && f <= f_hi && f > 0.0 && !opts.exclusions.iter().any(|&(a, b)| f >= a && f <= b)
    };
    let (freq, y): (Vec<f64>, Vec<f64>) = s
        .freq
        .iter()
        .zip(&s.psd)
        .filter(|(f, _)| keep(**f))
        .map(|(f, p)| (*f, *p))
        .unzip();
    if freq.len() < 8 {
        return Err(Error::InsufficientData(format!("{} bins in the fit range", freq.len())));
    }
    let f_max = freq[freq.len() - 1];
    let f_min = freq[0];
    if f_max < 10.0 * f_min {
        return Err(Error::InsufficientData(
            "fit range must cover at least a decade".into(),
        ));
    }
    if !opts.mba_fixed_zero && opts.spn_reference.is_none() {
        return Err(Error::Unidentifiable(
            "s_spn and s_mba share the same lineshape; supply an spn_reference from an unpumped spectrum".into(),
        ));
    }
    let omega: Vec<f64> = freq.iter().map(|f| crate::angular(*f)).collect();

    // Starting point.
    let mut top: Vec<f64> = freq
        .iter()
        .zip(&y)
        .filter(|(f, _)| **f >= f_max / 10.0)
        .map(|(_, p)| *p)
        .collect();
    let psn0 = median(&mut top).max(f64::MIN_POSITIVE);
    let low_n = (freq.len() / 20).clamp(3, 25);
    let mut low: Vec<f64> = y[..low_n].to_vec();
    let plateau = (median(&mut low) - psn0).max(0.1 * psn0);
    let dw0 = match opts.linewidth_hint {
        Some(h) if h > 0.0 => h,
        _ => {
            let idx = y.iter().position(|p| p - psn0 < plateau / 2.0).unwrap_or(y.len() / 2);
            omega[idx.max(1)]
        }
    };
    let mut p = vec![psn0.ln(), plateau.ln(), dw0.ln()];

    let k = s.n_averages as f64;
    let mut problem = KneeProblem {
        omega: &omega,
        y: &y,
        scale: y.iter().map(|v| v.max(psn0 * 1e-3)).collect(),
        sqrt_k: k.sqrt(),
    };
    let mut sol = None;
    for _round in 0..8 {
        let next = levenberg_marquardt(&problem, &p, LmOptions::default())?;
        let moved = next
            .params
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next.params.clone();
        problem.scale = omega.iter().map(|w| KneeProblem::model(*w, &p).0).collect();
        sol = Some(next);
        if moved < 1e-9 {
            break;
        }
    }
    let sol = sol.expect("at least one round");
    // Refresh the covariance and χ² with the final weights.
    let final_sol = levenberg_marquardt(&problem, &p, LmOptions::default()).unwrap_or(sol);
    let p = &final_sol.params;
    let dof = (y.len() - 3) as f64;
    let chi2: f64 = omega
        .iter()
        .zip(&y)
        .map(|(w, v)| {
            let m = KneeProblem::model(*w, p).0;
            k * (v - m).powi(2) / (m * m)
        })
        .sum();
    let (psn, lor, dw) = (p[0].exp(), p[1].exp(), p[2].exp());
    let err = |i: usize, v: f64| v * final_sol.covariance[(i, i)].max(0.0).sqrt();
    let lor_err = err(1, lor);

    let (s_spn, s_mba, s_spn_err, s_mba_err) = if opts.mba_fixed_zero {
        (lor, 0.0, lor_err, 0.0)
    } else {
        let reference = opts.spn_reference.unwrap_or(lor);
        let spn = reference.min(lor).max(0.0);
        (spn, (lor - spn).max(0.0), 0.0, lor_err)
    };
    Ok(BudgetFit {
        s_psn: psn,
        s_spn,
        s_mba,
        linewidth: dw,
        s_psn_err: err(0, psn),
        s_spn_err,
        s_mba_err,
        linewidth_err: err(2, dw),
        chi2_per_dof: chi2 / dof,
        bins_used: y.len(),
        linewidth_hint: opts.linewidth_hint,
    })
}

/// `s(n) = α·n/(β + n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub alpha: f64,
    pub beta: f64,
    /// Covariance of (α, β).
    pub covariance: [[f64; 2]; 2],
}

impl SaturationFit {
    pub fn extrapolate(&self, n: f64) -> f64 {
        self.alpha * n / (self.beta + n)
    }
}

/// Relative residuals of the saturation law in log parameters, density in units of 10¹².
struct SaturationProblem {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Residuals for SaturationProblem {
    fn len(&self) -> usize {
        self.x.len()
    }

    fn eval(&self, p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>) {
        let (a, b) = (p[0].exp(), p[1].exp());
        for i in 0..self.x.len() {
            let x = self.x[i];
            let m = a * x / (b + x);
            r[i] = (m - self.y[i]) / self.y[i];
            jac[(i, 0)] = m / self.y[i];
            jac[(i, 1)] = -m * b / (b + x) / self.y[i];
        }
    }
}

pub fn fit_spn_saturation(points: &[(f64, f64)]) -> Result<SaturationFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points; need 3", points.len())));
    }
    if points.iter().any(|&(n, s)| !(n > 0.0) || !(s > 0.0)) {
        return Err(Error::InsufficientData("densities and noise levels must be positive".into()));
    }
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::RankDeficient("need at least 3 distinct densities".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0 / DENSITY_UNIT).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();

    // Lineweaver–Burk: 1/s = 1/α + (β/α)(1/n).
    let m = x.len() as f64;
    let (sx, sy) = x.iter().zip(&y).fold((0.0, 0.0), |(a, b), (x, y)| (a + 1.0 / x, b + 1.0 / y));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in x.iter().zip(&y) {
        sxx += (1.0 / x - mx).powi(2);
        sxy += (1.0 / x - mx) * (1.0 / y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (a0, b0) = if intercept > 0.0 && slope > 0.0 {
        (1.0 / intercept, slope / intercept)
    } else {
        let ymax = y.iter().cloned().fold(0.0, f64::max);
        (2.0 * ymax, x.iter().cloned().fold(0.0, f64::max))
    };

    let problem = SaturationProblem { x, y };
    let sol = levenberg_marquardt(&problem, &[a0.ln(), b0.ln()], LmOptions::default())?;
    let (alpha, b) = (sol.params[0].exp(), sol.params[1].exp());
    let beta = b * DENSITY_UNIT;
    let dof = (problem.x.len() - 2) as f64;
    let sigma2 = if dof > 0.0 { sol.cost / dof } else { 0.0 };
    let scale = [alpha, beta];
    let mut covariance = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            covariance[i][j] = sol.covariance[(i, j)] * sigma2 * scale[i] * scale[j];
        }
    }
    Ok(SaturationFit {
        alpha,
        beta,
        covariance,
    })
}

//! Density sweeps and density-model fits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{bandwidth_3db, lorentzian_response, quantum_advantage, AdvantageReport, SensitivityModel};
use crate::error::{Error, Result};
use crate::lockin::{fit_resonance, LockinSettings};
use crate::model::{xi2_from_db, LinewidthModel, OpmParams, TransmissionModel};
use crate::sim::{simulate_field_scan, simulate_v_cycles, FieldScanPlan, SimMode, SimPlan};
use crate::spectral::{fit_noise_budget, psd_hann, BudgetFitOptions};

/// Densities quoted by the experiment; other grid points are our own choice.
pub const MEASURED_DENSITIES: [f64; 3] = [2.18e12, 4.3e12, 1.13e13];

pub const DEFAULT_DENSITIES: [f64; 6] = [2.18e12, 3.1e12, 4.3e12, 6.0e12, 8.2e12, 1.13e13];

/// Provenance label for a grid density.
pub fn density_provenance(n: f64) -> &'static str {
    if MEASURED_DENSITIES.iter().any(|p| (n / p - 1.0).abs() < 1e-9) {
        "measured"
    } else {
        "implementer-chosen"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Operating point; its density and squeezing are overridden per grid point.
    pub base: OpmParams,
    pub densities: Vec<f64>,
    pub squeezing_db: Vec<f64>,
    pub analysis_freqs_hz: Vec<f64>,
    pub mode: SimMode,
    pub cycles: usize,
    pub duration: f64,
    pub sample_rate: f64,
    pub lockin: LockinSettings,
    pub scan: FieldScanPlan,
    pub fit: BudgetFitOptions,
    pub seed: u64,
}

impl SweepConfig {
    pub fn reference(seed: u64) -> Self {
        Self {
            base: OpmParams::calibrated(4.3e12),
            densities: DEFAULT_DENSITIES.to_vec(),
            squeezing_db: vec![0.0, -2.0],
            analysis_freqs_hz: vec![40.0, 500.0, 1000.0],
            mode: SimMode::Baseband,
            cycles: 50,
            duration: 0.5,
            sample_rate: SimMode::Baseband.default_sample_rate(),
            lockin: LockinSettings::default(),
            scan: FieldScanPlan::default(),
            fit: BudgetFitOptions::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() || self.squeezing_db.is_empty() {
            return Err(Error::Config("density and squeezing grids must be non-empty".into()));
        }
        if let Some(n) = self.densities.iter().find(|n| !(**n > 0.0)) {
            return Err(crate::error::domain("grid density", *n, "must be > 0"));
        }
        if let Some(d) = self.squeezing_db.iter().find(|d| !d.is_finite()) {
            return Err(crate::error::domain("squeezing_db", *d, "must be finite"));
        }
        if self.analysis_freqs_hz.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::Config("analysis frequencies must be >= 0".into()));
        }
        Ok(())
    }

    pub fn point_params(&self, n: f64, xi2_in: f64) -> OpmParams {
        self.base.clone().with_density(n).with_squeezing(xi2_in)
    }

    pub fn plan(&self, params: OpmParams, seed: u64) -> SimPlan {
        SimPlan {
            duration: self.duration,
            cycles: self.cycles,
            sample_rate: self.sample_rate,
            test_tone: None,
            field_scan: Some(self.scan),
            lockin: self.lockin,
            ..SimPlan::new(params, self.mode, seed)
        }
    }
}

/// Seed of grid point (density index, squeezing index), decorrelated with splitmix64.
pub fn point_seed(seed: u64, density_index: usize, squeeze_index: usize) -> u64 {
    let mut z = seed
        ^ (density_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (squeeze_index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: f64,
    pub xi2_in: f64,
    pub xi2_out: f64,
    /// Resonance-fit HWHM (rate).
    pub linewidth_fit: f64,
    pub amplitude_fit: f64,
    /// V/T.
    pub slope: f64,
    pub s_psn: f64,
    pub s_spn: f64,
    pub s_mba: f64,
    pub analysis_freqs_hz: Vec<f64>,
    /// T²/Hz at each analysis frequency.
    pub s_b: Vec<f64>,
    pub omega_3db: f64,
    /// `"ok"` or the error that stopped this point.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Magnetic noise at `freq_hz` recomputed from the row's fitted quantities.
    pub fn sb_at(&self, freq_hz: f64) -> f64 {
        let l = lorentzian_response(crate::angular(freq_hz), self.linewidth_fit);
        (self.s_psn / l + self.s_spn + self.s_mba) / (self.slope * self.slope)
    }

    fn failed(n: f64, xi2_in: f64, freqs: &[f64], err: &Error) -> Self {
        Self {
            n,
            xi2_in,
            xi2_out: f64::NAN,
            linewidth_fit: f64::NAN,
            amplitude_fit: f64::NAN,
            slope: f64::NAN,
            s_psn: f64::NAN,
            s_spn: f64::NAN,
            s_mba: f64::NAN,
            analysis_freqs_hz: freqs.to_vec(),
            s_b: vec![f64::NAN; freqs.len()],
            omega_3db: f64::NAN,
            status: format!("error: {err}"),
        }
    }
}

/// Runs every (density, squeezing) point; failures are recorded in the row status.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let points: Vec<(usize, usize)> = (0..cfg.densities.len())
        .flat_map(|i| (0..cfg.squeezing_db.len()).map(move |j| (i, j)))
        .collect();
    Ok(points
        .par_iter()
        .map(|&(i, j)| {
            let n = cfg.densities[i];
            let xi2 = xi2_from_db(cfg.squeezing_db[j]);
            run_point(cfg, n, xi2, point_seed(cfg.seed, i, j))
                .unwrap_or_else(|e| SweepRow::failed(n, xi2, &cfg.analysis_freqs_hz, &e))
        })
        .collect())
}

/// One grid point: scan → resonance fit, cycles → PSD → budget fit → S_B.
pub fn run_point(cfg: &SweepConfig, n: f64, xi2_in: f64, seed: u64) -> Result<SweepRow> {
    let params = cfg.point_params(n, xi2_in);
    let plan = cfg.plan(params.clone(), seed);
    let resonance = fit_resonance(&simulate_field_scan(&plan)?, params.field.gyromagnetic_ratio)?;

    let evading = params.probe.cos_theta() == 0.0;
    let spn_reference = if evading {
        None
    } else {
        let dark = cfg.plan(params.clone().unpumped(), seed ^ 0x5EED_0F0F_F00D_CAFE);
        let spectrum = psd_hann(&simulate_v_cycles(&dark)?)?;
        let opts = BudgetFitOptions {
            mba_fixed_zero: true,
            linewidth_hint: Some(resonance.hwhm_freq),
            ..cfg.fit.clone()
        };
        Some(fit_noise_budget(&spectrum, &opts)?.s_spn)
    };

    let spectrum = psd_hann(&simulate_v_cycles(&plan)?)?;
    let opts = BudgetFitOptions {
        mba_fixed_zero: evading,
        linewidth_hint: Some(resonance.hwhm_freq),
        spn_reference,
        ..cfg.fit.clone()
    };
    let budget = fit_noise_budget(&spectrum, &opts)?;

    let mut row = SweepRow {
        n,
        xi2_in,
        xi2_out: params.xi2_out()?,
        linewidth_fit: resonance.hwhm_freq,
        amplitude_fit: resonance.amplitude,
        slope: resonance.slope,
        s_psn: budget.s_psn,
        s_spn: budget.s_spn,
        s_mba: budget.s_mba,
        analysis_freqs_hz: cfg.analysis_freqs_hz.clone(),
        s_b: Vec::new(),
        omega_3db: bandwidth_3db(resonance.hwhm_freq, budget.s_spn + budget.s_mba, budget.s_psn),
        status: "ok".into(),
    };
    row.s_b = cfg.analysis_freqs_hz.iter().map(|f| row.sb_at(*f)).collect();
    if row.s_b.iter().any(|v| !v.is_finite()) || !row.slope.is_finite() {
        return Err(Error::InsufficientData("non-finite sensitivity".into()));
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eq2Options {
    pub linewidth_model: LinewidthModel,
    /// Loss model used when predicting squeezing for the advantage search.
    pub transmission: Option<TransmissionModel>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Density search range for ζ; defaults to the span of the rows.
    pub density_range: Option<(f64, f64)>,
}

impl Default for Eq2Options {
    fn default() -> Self {
        Self {
            linewidth_model: LinewidthModel::default(),
            transmission: Some(TransmissionModel::default()),
            bootstrap_resamples: 1000,
            seed: 0,
            density_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eq2Fit {
    pub frequency_hz: f64,
    pub c_psn: f64,
    pub c_spn: f64,
    pub c_mba: Option<f64>,
    pub c_psn_ci: (f64, f64),
    pub c_spn_ci: (f64, f64),
    pub c_mba_ci: Option<(f64, f64)>,
    /// SD of the relative residuals.
    pub residual_rel_sd: f64,
    pub rows_used: usize,
    pub resamples: usize,
    /// ζ with its bootstrap interval, when the rows contain a squeezed state.
    pub advantage: Option<AdvantageReport>,
}

/// Columns of the density model at one row.
fn design_row(omega: f64, n: f64, xi2: f64, lw: &LinewidthModel, with_mba: bool) -> Result<Vec<f64>> {
    let dw = crate::model::linewidth(n, lw)?;
    let d2 = dw * dw;
    let x1 = n / crate::model::DENSITY_UNIT;
    let mut x = vec![xi2 * d2 * (omega * omega + d2) / (x1 * x1), d2 * dw / x1];
    if with_mba {
        x.push(1.0 / xi2);
    }
    Ok(x)
}

/// Relative-weight linear least squares with column scaling.
struct LinearDesign {
    /// Rows already divided by y and columns normalized.
    a: DMatrix<f64>,
    col_scale: Vec<f64>,
    raw: DMatrix<f64>,
}

impl LinearDesign {
    fn new(x: DMatrix<f64>) -> Self {
        let col_scale: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).norm()).collect();
        Self {
            a: x.clone(),
            col_scale,
            raw: x,
        }
    }

    fn solve(&mut self, y: &[f64]) -> Result<Vec<f64>> {
        let (m, p) = self.raw.shape();
        for i in 0..m {
            for j in 0..p {
                self.a[(i, j)] = self.raw[(i, j)] / (y[i] * self.col_scale[j]);
            }
        }
        let svd = self.a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::RankDeficient(format!(
                "density-model design is singular (σ_min/σ_max = {:e})",
                smin / smax
            )));
        }
        let b = DVector::from_element(m, 1.0);
        let sol = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::RankDeficient(e.to_string()))?;
        Ok((0..p).map(|j| sol[j] / self.col_scale[j]).collect())
    }

    fn predict(&self, c: &[f64]) -> Vec<f64> {
        (0..self.raw.nrows())
            .map(|i| (0..c.len()).map(|j| self.raw[(i, j)] * c[j]).sum())
            .collect()
    }
}

fn percentile_ci(mut v: Vec<f64>) -> (f64, f64) {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.025), q(0.975))
}

/// Fits the density model to the rows' S_B at angular frequency `omega`.
pub fn fit_eq2(rows: &[SweepRow], omega: f64, fix_mba_zero: bool, opts: &Eq2Options) -> Result<Eq2Fit> {
    let rows: Vec<&SweepRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let mut densities: Vec<f64> = rows.iter().map(|r| r.n).collect();
    densities.sort_by(f64::total_cmp);
    densities.dedup();
    if densities.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable densities; need at least 4",
            densities.len()
        )));
    }
    let freq_hz = omega / (2.0 * std::f64::consts::PI);
    let with_mba = !fix_mba_zero;
    let y: Vec<f64> = rows.iter().map(|r| r.sb_at(freq_hz)).collect();
    if y.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InsufficientData("non-positive sensitivity in rows".into()));
    }
    let p = if with_mba { 3 } else { 2 };
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, r) in rows.iter().enumerate() {
        let d = design_row(omega, r.n, r.xi2_out, &opts.linewidth_model, with_mba)?;
        for j in 0..p {
            x[(i, j)] = d[j];
        }
    }
    let mut design = LinearDesign::new(x);
    let coeffs = design.solve(&y)?;
    let fitted = design.predict(&coeffs);
    let dof = (rows.len() - p).max(1) as f64;
    let rel_sd = (fitted
        .iter()
        .zip(&y)
        .map(|(m, v)| ((v - m) / m).powi(2))
        .sum::<f64>()
        / dof)
        .sqrt();

    let range = opts
        .density_range
        .unwrap_or((densities[0], densities[densities.len() - 1]));
    let squeezed = rows
        .iter()
        .map(|r| r.xi2_in)
        .filter(|x| *x < 1.0)
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
    let model_for = |c: &[f64]| SensitivityModel {
        c_psn: c[0],
        c_spn: c[1],
        c_mba: if with_mba { c[2] } else { 0.0 },
        linewidth_model: opts.linewidth_model,
        transmission: opts.transmission.clone(),
        density_range: range,
    };
    let advantage = match squeezed {
        Some(xi2) => Some(quantum_advantage(omega, &model_for(&coeffs), xi2)?),
        None => None,
    };

    let resamples: Vec<(Vec<f64>, f64)> = (0..opts.bootstrap_resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let y_star: Vec<f64> = fitted
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m * (1.0 + rel_sd * e)
                })
                .collect();
            if y_star.iter().any(|v| !(*v > 0.0)) {
                return None;
            }
            let mut d = LinearDesign {
                a: design.a.clone(),
                col_scale: design.col_scale.clone(),
                raw: design.raw.clone(),
            };
            let c = d.solve(&y_star).ok()?;
            let zeta = match squeezed {
                Some(xi2) => quantum_advantage(omega, &model_for(&c), xi2)
                    .map(|r| r.zeta_db)
                    .unwrap_or(f64::NAN),
                None => f64::NAN,
            };
            Some((c, zeta))
        })
        .collect();

    let column = |j: usize| percentile_ci(resamples.iter().map(|(c, _)| c[j]).collect());
    let advantage = advantage.map(|mut a| {
        if !resamples.is_empty() {
            let (lo, hi) = percentile_ci(resamples.iter().map(|(_, z)| *z).collect());
            if lo.is_finite() && hi.is_finite() {
                a.ci_low = lo;
                a.ci_high = hi;
            }
        }
        a
    });
    let point_ci = |v: f64| (v, v);
    let have_boot = !resamples.is_empty();
    Ok(Eq2Fit {
        frequency_hz: freq_hz,
        c_psn: coeffs[0],
        c_spn: coeffs[1],
        c_mba: with_mba.then(|| coeffs[2]),
        c_psn_ci: if have_boot { column(0) } else { point_ci(coeffs[0]) },
        c_spn_ci: if have_boot { column(1) } else { point_ci(coeffs[1]) },
        c_mba_ci: with_mba.then(|| if have_boot { column(2) } else { point_ci(coeffs[2]) }),
        residual_rel_sd: rel_sd,
        rows_used: rows.len(),
        resamples: resamples.len(),
        advantage,
    })
}

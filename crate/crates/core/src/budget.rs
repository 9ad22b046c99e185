//! Analytic optical noise budget, magnetic sensitivity and quantum advantage.
//!
//! Angular frequencies (rad/s) are used throughout; analysis frequencies in
//! Hz are converted with [`crate::angular`].

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{squeezing_after_loss, transmission, LinewidthModel, OpmParams, TransmissionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub s_psn: f64,
    pub s_spn: f64,
    pub s_mba: f64,
    /// HWHM on the γ·B rate scale.
    pub linewidth: f64,
}

impl NoiseBudget {
    /// Lorentzian-filtered part of the spectrum.
    pub fn spin_noise(&self) -> f64 {
        self.s_spn + self.s_mba
    }
}

/// `L(ω) = Δω²/(ω² + Δω²)`.
pub fn lorentzian_response(omega: f64, dw: f64) -> f64 {
    let d2 = dw * dw;
    d2 / (omega * omega + d2)
}

pub fn noise_components(p: &OpmParams) -> Result<NoiseBudget> {
    let n = p.density()?;
    let dw = p.linewidth_rate()?;
    let xi2 = p.xi2_out()?;
    if !(xi2 > 0.0) {
        return Err(domain("xi2_out", xi2, "must be > 0"));
    }
    let pr = p.probe.photon_flux;
    let pp = p.pump.photon_flux;
    let cal = &p.calibration;
    let cos = p.probe.cos_theta();
    let s_psn = cal.psn_scale * xi2 * pr;
    let s_spn = cal.spn_scale * pr * pr * n / dw;
    let s_mba = cal.mba_scale * cos * cos * (pr.powi(3) / xi2) * n * n * pp * pp / dw.powi(4);
    Ok(NoiseBudget {
        s_psn,
        s_spn,
        s_mba,
        linewidth: dw,
    })
}

/// `S_v(ω) = s_psn + L(ω)·(s_spn + s_mba)`.
pub fn optical_psd(omega: f64, b: &NoiseBudget) -> f64 {
    b.s_psn + lorentzian_response(omega, b.linewidth) * b.spin_noise()
}

/// `S_B(ω) = S_v(ω)/(slope²·L(ω))`; infinite when the slope is zero.
pub fn equivalent_magnetic_noise(omega: f64, b: &NoiseBudget, slope: f64) -> f64 {
    if slope == 0.0 {
        return f64::INFINITY;
    }
    (b.s_psn / lorentzian_response(omega, b.linewidth) + b.spin_noise()) / (slope * slope)
}

/// `Δω·√(s_spn/s_psn + 1)`; infinite when there is no shot-noise floor.
pub fn bandwidth_3db(dw: f64, s_spn: f64, s_psn: f64) -> f64 {
    if s_psn == 0.0 {
        return f64::INFINITY;
    }
    dw * (s_spn / s_psn + 1.0).sqrt()
}

/// Frequency (rad/s) at which `S_B(ω) = 2·S_B(0)`, found by bisection.
pub fn half_power_frequency(b: &NoiseBudget) -> f64 {
    if b.s_psn == 0.0 {
        return f64::INFINITY;
    }
    let s0 = equivalent_magnetic_noise(0.0, b, 1.0);
    let excess = |w: f64| equivalent_magnetic_noise(w, b, 1.0) - 2.0 * s0;
    let mut lo = 0.0;
    let mut hi = b.linewidth.max(f64::MIN_POSITIVE);
    while excess(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Sensitivity as a function of density: `c_psn·ξ²Δω²(ω²+Δω²)/x² + c_spn·Δω³/x + c_mba/ξ²`
/// with `x = n/10¹²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityModel {
    pub c_psn: f64,
    pub c_spn: f64,
    pub c_mba: f64,
    pub linewidth_model: LinewidthModel,
    /// Loss applied to the input squeezing; `None` means lossless.
    pub transmission: Option<TransmissionModel>,
    /// Density interval searched by [`quantum_advantage`].
    pub density_range: (f64, f64),
}

pub const DEFAULT_DENSITY_RANGE: (f64, f64) = (1e11, 1e14);

impl SensitivityModel {
    pub fn new(c_psn: f64, c_spn: f64, c_mba: f64, linewidth_model: LinewidthModel) -> Self {
        Self {
            c_psn,
            c_spn,
            c_mba,
            linewidth_model,
            transmission: None,
            density_range: DEFAULT_DENSITY_RANGE,
        }
    }

    /// Squeezing reaching the detector for an input variance ratio at density `n`.
    pub fn xi2_out(&self, n: f64, xi2_in: f64) -> Result<f64> {
        match &self.transmission {
            Some(t) => squeezing_after_loss(xi2_in, transmission(n, t)?.value),
            None => squeezing_after_loss(xi2_in, 1.0),
        }
    }

    /// Sensitivity with the input squeezing degraded by the transmission model.
    pub fn at_input_squeezing(&self, omega: f64, n: f64, xi2_in: f64) -> Result<f64> {
        sensitivity_vs_density(omega, n, self, self.xi2_out(n, xi2_in)?)
    }
}

/// Evaluates the density model for the squeezing `xi2` that actually reaches the detector.
pub fn sensitivity_vs_density(omega: f64, n: f64, m: &SensitivityModel, xi2: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(domain("density", n, "must be > 0"));
    }
    if !(xi2 > 0.0) {
        return Err(domain("xi2", xi2, "must be > 0"));
    }
    let dw = crate::model::linewidth(n, &m.linewidth_model)?;
    let d2 = dw * dw;
    let x = n / crate::model::DENSITY_UNIT;
    Ok(m.c_psn * xi2 * d2 * (omega * omega + d2) / (x * x) + m.c_spn * d2 * dw / x + m.c_mba / xi2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    /// Hz.
    pub frequency: f64,
    pub min_sb_coherent: f64,
    pub min_sb_squeezed: f64,
    pub zeta_db: f64,
    pub n_opt_coherent: f64,
    pub n_opt_squeezed: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub coherent_at_boundary: bool,
    pub squeezed_at_boundary: bool,
}

/// Result of a one-dimensional minimization over density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptimum {
    pub density: f64,
    pub value: f64,
    pub at_boundary: bool,
}

const GRID_POINTS: usize = 200;

/// Minimizes `f` over `[lo, hi]` on a log grid, then refines by golden section in `ln n`.
/// Ties on the grid go to the smallest density.
pub fn minimize_over_density<F>(f: F, lo: f64, hi: f64) -> Result<DensityOptimum>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo > 0.0 && hi > lo) {
        return Err(domain("density range", lo, "need 0 < lo < hi"));
    }
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            if i == GRID_POINTS - 1 {
                hi
            } else if i == 0 {
                lo
            } else {
                (ln_lo + (ln_hi - ln_lo) * i as f64 / (GRID_POINTS - 1) as f64).exp()
            }
        })
        .collect();
    let values = grid.iter().map(|&n| f(n)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }

    let a = grid[best.saturating_sub(1)].ln();
    let b = grid[(best + 1).min(GRID_POINTS - 1)].ln();
    let g = |x: f64| f(x.exp());
    let (x, v) = golden_section(&g, a, b)?;
    let (mut density, mut value) = (x.exp(), v);
    if values[best] <= value {
        density = grid[best];
        value = values[best];
    }
    let at_boundary = {
        let edge = |e: f64| (density / e - 1.0).abs() < 1e-6;
        edge(lo) || edge(hi)
    };
    if at_boundary {
        let e = if (density / lo - 1.0).abs() < 1e-6 { lo } else { hi };
        density = e;
        value = f(e)?;
    }
    Ok(DensityOptimum {
        density,
        value,
        at_boundary,
    })
}

fn golden_section<F>(f: &F, mut a: f64, mut b: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// `ζ = 10·log₁₀(min_n S_B(ξ²=1) / min_n S_B(ξ²_squeezed))` at angular frequency `omega`.
pub fn quantum_advantage(omega: f64, m: &SensitivityModel, xi2_squeezed: f64) -> Result<AdvantageReport> {
    if !(xi2_squeezed > 0.0) {
        return Err(domain("xi2_squeezed", xi2_squeezed, "must be > 0"));
    }
    let (lo, hi) = m.density_range;
    let coh = minimize_over_density(|n| m.at_input_squeezing(omega, n, 1.0), lo, hi)?;
    let sq = minimize_over_density(|n| m.at_input_squeezing(omega, n, xi2_squeezed), lo, hi)?;
    let zeta_db = 10.0 * (coh.value / sq.value).log10();
    Ok(AdvantageReport {
        frequency: omega / (2.0 * std::f64::consts::PI),
        min_sb_coherent: coh.value,
        min_sb_squeezed: sq.value,
        zeta_db,
        n_opt_coherent: coh.density,
        n_opt_squeezed: sq.density,
        ci_low: zeta_db,
        ci_high: zeta_db,
        coherent_at_boundary: coh.at_boundary,
        squeezed_at_boundary: sq.at_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular;
    use approx::assert_relative_eq;

    fn budget(s_psn: f64, s_spn: f64, s_mba: f64, dw: f64) -> NoiseBudget {
        NoiseBudget {
            s_psn,
            s_spn,
            s_mba,
            linewidth: dw,
        }
    }

    #[test]
    fn lorentzian_examples() {
        assert_eq!(lorentzian_response(0.0, 200.0), 1.0);
        assert_eq!(lorentzian_response(200.0, 200.0), 0.5);
        assert!(lorentzian_response(1e12, 200.0) < 1e-15);
    }

    #[test]
    fn optical_psd_examples() {
        let b = budget(1.0, 3.0, 0.5, 150.0);
        assert_eq!(optical_psd(0.0, &b), 4.5);
        assert_eq!(optical_psd(150.0, &b), 1.0 + 3.5 / 2.0);
        assert!((optical_psd(1e9, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn back_action_vanishes_at_right_angle() {
        let p = OpmParams::calibrated(4.3e12);
        assert_eq!(noise_components(&p).unwrap().s_mba, 0.0);
        let b0 = noise_components(&p.clone().with_theta(0.0)).unwrap();
        assert!(b0.s_mba > 0.0);
    }

    #[test]
    fn squeezing_scales_psn_and_mba() {
        let mut p = OpmParams::calibrated(4.3e12).with_theta(0.0);
        p.transmission = TransmissionModel::lossless();
        let coh = noise_components(&p).unwrap();
        let sq = noise_components(&p.clone().with_squeezing(0.631)).unwrap();
        assert_relative_eq!(sq.s_psn / coh.s_psn, 0.631, max_relative = 1e-12);
        assert_relative_eq!(sq.s_mba / coh.s_mba, 1.0 / 0.631, max_relative = 1e-12);
        assert_eq!(sq.s_spn, coh.s_spn);
    }

    #[test]
    fn density_scaling_at_fixed_linewidth() {
        let mut p = OpmParams::calibrated(2e12).with_theta(0.0);
        p.transmission = TransmissionModel::lossless();
        p.linewidth.gamma2 = 0.0;
        let a = noise_components(&p).unwrap();
        let b = noise_components(&p.clone().with_density(4e12)).unwrap();
        assert_relative_eq!(b.s_spn / a.s_spn, 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.s_mba / a.s_mba, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn magnetic_noise_examples() {
        let b = budget(2.0, 0.0, 0.0, 100.0);
        for w in [0.0, 50.0, 400.0] {
            let sb = equivalent_magnetic_noise(w, &b, 3.0);
            assert_relative_eq!(sb * lorentzian_response(w, 100.0), 2.0 / 9.0, max_relative = 1e-12);
        }
        let b = budget(1.5, 1.5, 0.0, 100.0);
        assert_relative_eq!(equivalent_magnetic_noise(0.0, &b, 2.0), 2.0 * 1.5 / 4.0);
        assert!(equivalent_magnetic_noise(0.0, &b, 0.0).is_infinite());
    }

    #[test]
    fn squeezing_barely_matters_when_spin_noise_dominates() {
        let coh = budget(0.04, 1.0, 0.0, 100.0);
        let sq = budget(0.02, 1.0, 0.0, 100.0);
        let r = equivalent_magnetic_noise(0.0, &sq, 1.0) / equivalent_magnetic_noise(0.0, &coh, 1.0);
        assert!((1.0 - r) < 0.03);
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(bandwidth_3db(100.0, 0.0, 1.0), 100.0);
        assert_eq!(bandwidth_3db(100.0, 3.0, 1.0), 200.0);
        assert!(bandwidth_3db(100.0, 3.0, 0.0).is_infinite());
        assert_relative_eq!(half_power_frequency(&budget(1.0, 3.0, 0.0, 100.0)), 200.0, max_relative = 1e-10);
    }

    #[test]
    fn spn_only_optimum_is_analytic() {
        let lw = LinewidthModel::default();
        let m = SensitivityModel::new(0.0, 1.0, 0.0, lw);
        let opt = minimize_over_density(|n| sensitivity_vs_density(0.0, n, &m, 1.0), 1e11, 1e14).unwrap();
        assert_relative_eq!(opt.density, lw.spn_optimal_density(), max_relative = 1e-6);
        assert_relative_eq!(lw.spn_optimal_density(), 2.9025e12, max_relative = 1e-4);
        assert!(!opt.at_boundary);
    }

    #[test]
    fn psn_only_scales_with_squeezing() {
        let m = SensitivityModel::new(1.0, 0.0, 0.0, LinewidthModel::default());
        let a = sensitivity_vs_density(300.0, 3e12, &m, 1.0).unwrap();
        let b = sensitivity_vs_density(300.0, 3e12, &m, 0.5).unwrap();
        assert_relative_eq!(b / a, 0.5, max_relative = 1e-14);
        assert!(sensitivity_vs_density(300.0, 0.0, &m, 1.0).is_err());
    }

    #[test]
    fn psn_term_minimum_above_spn_minimum() {
        let lw = LinewidthModel::default();
        let psn = SensitivityModel::new(1.0, 0.0, 0.0, lw);
        let spn = SensitivityModel::new(0.0, 1.0, 0.0, lw);
        let w = angular(40.0);
        let a = minimize_over_density(|n| sensitivity_vs_density(w, n, &psn, 1.0), 1e11, 1e14).unwrap();
        let b = minimize_over_density(|n| sensitivity_vs_density(w, n, &spn, 1.0), 1e11, 1e14).unwrap();
        assert!(a.density > b.density);
    }

    #[test]
    fn large_density_growth_is_quadratic() {
        let lw = LinewidthModel::default();
        let m = SensitivityModel::new(1.0, 1.0, 0.0, lw);
        let a = sensitivity_vs_density(0.0, 1e16, &m, 1.0).unwrap();
        let b = sensitivity_vs_density(0.0, 2e16, &m, 1.0).unwrap();
        assert!((b / a - 4.0).abs() < 0.05);
    }

    #[test]
    fn zeta_is_zero_without_squeezing() {
        let mut m = SensitivityModel::new(2e-3, 1.0, 0.0, LinewidthModel::default());
        m.transmission = Some(TransmissionModel::default());
        let r = quantum_advantage(angular(500.0), &m, 1.0).unwrap();
        assert_eq!(r.zeta_db, 0.0);
        assert_eq!(r.ci_low, r.ci_high);
    }

    #[test]
    fn back_action_can_make_squeezing_harmful() {
        let mut m = SensitivityModel::new(2e-3, 1.0, 3e6, LinewidthModel::default());
        m.transmission = Some(TransmissionModel::default());
        let r = quantum_advantage(angular(1.0), &m, 0.631).unwrap();
        assert!(r.zeta_db < 0.0, "zeta {}", r.zeta_db);
    }

    #[test]
    fn boundary_optimum_is_flagged() {
        let m = SensitivityModel {
            density_range: (1e11, 1e12),
            ..SensitivityModel::new(0.0, 1.0, 0.0, LinewidthModel::default())
        };
        let r = quantum_advantage(0.0, &m, 0.631).unwrap();
        assert!(r.coherent_at_boundary && r.squeezed_at_boundary);
        assert_eq!(r.n_opt_coherent, 1e12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_budget() -> impl Strategy<Value = NoiseBudget> {
            (1e-16f64..1e-12, 0.0f64..1e-11, 0.0f64..1e-11, 10.0f64..2000.0)
                .prop_map(|(a, b, c, d)| budget(a, b, c, d))
        }

        proptest! {
            #[test]
            fn optical_psd_monotone_and_floored(b in arb_budget(), w in 0.0f64..1e5, dw in 0.0f64..1e4) {
                let s1 = optical_psd(w, &b);
                let s2 = optical_psd(w + dw, &b);
                prop_assert!(s2 <= s1 && s2 >= b.s_psn);
            }

            #[test]
            fn magnetic_noise_non_decreasing(b in arb_budget(), w in 0.0f64..1e5, dw in 0.0f64..1e4) {
                prop_assert!(equivalent_magnetic_noise(w + dw, &b, 1e7) >= equivalent_magnetic_noise(w, &b, 1e7));
            }

            #[test]
            fn bandwidth_decreasing_in_psn(dw in 1.0f64..1e3, spn in 1e-15f64..1e-11, psn in 1e-16f64..1e-12, f in 1.01f64..10.0) {
                prop_assert!(bandwidth_3db(dw, spn, psn * f) < bandwidth_3db(dw, spn, psn));
            }

            #[test]
            fn half_power_matches_formula(b in arb_budget()) {
                let b = NoiseBudget { s_mba: 0.0, ..b };
                let num = half_power_frequency(&b);
                let ana = bandwidth_3db(b.linewidth, b.s_spn, b.s_psn);
                prop_assert!((num / ana - 1.0).abs() < 1e-9);
            }

            #[test]
            fn squeezing_never_hurts_with_evasion(w in 0.0f64..1e4, n in 1e11f64..1e14, xi in 0.05f64..1.0, dx in 0.001f64..0.5) {
                let m = SensitivityModel::new(2e-3, 1.0, 0.0, LinewidthModel::default());
                let lo = sensitivity_vs_density(w, n, &m, xi).unwrap();
                let hi = sensitivity_vs_density(w, n, &m, xi + dx).unwrap();
                prop_assert!(hi >= lo);
            }

            #[test]
            fn zeta_zero_for_coherent(c_psn in 1e-4f64..1.0, f in 1.0f64..2000.0) {
                let mut m = SensitivityModel::new(c_psn, 1.0, 0.0, LinewidthModel::default());
                m.transmission = Some(TransmissionModel::default());
                prop_assert_eq!(quantum_advantage(angular(f), &m, 1.0).unwrap().zeta_db, 0.0);
            }
        }
    }
}

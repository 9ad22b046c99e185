//! Statistical properties of simulated traces against the analytic budget.

use opmlab::angular;
use opmlab::budget::{noise_components, optical_psd};
use opmlab::lockin::demodulate;
use opmlab::model::{CalibrationConstants, OpmParams};
use opmlab::sim::{simulate_carrier_trace, simulate_quadrature_cycles, simulate_v_cycles, Channel, SimMode, SimPlan, TimeSeries};
use opmlab::spectral::{fit_noise_budget, psd_hann, BudgetFitOptions, Spectrum};
use proptest::prelude::*;

fn band_mean(s: &Spectrum, lo: f64, hi: f64) -> (f64, usize) {
    let v: Vec<f64> = s
        .freq
        .iter()
        .zip(&s.psd)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, p)| *p)
        .collect();
    (v.iter().sum::<f64>() / v.len() as f64, v.len())
}

fn model_band_mean(s: &Spectrum, p: &OpmParams, lo: f64, hi: f64) -> f64 {
    let b = noise_components(p).unwrap();
    let v: Vec<f64> = s
        .freq
        .iter()
        .filter(|f| **f >= lo && **f <= hi)
        .map(|f| optical_psd(angular(*f), &b))
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn spectrum(params: OpmParams, cycles: usize, seed: u64) -> Spectrum {
    let mut plan = SimPlan::new(params, SimMode::Baseband, seed);
    plan.cycles = cycles;
    psd_hann(&simulate_quadrature_cycles(&plan).unwrap()).unwrap()
}

#[test]
fn carrier_and_baseband_spectra_agree() {
    let params = OpmParams::calibrated(4.3e12);
    let base = spectrum(params.clone(), 50, 11);
    let mut plan = SimPlan::new(params, SimMode::Carrier, 12);
    plan.cycles = 50;
    let demod = psd_hann(&simulate_v_cycles(&plan).unwrap()).unwrap();
    assert_eq!(demod.freq[1], base.freq[1]);
    // Bands below the lock-in roll-off, ~50 bins each.
    for (lo, hi) in [(4.0, 100.0), (100.0, 200.0), (200.0, 300.0)] {
        let (b, _) = band_mean(&base, lo, hi);
        let (c, _) = band_mean(&demod, lo, hi);
        assert!((c / b - 1.0).abs() < 0.1, "{lo}-{hi} Hz: carrier {c:e} baseband {b:e}");
    }
}

fn silent(p: OpmParams) -> OpmParams {
    OpmParams {
        calibration: CalibrationConstants {
            spn_scale: 0.0,
            psn_scale: 0.0,
            mba_scale: 0.0,
            ..p.calibration
        },
        ..p
    }
}

fn settled_quadratures(p: OpmParams) -> (f64, f64) {
    let mut plan = SimPlan::new(p, SimMode::Carrier, 0);
    plan.duration = 0.05;
    let raw = simulate_carrier_trace(&plan).unwrap();
    let (u, v) = demodulate(&raw, plan.params.pump.modulation_freq, 2500.0, 4).unwrap();
    let tail = u.len() / 2;
    let mean = |t: &TimeSeries| t.samples[tail..].iter().sum::<f64>() / (t.len() - tail) as f64;
    (mean(&u), mean(&v))
}

#[test]
fn noise_free_carrier_demodulates_to_steady_state() {
    let p = silent(OpmParams::calibrated(4.3e12));
    let a = p.amplitude().unwrap();
    let (u, v) = settled_quadratures(p.clone());
    assert!((u / a - 1.0).abs() < 1e-3, "u = {u}, A = {a}");
    assert!(v.abs() < 1e-3 * a);

    // Detuned by one linewidth: dispersive and absorptive parts are equal.
    let dw = p.linewidth_rate().unwrap();
    let mut detuned = p.clone();
    detuned.field.bias_field = p.resonance_field() + dw / p.field.gamma();
    let (u, v) = settled_quadratures(detuned);
    assert!((v / u - 1.0).abs() < 1e-3, "v/u = {}", v / u);
}

#[test]
fn squeezing_acts_only_on_the_white_floor() {
    let coh = OpmParams::calibrated(4.3e12);
    let sq = coh.clone().with_squeezing(0.631);
    let (a, b) = (spectrum(coh.clone(), 200, 21), spectrum(sq.clone(), 200, 22));
    let xi2_out = sq.xi2_out().unwrap();

    let (hi_c, k) = band_mean(&a, 3000.0, 4900.0);
    let (hi_s, _) = band_mean(&b, 3000.0, 4900.0);
    let expect = model_band_mean(&b, &sq, 3000.0, 4900.0) / model_band_mean(&a, &coh, 3000.0, 4900.0);
    assert!((expect / xi2_out - 1.0).abs() < 0.02, "high band is PSN dominated");
    // ~1000 bins × 200 averages: each band mean is good to well under 1%.
    assert!((hi_s / hi_c / expect - 1.0).abs() < 0.02, "k = {k}");

    let (lo_c, k) = band_mean(&a, 4.0, 40.0);
    let (lo_s, _) = band_mean(&b, 4.0, 40.0);
    let ratio = lo_s / lo_c;
    let expect = model_band_mean(&b, &sq, 4.0, 40.0) / model_band_mean(&a, &coh, 4.0, 40.0);
    let sigma = (2.0 / (k as f64 * 200.0)).sqrt();
    assert!(expect > 0.95);
    assert!((ratio - expect).abs() < 4.0 * sigma, "low band ratio {ratio} vs {expect} (σ {sigma})");
}

#[test]
fn anti_squeezing_penalty_without_evasion() {
    let coh = OpmParams::calibrated(4.3e12).with_theta(0.0);
    let sq = coh.clone().with_squeezing(0.631);
    let b_coh = noise_components(&coh).unwrap();
    let b_sq = noise_components(&sq).unwrap();
    assert!((b_sq.s_mba / b_coh.s_mba - coh.xi2_out().unwrap() / sq.xi2_out().unwrap()).abs() < 1e-12);

    let (a, b) = (spectrum(coh.clone(), 200, 31), spectrum(sq.clone(), 200, 32));
    let (lo_c, k) = band_mean(&a, 4.0, 40.0);
    let (lo_s, _) = band_mean(&b, 4.0, 40.0);
    let expect = model_band_mean(&b, &sq, 4.0, 40.0) / model_band_mean(&a, &coh, 4.0, 40.0);
    let sigma = (2.0 / (k as f64 * 200.0)).sqrt();
    assert!(expect > 1.0 + 4.0 * sigma);
    assert!((lo_s / lo_c - expect).abs() < 4.0 * sigma);
}

#[test]
fn fits_are_well_specified_and_monotone() {
    let p = OpmParams::calibrated(4.3e12);
    let opts = BudgetFitOptions::default();
    let base = fit_noise_budget(&spectrum(p.clone(), 50, 41), &opts).unwrap();
    assert!((0.8..=1.2).contains(&base.chi2_per_dof), "χ²/dof = {}", base.chi2_per_dof);

    let mut louder = p.clone();
    louder.calibration.spn_scale *= 1.5;
    let up = fit_noise_budget(&spectrum(louder, 50, 41), &opts).unwrap();
    assert!(up.s_spn > 1.3 * base.s_spn);
    assert!((up.s_psn - base.s_psn).abs() < 3.0 * (up.s_psn_err + base.s_psn_err));
    assert!((up.linewidth - base.linewidth).abs() < 3.0 * (up.linewidth_err + base.linewidth_err));
}

fn carrier(samples: Vec<f64>) -> TimeSeries {
    TimeSeries::new(samples, 200_000.0, Channel::RawCarrier, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn demodulation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..4000).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..4000).map(|k| (0.19 * k as f64).sin()).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let w = angular(30e3);
        let (ux, vx) = demodulate(&carrier(x), w, 2500.0, 4).unwrap();
        let (uy, vy) = demodulate(&carrier(y), w, 2500.0, 4).unwrap();
        let (um, vm) = demodulate(&carrier(mix), w, 2500.0, 4).unwrap();
        for k in 0..um.len() {
            prop_assert!((um.samples[k] - (a * ux.samples[k] + b * uy.samples[k])).abs() < 1e-9);
            prop_assert!((vm.samples[k] - (a * vx.samples[k] + b * vy.samples[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_is_scale_equivariant(scale in 1e-3f64..1e3, seed in any::<u64>()) {
        let mut plan = SimPlan::new(OpmParams::calibrated(4.3e12), SimMode::Baseband, seed);
        plan.cycles = 2;
        plan.duration = 0.05;
        let cycles = simulate_quadrature_cycles(&plan).unwrap();
        let scaled: Vec<TimeSeries> = cycles
            .iter()
            .map(|c| TimeSeries::new(c.samples.iter().map(|x| x * scale).collect(), c.sample_rate, c.channel, c.seed).unwrap())
            .collect();
        let (s, t) = (psd_hann(&cycles).unwrap(), psd_hann(&scaled).unwrap());
        for (p, q) in s.psd.iter().zip(&t.psd) {
            prop_assert!((q / (p * scale * scale) - 1.0).abs() < 1e-9);
        }
    }
}

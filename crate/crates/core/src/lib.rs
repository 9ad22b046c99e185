//! Quantum-noise modelling and analysis for Bell-Bloom optically pumped
//! magnetometers probed with (optionally squeezed) off-resonant light.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: deterministic vapor, linewidth, amplitude and transmission models.
//! * [`budget`]: analytic noise budget, sensitivity model, bandwidth and
//!   number-optimized quantum advantage.
//! * [`sim`]: seeded stochastic traces (baseband quadrature, full carrier, field scans).
//! * [`lockin`]: digital lock-in demodulation and Lorentzian resonance fits.
//! * [`spectral`]: Hann-windowed PSD estimation and noise-budget fits.
//! * [`sweep`]: density sweeps, sensitivity-model fits with bootstrap intervals.
//! * [`config`], [`io`]: configuration files and CSV/JSON/binary artifacts.
//!
//! Unit conventions: densities in atoms/cm³, fields in tesla, analysis
//! frequencies in Hz at the API surface. Linewidths and detunings are rates
//! on the γ·B scale and enter the spin dynamics and `L(ω)` directly as s⁻¹.

pub mod budget;
pub mod config;
pub mod error;
pub mod io;
pub mod lockin;
pub mod lsq;
pub mod model;
pub mod sim;
pub mod spectral;
pub mod sweep;

pub use error::{Error, Result};

/// Converts an analysis frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn angular(freq_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * freq_hz
}

//! Linear and Kerr-nonlinear resonator: coherent states, their collapse and
//! revival, and the flux-representation wavefunction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Error, Result};
use crate::numerics::spectral::{complex_power_spectrum, Window};
use crate::qubit::QubitState;

/// Deviation bound for [`gaussian_envelope_check`]: `μ̄τ` must stay below it.
pub const ENVELOPE_REGIME_LIMIT: f64 = 0.3;

/// Tail mass tolerated beyond the Fock truncation.
pub const TAIL_MASS_LIMIT: f64 = 1e-12;

/// Effective Kerr oscillator `H = ω̃ n + μ n² + ζ` seen by the resonator for
/// a given qubit state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOscParams {
    pub state: QubitState,
    pub frequency: f64,
    pub nonlinearity: f64,
    pub offset: f64,
    /// Bare resonator frequency used to scale `μ̄`.
    pub base_frequency: f64,
}

impl NonlinearOscParams {
    /// `μ̄ = μ/ω_r`.
    pub fn dimensionless_nonlinearity(&self) -> f64 {
        self.nonlinearity / self.base_frequency
    }

    /// Classical nonlinearity `μ_cl = μ J/ω_r` at action `J = |α|²`.
    pub fn classical_nonlinearity(&self, alpha: Complex64) -> f64 {
        self.dimensionless_nonlinearity() * alpha.norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherentState {
    pub alpha: Complex64,
}

impl CoherentState {
    pub fn new(alpha: Complex64) -> Self {
        Self { alpha }
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    /// Fock amplitudes `e^{−|α|²/2} αⁿ/√n!` for `n = 0..=n_max`.
    pub fn fock_amplitudes(&self, n_max: usize) -> Vec<Complex64> {
        let a = self.alpha;
        let r = a.norm();
        let theta = a.arg();
        (0..=n_max)
            .map(|n| {
                if r == 0.0 {
                    return Complex64::new(if n == 0 { 1.0 } else { 0.0 }, 0.0);
                }
                let nf = n as f64;
                let log_mag = -0.5 * r * r + nf * r.ln() - 0.5 * ln_factorial(n);
                Complex64::from_polar(log_mag.exp(), nf * theta)
            })
            .collect()
    }

    /// Poisson mass above `n_max`.
    pub fn tail_mass(&self, n_max: usize) -> f64 {
        let kept: f64 = self.fock_amplitudes(n_max).iter().map(|c| c.norm_sqr()).sum();
        (1.0 - kept).max(0.0)
    }
}

/// `ln n!` by direct summation for small `n`, Stirling series beyond.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 64 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

/// Default Fock truncation `⌈n̄ + 10√n̄ + 20⌉`.
pub fn default_truncation(mean_photon_number: f64) -> usize {
    (mean_photon_number + 10.0 * mean_photon_number.sqrt() + 20.0).ceil() as usize
}

/// `⟨α|a(τ)|α⟩` for the Kerr oscillator in units of the renormalized period.
pub fn coherent_amplitude(alpha: Complex64, mu_bar: f64, tau: f64) -> Complex64 {
    let n_bar = alpha.norm_sqr();
    let carrier = Complex64::from_polar(1.0, -(1.0 + mu_bar) * tau);
    let kerr = n_bar * (Complex64::from_polar(1.0, -2.0 * mu_bar * tau) - 1.0);
    alpha * carrier * kerr.exp()
}

/// Relative deviation of `|α(τ)|` from the Gaussian envelope
/// `|α| exp(−τ²/2τ_h²)`.
pub fn gaussian_envelope_check(alpha: Complex64, mu_bar: f64, tau: f64) -> Result<f64> {
    if alpha.norm() == 0.0 {
        return Err(invalid("alpha", "the envelope of the vacuum is undefined"));
    }
    if (mu_bar * tau).abs() >= ENVELOPE_REGIME_LIMIT {
        return Err(Error::Regime(format!(
            "mu_bar * tau = {:.3} is not small (limit {ENVELOPE_REGIME_LIMIT})",
            mu_bar * tau
        )));
    }
    let r = alpha.norm();
    let tau_h = 1.0 / (2.0 * mu_bar * r);
    let envelope = if mu_bar == 0.0 { r } else { r * (-tau * tau / (2.0 * tau_h * tau_h)).exp() };
    Ok((coherent_amplitude(alpha, mu_bar, tau).norm() - envelope).abs() / r)
}

/// Characteristic times in units of `1/ω_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeScales {
    pub classical_period: f64,
    pub departure: f64,
    pub revival: f64,
}

/// Infinite departure and revival times are returned for a linear oscillator.
pub fn time_scales(alpha: Complex64, mu_bar: f64, mu_cl: f64) -> Result<TimeScales> {
    if mu_bar < 0.0 || !mu_bar.is_finite() {
        return Err(invalid("mu_bar", "must be finite and non-negative"));
    }
    if alpha.norm() == 0.0 {
        return Err(invalid("alpha", "must be non-zero"));
    }
    let classical_period = 2.0 * PI / (1.0 + 2.0 * mu_cl);
    if mu_bar == 0.0 {
        return Ok(TimeScales { classical_period, departure: f64::INFINITY, revival: f64::INFINITY });
    }
    Ok(TimeScales {
        classical_period,
        departure: 1.0 / (2.0 * mu_bar * alpha.norm()),
        revival: PI / mu_bar,
    })
}

/// `(Δν_h, Q_h) = (2√2/τ_h, τ_h/2√2)`.
pub fn quantum_quality(tau_h: f64) -> Result<(f64, f64)> {
    if !(tau_h > 0.0) {
        return Err(invalid("tau_h", "must be positive"));
    }
    let width = 2.0 * SQRT_2 / tau_h;
    Ok((width, 1.0 / width))
}

/// Angular-frequency width at `1/e` of the peak magnitude of the spectrum of
/// `α(τ)`, sampled symmetrically over `τ ∈ [−4τ_h, 4τ_h]`.
pub fn spectral_width(alpha: Complex64, mu_bar: f64) -> Result<f64> {
    let ts = time_scales(alpha, mu_bar, 0.0)?;
    if !ts.departure.is_finite() {
        return Err(invalid("mu_bar", "a linear oscillator has no intrinsic width"));
    }
    let span = 4.0 * ts.departure;
    // resolve the carrier and the envelope
    let dt = (0.1f64).min(span / 400.0);
    let n = (2.0 * span / dt).round() as usize + 1;
    let mut samples: Vec<Complex64> =
        (0..n).map(|i| coherent_amplitude(alpha, mu_bar, -span + i as f64 * dt)).collect();
    // zero padding only interpolates the spectrum
    samples.resize((16 * n).next_power_of_two(), Complex64::new(0.0, 0.0));
    let spec = complex_power_spectrum(&samples, dt, Window::Rectangular)?;
    Ok(2.0 * PI * spec.magnitude_width((-1.0f64).exp()))
}

/// Uniform grid over the dimensionless resonator flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl FluxGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(max > min) || points < 3 {
            return Err(Error::Grid(format!("need max > min and >= 3 points, got [{min}, {max}] x {points}")));
        }
        Ok(Self { min, max, points })
    }

    /// Symmetric grid reaching `√2·amplitude + 6` with spacing at most `spacing`.
    pub fn covering(amplitude: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        let half = SQRT_2 * amplitude.abs() + 6.0;
        let points = (2.0 * half / spacing).ceil() as usize + 1;
        Self::new(-half, half, points)
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|i| self.min + i as f64 * h).collect()
    }

    /// Trapezoid rule on the grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let h = self.spacing();
        let inner: f64 = f.iter().sum();
        h * (inner - 0.5 * (f[0] + f[f.len() - 1]))
    }
}

/// Coherent state `u_α(φ_r)` sampled on `grid`, which must reach six flux
/// units beyond the centre `√2 Re α` on both sides.
pub fn flux_wavefunction(alpha: Complex64, grid: &FluxGrid) -> Result<Vec<Complex64>> {
    let centre = SQRT_2 * alpha.re;
    let (lo, hi) = (centre - 6.0, centre + 6.0);
    if grid.min > lo || grid.max < hi {
        return Err(Error::Grid(format!(
            "grid [{}, {}] does not cover [{lo:.3}, {hi:.3}]",
            grid.min, grid.max
        )));
    }
    let pref = PI.powf(-0.25);
    let phase = 0.5 * (alpha * alpha - alpha.norm_sqr());
    let u: Vec<Complex64> = grid
        .values()
        .into_iter()
        .map(|p| {
            let z = Complex64::new(p / SQRT_2, 0.0) - alpha;
            pref * (-(z * z) + phase).exp()
        })
        .collect();
    let dens: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
    let norm = grid.integrate(&dens);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Grid(format!("wavefunction norm {norm:.9} on the grid")));
    }
    Ok(u)
}

/// `(⟨φ_r⟩, ⟨q_r⟩)` of a sampled wavefunction, with `q_r = −i d/dφ_r`
/// evaluated by central differences.
pub fn flux_moments(u: &[Complex64], grid: &FluxGrid) -> (f64, f64) {
    let x = grid.values();
    let h = grid.spacing();
    let n = u.len();
    let dens: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
    let phi_mean = grid.integrate(&dens.iter().zip(&x).map(|(d, p)| d * p).collect::<Vec<_>>());
    let mut q_integrand = vec![0.0; n];
    for i in 1..n - 1 {
        let du = (u[i + 1] - u[i - 1]) / (2.0 * h);
        q_integrand[i] = (u[i].conj() * Complex64::new(0.0, -1.0) * du).re;
    }
    (phi_mean, grid.integrate(&q_integrand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fock_sum(alpha: Complex64, mu_bar: f64, tau: f64) -> Complex64 {
        let n_bar = alpha.norm_sqr();
        let n_max = (n_bar + 12.0 * n_bar.sqrt() + 30.0) as usize;
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..=n_max {
            let w = (-n_bar + n as f64 * n_bar.ln() - ln_factorial(n)).exp();
            acc += w * Complex64::from_polar(1.0, -2.0 * mu_bar * n as f64 * tau);
        }
        alpha * Complex64::from_polar(1.0, -(1.0 + mu_bar) * tau) * acc
    }

    #[test]
    fn ln_factorial_branches_agree() {
        let direct: f64 = (2..=100).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(100) - direct).abs() < 1e-10);
        assert_eq!(ln_factorial(0), 0.0);
    }

    #[test]
    fn amplitude_limits() {
        let a = Complex64::new(3.0, -1.0);
        assert_eq!(coherent_amplitude(a, 0.01, 0.0), a);
        for i in 0..20 {
            let t = 0.7 * i as f64;
            let z = coherent_amplitude(a, 0.0, t);
            assert!((z - a * Complex64::from_polar(1.0, -t)).norm() < 1e-14);
        }
    }

    #[test]
    fn amplitude_matches_fock_sum() {
        let a = Complex64::new(10.0, 0.0);
        for i in 0..=50 {
            let t = i as f64;
            let d = (coherent_amplitude(a, 1e-3, t) - fock_sum(a, 1e-3, t)).norm();
            assert!(d < 1e-10, "tau {t}: {d}");
        }
    }

    #[test]
    fn envelope_at_departure_time() {
        let a = Complex64::new(10.0, 0.0);
        let ts = time_scales(a, 1e-3, 0.0).unwrap();
        assert!(gaussian_envelope_check(a, 1e-3, 0.0).unwrap() == 0.0);
        assert!(gaussian_envelope_check(a, 1e-3, ts.departure).unwrap() < 0.05);
        assert!(gaussian_envelope_check(a, 1.0, 0.5).is_err());
    }

    #[test]
    fn envelope_deviation_grows_with_time() {
        let a = Complex64::new(10.0, 0.0);
        let mut prev = 0.0;
        // the correction ~τ⁴ exp(−τ²/2τ_h²) rises until τ = 2τ_h = 100
        for i in 1..=9 {
            let dev = gaussian_envelope_check(a, 1e-3, 10.0 * i as f64).unwrap();
            assert!(dev > prev, "step {i}");
            prev = dev;
        }
    }

    #[test]
    fn time_scale_examples() {
        let a = Complex64::new(10.0, 0.0);
        let ts = time_scales(a, 0.01, 0.0).unwrap();
        assert!((ts.departure - 5.0).abs() < 1e-12);
        assert!((ts.revival - 100.0 * PI).abs() < 1e-10);
        assert!((ts.revival / ts.departure - 2.0 * PI * 10.0).abs() < 1e-9);
        let lin = time_scales(a, 0.0, 0.0).unwrap();
        assert!(lin.departure.is_infinite() && lin.revival.is_infinite());
    }

    #[test]
    fn quality_examples() {
        let (w, q) = quantum_quality(2.0 * SQRT_2).unwrap();
        assert!((w - 1.0).abs() < 1e-15 && (q - 1.0).abs() < 1e-15);
        let (w2, _) = quantum_quality(4.0 * SQRT_2).unwrap();
        assert!((w2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spectral_width_close_to_prediction() {
        let a = Complex64::new(10.0, 0.0);
        let ts = time_scales(a, 1e-3, 0.0).unwrap();
        let (predicted, _) = quantum_quality(ts.departure).unwrap();
        let measured = spectral_width(a, 1e-3).unwrap();
        let ratio = measured / predicted;
        assert!(ratio > 1.0 / 1.5 && ratio < 1.5, "ratio {ratio}");
    }

    #[test]
    fn revival() {
        let a = Complex64::new(10.0, 0.0);
        let tau_r = PI / 1e-3;
        assert!((coherent_amplitude(a, 1e-3, tau_r).norm() - 10.0).abs() < 1e-6 * 10.0);
    }

    #[test]
    fn coherent_fock_amplitudes_normalized() {
        let s = CoherentState::new(Complex64::new(4.0, 3.0));
        let n_max = default_truncation(s.mean_photon_number());
        let amps = s.fock_amplitudes(n_max);
        let norm: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(s.tail_mass(n_max) < TAIL_MASS_LIMIT);
        let mean: f64 = amps.iter().enumerate().map(|(n, c)| n as f64 * c.norm_sqr()).sum();
        assert!((mean - 25.0).abs() < 1e-9);
    }

    #[test]
    fn vacuum_wavefunction() {
        let g = FluxGrid::covering(0.0, 0.05).unwrap();
        let u = flux_wavefunction(Complex64::new(0.0, 0.0), &g).unwrap();
        for (p, c) in g.values().iter().zip(&u) {
            assert!((c.norm_sqr() - (-p * p).exp() / PI.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn wavefunction_moments() {
        let a = Complex64::new(1.5, -0.7);
        let g = FluxGrid::covering(a.norm(), 0.01).unwrap();
        let u = flux_wavefunction(a, &g).unwrap();
        let (p, q) = flux_moments(&u, &g);
        assert!((p - SQRT_2 * a.re).abs() < 1e-8);
        assert!((q - SQRT_2 * a.im).abs() < 1e-4);
    }

    #[test]
    fn narrow_grid_rejected() {
        let g = FluxGrid::new(-3.0, 3.0, 301).unwrap();
        assert!(matches!(flux_wavefunction(Complex64::new(0.0, 0.0), &g), Err(Error::Grid(_))));
    }

    proptest! {
        #[test]
        fn amplitude_bounded_and_revives(re in -5.0f64..5.0, im in -5.0f64..5.0,
                                         mu in 1e-4f64..0.1, tau in 0.0f64..500.0) {
            let a = Complex64::new(re, im);
            let z = coherent_amplitude(a, mu, tau);
            prop_assert!(z.norm() <= a.norm() * (1.0 + 1e-12));
            let w = coherent_amplitude(a, mu, tau + PI / mu);
            prop_assert!((w.norm() - z.norm()).abs() <= 1e-9 * a.norm().max(1.0));
        }

        #[test]
        fn wavefunction_normalized(re in -8.0f64..8.0, im in -8.0f64..8.0) {
            let a = Complex64::new(re, im);
            let g = FluxGrid::covering(a.norm(), 0.1).unwrap();
            prop_assert!(flux_wavefunction(a, &g).is_ok());
        }
    }
}

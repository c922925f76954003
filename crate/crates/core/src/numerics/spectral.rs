//! Windowed periodograms.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
                .collect(),
        }
    }
}

/// A periodogram. Frequencies are in cycles per unit time.
///
/// For real input the spectrum is one-sided (DC to Nyquist) with the positive
/// and negative halves folded together; for complex input it is two-sided and
/// sorted by frequency. In both cases `power` sums to the mean square of the
/// windowed signal.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub window: Window,
    pub dt: f64,
    pub n_samples: usize,
    windowed: Vec<Complex64>,
}

impl SpectrumEstimate {
    pub fn bin_width(&self) -> f64 {
        1.0 / (self.n_samples as f64 * self.dt)
    }

    pub fn peak_bin(&self) -> usize {
        self.power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
            .0
    }

    /// Frequency of the strongest line: quadratic interpolation of the log
    /// power around the maximum bin, then polished by maximizing the windowed
    /// discrete-time Fourier transform within one bin of that estimate.
    pub fn peak_frequency(&self) -> f64 {
        let k = self.peak_bin();
        let df = self.bin_width();
        let mut f = self.frequencies[k];
        if k > 0 && k + 1 < self.power.len() {
            let (a, b, c) = (
                self.power[k - 1].max(1e-300).ln(),
                self.power[k].max(1e-300).ln(),
                self.power[k + 1].max(1e-300).ln(),
            );
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                f += 0.5 * (a - c) / denom * df;
            }
        }
        golden_max(|x| self.dtft_magnitude(x), f - df, f + df, 1e-7 * df)
    }

    /// Magnitude of the windowed DTFT at frequency `f`.
    pub fn dtft_magnitude(&self, f: f64) -> f64 {
        let w = -2.0 * PI * f * self.dt;
        let step = Complex64::from_polar(1.0, w);
        let mut phase = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &x) in self.windowed.iter().enumerate() {
            acc += x * phase;
            phase *= step;
            if i % 256 == 255 {
                phase = Complex64::from_polar(1.0, w * (i + 1) as f64);
            }
        }
        acc.norm()
    }

    /// Full width at `level` (relative to the peak) of the magnitude
    /// spectrum `sqrt(power)` around the strongest line, with linear
    /// interpolation between bins.
    pub fn magnitude_width(&self, level: f64) -> f64 {
        let mag: Vec<f64> = self.power.iter().map(|p| p.sqrt()).collect();
        let k = self.peak_bin();
        let target = mag[k] * level;
        let crossing = |range: &mut dyn Iterator<Item = usize>| -> f64 {
            let mut prev = k;
            for i in range {
                if mag[i] < target {
                    let (f0, f1) = (self.frequencies[prev], self.frequencies[i]);
                    let (m0, m1) = (mag[prev], mag[i]);
                    return f0 + (target - m0) / (m1 - m0) * (f1 - f0);
                }
                prev = i;
            }
            self.frequencies[prev]
        };
        let right = crossing(&mut (k + 1..mag.len()));
        let left = crossing(&mut (0..k).rev());
        right - left
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn periodogram(mut buf: Vec<Complex64>, window: Window) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = buf.len();
    for (x, w) in buf.iter_mut().zip(window.weights(n)) {
        *x *= w;
    }
    let windowed = buf.clone();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    (buf, windowed)
}

fn check_input(n: usize, dt: f64) -> Result<()> {
    if n < 2 {
        return Err(invalid("samples", "need at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "sampling interval must be positive"));
    }
    Ok(())
}

/// One-sided periodogram of a real, uniformly sampled signal.
pub fn power_spectrum(samples: &[f64], dt: f64, window: Window) -> Result<SpectrumEstimate> {
    check_input(samples.len(), dt)?;
    let n = samples.len();
    let buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let (spec, windowed) = periodogram(buf, window);
    let norm = 1.0 / (n as f64 * n as f64);
    let half = n / 2;
    let mut power = Vec::with_capacity(half + 1);
    for (k, x) in spec.iter().take(half + 1).enumerate() {
        let p = x.norm_sqr() * norm;
        let fold = k != 0 && !(n % 2 == 0 && k == half);
        power.push(if fold { 2.0 * p } else { p });
    }
    let frequencies = (0..=half).map(|k| k as f64 / (n as f64 * dt)).collect();
    Ok(SpectrumEstimate {
        frequencies,
        power,
        window,
        dt,
        n_samples: n,
        windowed,
    })
}

/// Two-sided periodogram of a complex, uniformly sampled signal.
pub fn complex_power_spectrum(
    samples: &[Complex64],
    dt: f64,
    window: Window,
) -> Result<SpectrumEstimate> {
    check_input(samples.len(), dt)?;
    let n = samples.len();
    let (spec, windowed) = periodogram(samples.to_vec(), window);
    let norm = 1.0 / (n as f64 * n as f64);
    let shift = n / 2;
    let order: Vec<usize> = (0..n).map(|i| (i + n - shift) % n).collect();
    let frequencies = order
        .iter()
        .map(|&k| {
            let signed = if k >= n - shift && k != 0 { k as f64 - n as f64 } else { k as f64 };
            signed / (n as f64 * dt)
        })
        .collect();
    let power = order.iter().map(|&k| spec[k].norm_sqr() * norm).collect();
    Ok(SpectrumEstimate {
        frequencies,
        power,
        window,
        dt,
        n_samples: n,
        windowed,
    })
}

/// Check that `times` are uniformly spaced and return the spacing.
pub fn uniform_spacing(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(invalid("times", "need at least two timestamps"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-6 * dt.abs();
    if let Some((i, w)) = times
        .windows(2)
        .enumerate()
        .find(|(_, w)| ((w[1] - w[0]) - dt).abs() > tol)
    {
        return Err(Error::NonUniformSampling(format!(
            "interval {} is {} but the mean spacing is {}",
            i,
            w[1] - w[0],
            dt
        )));
    }
    Ok(dt)
}

/// Periodogram of a real signal given with explicit timestamps.
pub fn power_spectrum_timed(times: &[f64], samples: &[f64], window: Window) -> Result<SpectrumEstimate> {
    if times.len() != samples.len() {
        return Err(invalid("samples", "times and samples differ in length"));
    }
    let dt = uniform_spacing(times)?;
    power_spectrum(samples, dt, window)
}

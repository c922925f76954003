//! Phase and frequency estimators for oscillating time series.

use serde::Serialize;
use std::f64::consts::PI;

use super::fit::fit_line;
use crate::error::{invalid, Error, Result};

/// Result of quadrature demodulation against `cos(ω t)` / `sin(ω t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Demodulation {
    pub in_phase: f64,
    pub quadrature: f64,
    /// Phase such that the signal reads `amplitude * cos(ω t + phase)`.
    pub phase: f64,
    pub amplitude: f64,
    pub periods: f64,
}

fn trapezoid(t: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..t.len())
        .map(|i| 0.5 * (t[i] - t[i - 1]) * (f(i) + f(i - 1)))
        .sum()
}

/// Demodulate `samples` taken at times `t` over the whole span of `t`.
///
/// The window must hold at least five reference periods and an integer number
/// of them (to within 10⁻⁶ of a period).
pub fn demodulate(samples: &[f64], t: &[f64], omega_ref: f64) -> Result<Demodulation> {
    if samples.len() != t.len() || t.len() < 3 {
        return Err(invalid("samples", "need matching sample and time arrays of length >= 3"));
    }
    if !(omega_ref > 0.0) {
        return Err(invalid("omega_ref", "reference frequency must be positive"));
    }
    let span = t[t.len() - 1] - t[0];
    let periods = span * omega_ref / (2.0 * PI);
    if periods < 5.0 - 1e-9 {
        return Err(Error::WindowTooShort(format!(
            "{periods:.3} reference periods, at least 5 required"
        )));
    }
    if (periods - periods.round()).abs() > 1e-6 {
        return Err(Error::WindowTooShort(format!(
            "window spans {periods:.6} periods, not an integer number"
        )));
    }
    let scale = 2.0 / span;
    let i_comp = scale * trapezoid(t, |i| samples[i] * (omega_ref * t[i]).cos());
    let q_comp = scale * trapezoid(t, |i| samples[i] * (omega_ref * t[i]).sin());
    Ok(Demodulation {
        in_phase: i_comp,
        quadrature: q_comp,
        phase: (-q_comp).atan2(i_comp),
        amplitude: i_comp.hypot(q_comp),
        periods,
    })
}

/// Index range `[start, end]` of the last `n_periods` whole reference periods
/// of `t`. The sample grid must contain the window start to within 10⁻⁶ of a
/// period.
pub fn trailing_periods(t: &[f64], omega_ref: f64, n_periods: usize) -> Result<(usize, usize)> {
    let end = t.len().checked_sub(1).ok_or_else(|| invalid("t", "empty time grid"))?;
    let period = 2.0 * PI / omega_ref;
    let target = t[end] - n_periods as f64 * period;
    if target < t[0] - 1e-6 * period {
        return Err(Error::WindowTooShort(format!(
            "record spans less than {n_periods} periods"
        )));
    }
    let start = t.partition_point(|&x| x < target - 1e-6 * period);
    if start >= end || (t[start] - target).abs() > 1e-6 * period {
        return Err(invalid("t", "sample grid does not contain a whole-period window start"));
    }
    Ok((start, end))
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

pub fn unwrap_phases(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &a in raw {
        if let Some(p) = prev {
            let d = a - p;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(a + offset);
        prev = Some(a);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyEstimate {
    /// Angular frequency of the phase-space rotation.
    pub omega: f64,
    pub std_error: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Whole rotations contained in the fit window (0 when the orbit never
    /// completes a turn, in which case the full record is used).
    pub whole_periods: usize,
}

/// Rotation frequency of a conjugate pair `(φ, q)` obeying `φ̇ = ω q`.
///
/// The phase-space angle `atan2(-q, φ)` is unwrapped and fit by a straight
/// line over the longest leading window containing a whole number of turns.
pub fn instantaneous_frequency(phi: &[f64], q: &[f64], t: &[f64]) -> Result<FrequencyEstimate> {
    if phi.len() != q.len() || phi.len() != t.len() || t.len() < 3 {
        return Err(invalid("samples", "need matching phi, q and t arrays of length >= 3"));
    }
    let radius: Vec<f64> = phi.iter().zip(q).map(|(a, b)| a.abs() + b.abs()).collect();
    let max_r = radius.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-9 * max_r.max(f64::MIN_POSITIVE);
    if max_r == 0.0 || radius.iter().any(|&r| r < floor) {
        return Err(Error::AmplitudeCollapse { floor });
    }
    let raw: Vec<f64> = phi.iter().zip(q).map(|(&a, &b)| (-b).atan2(a)).collect();
    let ang = unwrap_phases(&raw);
    let advance = ang[ang.len() - 1] - ang[0];
    let turns = (advance.abs() / (2.0 * PI)).floor() as usize;
    let end = if turns >= 1 {
        let target = turns as f64 * 2.0 * PI;
        ang.iter()
            .position(|&a| (a - ang[0]).abs() >= target - 1e-12)
            .unwrap_or(ang.len() - 1)
    } else {
        ang.len() - 1
    };
    let fit = fit_line(&t[..=end], &ang[..=end])?;
    Ok(FrequencyEstimate {
        omega: fit.slope,
        std_error: fit.slope_std_error,
        t_start: t[0],
        t_end: t[end],
        whole_periods: turns,
    })
}

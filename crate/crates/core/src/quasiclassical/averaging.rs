//! First-order averaging of the resonator equation with the adiabatic spin
//! force eliminated.
//!
//! In `τ = ω_r t` the resonator obeys `φ̈ + φ = ε f(φ)` with
//! `f(φ) = 2√2Λφ/√(ω_R² + 8Λ²φ²)` and `ε = ±√2Λ/ω_r` (`+` for the ground
//! branch). Writing `φ = a cos ψ` gives `ȧ = εP(a)`, `ψ̇ = 1 + εQ(a)`.

use std::f64::consts::{PI, SQRT_2};

use super::elliptic::elliptic_ke_with_complement;
use crate::error::{invalid, Result};
use crate::qubit::QubitState;

/// Amplitude drift `P(a)`; the force is odd in `cos ψ`, so it vanishes.
pub fn amplitude_drift(_lambda: f64, _a: f64, _omega_rabi: f64) -> f64 {
    0.0
}

/// Phase drift `Q(a) = −4√2Λ/(πk²√(ω_R²+8Λ²a²)) · [(k²−1)K(k) + E(k)]`,
/// `k² = 8Λ²a²/(ω_R²+8Λ²a²)`.
pub fn phase_drift(lambda: f64, a: f64, omega_rabi: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid("A", "amplitude must be positive"));
    }
    if !(omega_rabi >= 0.0) {
        return Err(invalid("omega_rabi", "must be non-negative"));
    }
    let drive = 2.0 * SQRT_2 * lambda.abs() * a;
    let root = omega_rabi.hypot(drive);
    if root == 0.0 {
        return Ok(0.0);
    }
    let (k, kp) = (drive / root, omega_rabi / root);
    let bracket = if kp == 0.0 {
        1.0
    } else {
        let (kk, ee) = elliptic_ke_with_complement(k, kp);
        // small k: E − k′²K ≈ πk²/4, kept accurate by the series
        if k < 1e-4 {
            PI * k * k / 4.0 * (1.0 + k * k / 8.0)
        } else {
            ee - kp * kp * kk
        }
    };
    let k2 = k * k;
    if k2 == 0.0 {
        return Ok(-SQRT_2 * lambda / omega_rabi);
    }
    Ok(-4.0 * SQRT_2 * lambda / (PI * k2 * root) * bracket)
}

/// Averaged shift `δω = ε Q(A) ω_r` of the resonator frequency.
pub fn averaged_frequency_shift(lambda: f64, a: f64, omega_rabi: f64, omega_r: f64, state: QubitState) -> Result<f64> {
    if !(omega_r > 0.0) {
        return Err(invalid("omega_r", "must be positive"));
    }
    let eps = state.sign() * SQRT_2 * lambda / omega_r;
    Ok(eps * phase_drift(lambda, a, omega_rabi)? * omega_r)
}

/// Leading estimate `δω = ∓Λ/A` from a square-wave spin reversal.
pub fn leading_frequency_shift(lambda: f64, a: f64, state: QubitState) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid("A", "amplitude must be positive"));
    }
    Ok(-state.sign() * lambda.abs() / a)
}

/// `k → 1` limit of the averaged shift, `∓2√2Λ/(πA)`.
pub fn limiting_frequency_shift(lambda: f64, a: f64, state: QubitState) -> Result<f64> {
    Ok(2.0 * SQRT_2 / PI * leading_frequency_shift(lambda, a, state)?)
}

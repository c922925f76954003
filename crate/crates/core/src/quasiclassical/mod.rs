//! Quasiclassical spin–resonator dynamics in the rotating frame.
//!
//! State layout for the integrator: `[S_x, S_y, S_z, φ_r, q_r]`.

pub mod averaging;
pub mod elliptic;
pub mod readout;

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{invalid, Error, Result};
use crate::numerics::ode::{self, OdeOptions, OdeSystem, Trajectory};

pub use averaging::{averaged_frequency_shift, leading_frequency_shift, limiting_frequency_shift};
pub use elliptic::elliptic_ke;
pub use readout::{
    adiabaticity_margin, measured_adiabaticity, run_frequency_readout, run_phase_readout, FrequencyReadout,
    FrequencyReadoutConfig, PhaseReadout, PhaseReadoutConfig, RegimeMargin,
};

/// Magnitude of the classical spin.
pub const SPIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpinVector {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Angle to the direction of `b` (radians).
    pub fn angle_to(&self, b: &EffectiveField) -> f64 {
        let dot = self.x * b.x + self.y * b.y + self.z * b.z;
        let cross = [
            self.y * b.z - self.z * b.y,
            self.z * b.x - self.x * b.z,
            self.x * b.y - self.y * b.x,
        ];
        let c = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        c.atan2(dot)
    }

    pub fn angle_between(&self, other: &SpinVector) -> f64 {
        self.angle_to(&EffectiveField { x: other.x, y: other.y, z: other.z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorPoint {
    pub phi: f64,
    pub q: f64,
}

/// Rotating-frame field acting on the spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveField {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EffectiveField {
    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveMode {
    /// Frequency-modulated ac drive with depth `Ω > 0`.
    FmDrive,
    /// No modulation; reversals come from resonator oscillations of amplitude `A`.
    ResonatorDrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalDrive {
    pub modulation_depth: f64,
    pub resonator_frequency: f64,
    pub rabi_frequency: f64,
    pub mode: DriveMode,
}

impl ReversalDrive {
    pub fn fm(modulation_depth: f64, resonator_frequency: f64, rabi_frequency: f64) -> Result<Self> {
        if !(modulation_depth > 0.0) {
            return Err(invalid("omega_mod", "fm-drive requires a positive modulation depth"));
        }
        Self::checked(modulation_depth, resonator_frequency, rabi_frequency, DriveMode::FmDrive)
    }

    pub fn resonator(resonator_frequency: f64, rabi_frequency: f64) -> Result<Self> {
        Self::checked(0.0, resonator_frequency, rabi_frequency, DriveMode::ResonatorDrive)
    }

    fn checked(omega_mod: f64, omega_r: f64, omega_rabi: f64, mode: DriveMode) -> Result<Self> {
        if !(omega_r > 0.0) {
            return Err(invalid("omega_r", "must be positive"));
        }
        if !(omega_rabi >= 0.0) || !omega_rabi.is_finite() {
            return Err(invalid("omega_rabi", "must be finite and non-negative"));
        }
        Ok(Self { modulation_depth: omega_mod, resonator_frequency: omega_r, rabi_frequency: omega_rabi, mode })
    }
}

/// `B = (0, ω_R, Ω cos(ω_r t) − 2√2Λφ_r)`.
pub fn effective_field(t: f64, phi: f64, drive: &ReversalDrive, lambda: f64) -> EffectiveField {
    EffectiveField {
        x: 0.0,
        y: drive.rabi_frequency,
        z: drive.modulation_depth * (drive.resonator_frequency * t).cos() - 2.0 * SQRT_2 * lambda * phi,
    }
}

/// Spin (anti)aligned with `b`: `S = ±(1/2) B/|B|`, `sign = +1` for the ground branch.
pub fn adiabatic_spin(b: &EffectiveField, sign: f64) -> Result<SpinVector> {
    let m = b.magnitude();
    if !(m > 0.0) {
        return Err(invalid("field", "zero effective field has no direction"));
    }
    let s = sign.signum() * SPIN / m;
    Ok(SpinVector { x: s * b.x, y: s * b.y, z: s * b.z })
}

/// Equilibrium flux offset `−√2λ′/ω_r` removed by shifting the origin of `φ_r`.
pub fn equilibrium_shift(drive_coupling: f64, omega_r: f64) -> f64 {
    -SQRT_2 * drive_coupling / omega_r
}

/// Right-hand side of the coupled equations
/// `Ṡ = S × B`, `φ̇_r = ω_r q_r`, `q̇_r = −ω_r φ_r − 2√2Λ S_z`.
#[derive(Debug, Clone, Copy)]
pub struct SpinResonator {
    pub drive: ReversalDrive,
    pub coupling: f64,
}

impl SpinResonator {
    pub fn field(&self, t: f64, y: &[f64]) -> EffectiveField {
        effective_field(t, y[3], &self.drive, self.coupling)
    }
}

impl OdeSystem for SpinResonator {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let b = self.field(t, y);
        let (sx, sy, sz) = (y[0], y[1], y[2]);
        dy[0] = sy * b.z - sz * b.y;
        dy[1] = sz * b.x - sx * b.z;
        dy[2] = sx * b.y - sy * b.x;
        let w = self.drive.resonator_frequency;
        dy[3] = w * y[4];
        dy[4] = -w * y[3] - 2.0 * SQRT_2 * self.coupling * sz;
    }
}

pub fn pack_state(s: &SpinVector, r: &ResonatorPoint) -> [f64; 5] {
    [s.x, s.y, s.z, r.phi, r.q]
}

pub fn unpack_state(y: &[f64]) -> (SpinVector, ResonatorPoint) {
    (SpinVector { x: y[0], y: y[1], z: y[2] }, ResonatorPoint { phi: y[3], q: y[4] })
}

/// Integrate the spin–resonator system with relative tolerance `tol`
/// (absolute tolerance `tol·10⁻³`), sampling at `samples`.
///
/// After every accepted step the spin is rescaled to its initial norm. The
/// per-step norm defect removed this way must stay below `10·tol`.
pub fn integrate(
    system: &mut SpinResonator,
    state0: &[f64; 5],
    t_span: (f64, f64),
    samples: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let opts = OdeOptions::with_tolerances(tol, tol * 1e-3);
    let s0 = (state0[0].powi(2) + state0[1].powi(2) + state0[2].powi(2)).sqrt();
    let mut projected = NormProjected { inner: system, norm: s0, max_defect: 0.0 };
    let traj = ode::solve(&mut projected, state0, t_span.0, t_span.1, samples, &opts)?;
    let defect = projected.max_defect.max(spin_norm_drift(&traj, s0));
    if defect > 10.0 * tol {
        return Err(Error::Regime(format!("spin norm drifted by {defect:.3e} in one step (> 10 tol)")));
    }
    Ok(traj)
}

struct NormProjected<'a> {
    inner: &'a mut SpinResonator,
    norm: f64,
    max_defect: f64,
}

impl OdeSystem for NormProjected<'_> {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.inner.rhs(t, y, dy)
    }

    fn after_step(&mut self, t: f64, y: &mut [f64]) -> Result<bool> {
        let n = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        if !n.is_finite() {
            return Err(Error::NonFinite { t });
        }
        self.max_defect = self.max_defect.max((n - self.norm).abs());
        if n > 0.0 && n != self.norm {
            let r = self.norm / n;
            y[..3].iter_mut().for_each(|v| *v *= r);
            return Ok(true);
        }
        Ok(false)
    }
}

/// Largest `| |S(t)| − s0 |` over the samples.
pub fn spin_norm_drift(traj: &Trajectory, s0: f64) -> f64 {
    traj.iter()
        .map(|(_, y)| ((y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() - s0).abs())
        .fold(0.0, f64::max)
}

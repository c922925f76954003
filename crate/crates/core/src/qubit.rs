//! Josephson-junction potentials and the two-level reduction of the rf-SQUID.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Qubit branch label. The ground state is spin-up (`S_z = +1/2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QubitState {
    Ground,
    Excited,
}

impl QubitState {
    /// `+1` for the ground state, `−1` for the excited state.
    pub fn sign(self) -> f64 {
        match self {
            QubitState::Ground => 1.0,
            QubitState::Excited => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QubitState::Ground => "ground",
            QubitState::Excited => "excited",
        }
    }
}

/// Below this `|cos δ|` the junction inductance is treated as singular.
pub const INDUCTANCE_COS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionParams {
    pub critical_current: f64,
    pub capacitance: f64,
    pub flux_quantum: f64,
}

impl JunctionParams {
    pub fn new(critical_current: f64, capacitance: f64, flux_quantum: f64) -> Result<Self> {
        if !(critical_current > 0.0) {
            return Err(invalid("critical_current", "must be positive"));
        }
        if !(capacitance > 0.0) {
            return Err(invalid("capacitance", "must be positive"));
        }
        if !(flux_quantum > 0.0) {
            return Err(invalid("flux_quantum", "must be positive"));
        }
        Ok(Self { critical_current, capacitance, flux_quantum })
    }

    pub fn josephson_energy(&self) -> f64 {
        self.critical_current * self.flux_quantum / (2.0 * PI)
    }
}

/// Dimensionless quartic description of the rf-SQUID double well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleWellParams {
    pub inductive_energy: f64,
    pub chi: f64,
    pub bias: f64,
    pub self_inductance: f64,
}

impl DoubleWellParams {
    pub fn new(inductive_energy: f64, chi: f64, bias: f64, self_inductance: f64) -> Result<Self> {
        if !(inductive_energy > 0.0) {
            return Err(invalid("inductive_energy", "must be positive"));
        }
        if !(chi > 0.0) {
            return Err(invalid("chi", "must be positive"));
        }
        if !bias.is_finite() || !(self_inductance > 0.0) {
            return Err(invalid("self_inductance", "must be positive with a finite bias"));
        }
        Ok(Self { inductive_energy, chi, bias, self_inductance })
    }

    /// Build from circuit quantities: `E_L = (φ0/2π)²/L`, `χ = E_J/E_L − 1`,
    /// `f = π(2φ_e/φ0 − 1)`.
    pub fn from_circuit(e_j: f64, l_self: f64, phi_e: f64, phi0: f64) -> Result<Self> {
        if !(l_self > 0.0) || !(phi0 > 0.0) {
            return Err(invalid("self_inductance", "inductance and flux quantum must be positive"));
        }
        let e_l = (phi0 / (2.0 * PI)).powi(2) / l_self;
        Self::new(e_l, e_j / e_l - 1.0, PI * (2.0 * phi_e / phi0 - 1.0), l_self)
    }

    /// Minima of the untilted quartic, `±√(6χ/(1+χ))`.
    pub fn quartic_minimum(&self) -> f64 {
        (6.0 * self.chi / (1.0 + self.chi)).sqrt()
    }

    /// Height of the central maximum above the untilted quartic minima,
    /// `(3/2)E_L χ²/(1+χ)`.
    pub fn quartic_barrier(&self) -> f64 {
        1.5 * self.inductive_energy * self.chi * self.chi / (1.0 + self.chi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl TwoLevelParams {
    /// Δ is stored as its magnitude.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || !delta.is_finite() {
            return Err(invalid("epsilon", "non-finite two-level parameters"));
        }
        if epsilon == 0.0 && delta == 0.0 {
            return Err(invalid("epsilon", "epsilon = delta = 0 gives a degenerate qubit"));
        }
        Ok(Self { epsilon, delta: delta.abs() })
    }

    /// Qubit frequency `ω_q = √(ε²+Δ²)` (ħ = 1).
    pub fn gap(&self) -> f64 {
        self.epsilon.hypot(self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub drive_coupling: f64,
    pub raw_coupling: f64,
    pub cos_alpha: f64,
    pub sin_alpha: f64,
}

impl CouplingParams {
    pub fn new(raw_coupling: f64, drive_coupling: f64, two_level: &TwoLevelParams) -> Result<Self> {
        let (cos_alpha, sin_alpha) = mixing_angle(two_level.epsilon, two_level.delta)?;
        Ok(Self { drive_coupling, raw_coupling, cos_alpha, sin_alpha })
    }

    /// `Λ = λ cos α`.
    pub fn effective_coupling(&self) -> f64 {
        self.raw_coupling * self.cos_alpha
    }
}

/// `U(δ) = −E_J (I/I_c · δ + cos δ)`.
pub fn washboard_potential(delta: f64, bias_ratio: f64, e_j: f64) -> f64 {
    -e_j * (bias_ratio * delta + delta.cos())
}

/// `L_J / cos δ`, rejected where `|cos δ|` reaches the floor `10⁻⁹`.
pub fn josephson_inductance(delta: f64, l_j: f64) -> Result<f64> {
    let c = delta.cos();
    // rounding of δ near π/2 is worth ~1e-16 in cos δ; keep the boundary closed
    if c.abs() <= INDUCTANCE_COS_FLOOR * (1.0 + 1e-6) {
        return Err(Error::Singular(format!(
            "josephson inductance diverges at delta = {delta} (|cos delta| = {:.3e})",
            c.abs()
        )));
    }
    Ok(l_j / c)
}

/// `U(φ) = −E_J cos(2πφ/φ0) + (φ − φ_e)²/2L`.
pub fn rf_squid_potential(phi: f64, e_j: f64, l_self: f64, phi_e: f64, phi0: f64) -> f64 {
    -e_j * (2.0 * PI * phi / phi0).cos() + (phi - phi_e).powi(2) / (2.0 * l_self)
}

/// Quartic expansion of the rf-SQUID potential about `φ = φ0/2`.
pub fn quartic_potential(dt: f64, p: &DoubleWellParams) -> f64 {
    let chi = p.chi;
    let d2 = dt * dt;
    p.inductive_energy * (1.0 + chi - 0.5 * chi * d2 + (1.0 + chi) * d2 * d2 / 24.0 - dt * p.bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoLevelEigensystem {
    pub ground_energy: f64,
    pub excited_energy: f64,
    /// Components in the `(|l⟩, |r⟩)` basis.
    pub ground: [f64; 2],
    pub excited: [f64; 2],
}

/// Eigenpairs of `H = −(εσ_z + Δσ_x)/2`.
pub fn two_level_eigensystem(p: &TwoLevelParams) -> Result<TwoLevelEigensystem> {
    let g = p.gap();
    if !(g > 0.0) {
        return Err(invalid("epsilon", "degenerate two-level system"));
    }
    let a = ((g + p.epsilon) / (2.0 * g)).max(0.0).sqrt();
    let b = ((g - p.epsilon) / (2.0 * g)).max(0.0).sqrt();
    Ok(TwoLevelEigensystem {
        ground_energy: -0.5 * g,
        excited_energy: 0.5 * g,
        ground: [a, b],
        excited: [b, -a],
    })
}

/// `(cos α, sin α) = (ε, |Δ|)/√(ε²+Δ²)`.
pub fn mixing_angle(epsilon: f64, delta: f64) -> Result<(f64, f64)> {
    let g = epsilon.hypot(delta);
    if !(g > 0.0) {
        return Err(invalid("epsilon", "degenerate two-level system"));
    }
    Ok((epsilon / g, delta.abs() / g))
}

/// Inductive-coupling constants `(λ, λ′)` with ħ = 1.
#[allow(clippy::too_many_arguments)]
pub fn inductive_coupling(
    mutual: f64,
    l_res: f64,
    l1: f64,
    c: f64,
    omega_r: f64,
    phi_ll: f64,
    phi_rr: f64,
) -> Result<(f64, f64)> {
    for (name, v) in [("L", l_res), ("L1", l1), ("C", c), ("omega_r", omega_r)] {
        if !(v > 0.0) {
            return Err(invalid(name, "must be positive"));
        }
    }
    let contrast = phi_ll - phi_rr;
    if contrast == 0.0 {
        return Err(invalid("phi_ll", "zero flux contrast between the wells"));
    }
    let lambda = mutual / (2.0 * l_res * l1) * (1.0 / (2.0 * omega_r * c)).sqrt() * contrast;
    Ok((lambda, lambda * (phi_ll + phi_rr) / contrast))
}

/// Fold the `L1` branch into the junction bias: `(φ_e′, L_J′)`.
pub fn effective_bias(phi_e: f64, l1: f64, l_j: f64) -> Result<(f64, f64)> {
    if !(l1 > 0.0) || !(l_j > 0.0) {
        return Err(invalid("L1", "inductances must be positive"));
    }
    if l1.is_infinite() {
        return Ok((phi_e, l_j));
    }
    Ok((phi_e * l1 / (l1 + l_j), l1 * l_j / (l1 + l_j)))
}

//! Spinor dynamics of the spin ⊗ resonator system in a truncated Fock basis.
//!
//! Amplitudes are stored as `s·(n_max+1) + n`, with `s = 0` for ↑ (`S_z = +1/2`).

pub mod branches;
pub mod propagator;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Error, Result};
use crate::quasiclassical::{EffectiveField, SpinVector};
use crate::resonator::{default_truncation, CoherentState};

pub use branches::{decompose_branches, flux_density, BranchDecomposition, FluxDensity};
pub use propagator::{evolve, propagate_dense, EvolveOptions, Evolution};

/// Tail mass allowed in the top tenth of the Fock levels.
pub const TAIL_LIMIT: f64 = 1e-6;
/// Allowed drift of the total norm.
pub const NORM_TOLERANCE: f64 = 1e-8;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Parameters of the rotating-frame Hamiltonian
/// `H = −Ω cos(ω_r t) S_z + (ω_r/2)(φ̂² + q̂²) − ω_R S_y + √2(2ΛS_z + λ′)φ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumParams {
    pub omega_r: f64,
    pub omega_rabi: f64,
    pub omega_mod: f64,
    pub coupling: f64,
    pub drive_coupling: f64,
}

impl QuantumParams {
    pub fn new(omega_r: f64, omega_rabi: f64, omega_mod: f64, coupling: f64) -> Result<Self> {
        if !(omega_r > 0.0) {
            return Err(invalid("omega_r", "must be positive"));
        }
        if ![omega_rabi, omega_mod, coupling].iter().all(|v| v.is_finite()) {
            return Err(invalid("params", "must be finite"));
        }
        Ok(Self { omega_r, omega_rabi, omega_mod, coupling, drive_coupling: 0.0 })
    }

    /// Field seen by the spin at flux `phi`.
    pub fn field(&self, t: f64, phi: f64) -> EffectiveField {
        EffectiveField {
            x: 0.0,
            y: self.omega_rabi,
            z: self.omega_mod * (self.omega_r * t).cos() - 2.0 * SQRT_2 * self.coupling * phi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpinorState {
    pub n_max: usize,
    pub amplitudes: Vec<Complex64>,
}

impl SpinorState {
    pub fn zeros(n_max: usize) -> Self {
        Self { n_max, amplitudes: vec![Complex64::new(0.0, 0.0); 2 * (n_max + 1)] }
    }

    pub fn levels(&self) -> usize {
        self.n_max + 1
    }

    pub fn up(&self) -> &[Complex64] {
        &self.amplitudes[..self.levels()]
    }

    pub fn down(&self) -> &[Complex64] {
        &self.amplitudes[self.levels()..]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `(‖ψ↑‖², ‖ψ↓‖²)`.
    pub fn component_norms(&self) -> [f64; 2] {
        let f = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum();
        [f(self.up()), f(self.down())]
    }

    /// Probability in the top tenth of the Fock levels.
    pub fn tail_mass(&self) -> f64 {
        let m = self.levels();
        let start = m - m.div_ceil(10);
        (start..m).map(|n| self.amplitudes[n].norm_sqr() + self.amplitudes[m + n].norm_sqr()).sum()
    }

    fn fock_sum(&self, f: impl Fn(usize, Complex64, Complex64, Option<Complex64>) -> Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for comp in [self.up(), self.down()] {
            for n in 0..self.levels() {
                acc += f(n, comp[n], comp[n].conj(), comp.get(n + 1).copied());
            }
        }
        acc
    }

    /// `⟨φ̂⟩ = √2 Re Σ c̄_n c_{n+1} √(n+1)`.
    pub fn expect_phi(&self) -> f64 {
        let s = self.fock_sum(|n, _, cb, next| next.map_or(Complex64::new(0.0, 0.0), |c1| cb * c1 * ((n + 1) as f64).sqrt()));
        SQRT_2 * s.re
    }

    /// `⟨q̂⟩ = √2 Im Σ c̄_n c_{n+1} √(n+1)`.
    pub fn expect_q(&self) -> f64 {
        let s = self.fock_sum(|n, _, cb, next| next.map_or(Complex64::new(0.0, 0.0), |c1| cb * c1 * ((n + 1) as f64).sqrt()));
        SQRT_2 * s.im
    }

    pub fn expect_n(&self) -> f64 {
        self.fock_sum(|n, c, cb, _| cb * c * n as f64).re
    }

    /// `⟨φ̂²⟩` in the truncated basis.
    pub fn expect_phi2(&self) -> f64 {
        let x = flux_matrix(self.n_max);
        let mut acc = 0.0;
        for comp in [self.up(), self.down()] {
            let v: Vec<Complex64> = (0..self.levels())
                .map(|i| (0..self.levels()).map(|j| comp[j] * x[(i, j)]).sum())
                .collect();
            acc += v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        acc
    }

    pub fn spin_expectation(&self) -> SpinVector {
        let r = self.reduced_spin();
        SpinVector { x: r[0][1].re, y: -r[0][1].im, z: 0.5 * (r[0][0].re - r[1][1].re) }
    }

    /// Reduced spin density matrix `ρ_{ss′} = Σ_n c_{s,n} c̄_{s′,n}`.
    pub fn reduced_spin(&self) -> [[Complex64; 2]; 2] {
        let (u, d) = (self.up(), self.down());
        let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>();
        [[dot(u, u), dot(u, d)], [dot(d, u), dot(d, d)]]
    }
}

/// Coherent resonator state `|α⟩ ⊗ (c0|↑⟩ + c1|↓⟩)`, renormalised after truncation.
pub fn init_spinor(alpha: Complex64, c0: Complex64, c1: Complex64, n_max: usize) -> Result<SpinorState> {
    let s = c0.norm_sqr() + c1.norm_sqr();
    if (s - 1.0).abs() > 1e-10 {
        return Err(invalid("spinor", format!("|c0|^2 + |c1|^2 = {s}, expected 1")));
    }
    let coh = CoherentState::new(alpha).fock_amplitudes(n_max);
    let norm = coh.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut st = SpinorState::zeros(n_max);
    let m = n_max + 1;
    for (n, c) in coh.iter().enumerate() {
        st.amplitudes[n] = c0 * c / norm;
        st.amplitudes[m + n] = c1 * c / norm;
    }
    let tail = st.tail_mass();
    if tail > TAIL_LIMIT {
        return Err(Error::Truncation { tail_mass: tail, limit: TAIL_LIMIT, t: 0.0 });
    }
    Ok(st)
}

/// Truncation for a run of length `t_end` starting from `|α⟩`:
/// the larger of `1.5(√2|α| + Λt_end)²/2 + 20` and the coherent-state default.
pub fn recommended_n_max(alpha: Complex64, coupling: f64, t_end: f64) -> usize {
    let reach = SQRT_2 * alpha.norm() + coupling.abs() * t_end;
    let growth = (1.5 * reach * reach / 2.0 + 20.0).ceil() as usize;
    growth.max(default_truncation(alpha.norm_sqr()))
}

/// `φ̂ = (a + a†)/√2` on levels `0..=n_max`.
pub fn flux_matrix(n_max: usize) -> DMatrix<f64> {
    let m = n_max + 1;
    let mut x = DMatrix::zeros(m, m);
    for n in 0..n_max {
        let v = ((n + 1) as f64 / 2.0).sqrt();
        x[(n, n + 1)] = v;
        x[(n + 1, n)] = v;
    }
    x
}

/// `q̂ = i(a† − a)/√2` on levels `0..=n_max`.
pub fn charge_matrix(n_max: usize) -> DMatrix<Complex64> {
    let m = n_max + 1;
    let mut q = DMatrix::zeros(m, m);
    for n in 0..n_max {
        let v = ((n + 1) as f64 / 2.0).sqrt();
        q[(n + 1, n)] = I * v;
        q[(n, n + 1)] = -I * v;
    }
    q
}

/// Dense `H(t)` on the `2(n_max+1)`-dimensional spinor space.
pub fn build_hamiltonian(t: f64, p: &QuantumParams, n_max: usize) -> DMatrix<Complex64> {
    let m = n_max + 1;
    let x = flux_matrix(n_max);
    let drive = p.omega_mod * (p.omega_r * t).cos();
    let mut h = DMatrix::zeros(2 * m, 2 * m);
    for (s, sz) in [(0usize, 0.5), (1, -0.5)] {
        let off = s * m;
        for i in 0..m {
            h[(off + i, off + i)] = Complex64::from(-drive * sz + p.omega_r * (i as f64 + 0.5));
            for j in 0..m {
                if x[(i, j)] != 0.0 {
                    h[(off + i, off + j)] += SQRT_2 * (2.0 * p.coupling * sz + p.drive_coupling) * x[(i, j)];
                }
            }
        }
    }
    // −ω_R S_y: ⟨↑|S_y|↓⟩ = −i/2
    for n in 0..m {
        h[(n, m + n)] = I * 0.5 * p.omega_rabi;
        h[(m + n, n)] = -I * 0.5 * p.omega_rabi;
    }
    h
}

/// `H(t)ψ` without forming the matrix.
pub fn apply_hamiltonian(t: f64, p: &QuantumParams, psi: &SpinorState) -> Vec<Complex64> {
    let m = psi.levels();
    let drive = p.omega_mod * (p.omega_r * t).cos();
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * m];
    for (s, sz) in [(0usize, 0.5), (1, -0.5)] {
        let off = s * m;
        let other = (1 - s) * m;
        let g = SQRT_2 * (2.0 * p.coupling * sz + p.drive_coupling);
        let flip = if s == 0 { I * 0.5 * p.omega_rabi } else { -I * 0.5 * p.omega_rabi };
        for n in 0..m {
            let c = psi.amplitudes[off + n];
            let mut v = c * (-drive * sz + p.omega_r * (n as f64 + 0.5));
            if n > 0 {
                v += g * (n as f64 / 2.0).sqrt() * psi.amplitudes[off + n - 1];
            }
            if n + 1 < m {
                v += g * ((n + 1) as f64 / 2.0).sqrt() * psi.amplitudes[off + n + 1];
            }
            out[off + n] = v + flip * psi.amplitudes[other + n];
        }
    }
    out
}

pub fn energy(t: f64, p: &QuantumParams, psi: &SpinorState) -> f64 {
    let h = apply_hamiltonian(t, p, psi);
    psi.amplitudes.iter().zip(&h).map(|(c, hc)| (c.conj() * hc).re).sum()
}

/// Spinor `χ` with `(B̂·S)χ = (sign/2)χ`.
pub fn field_eigenspinor(b: &EffectiveField, sign: f64) -> Result<[Complex64; 2]> {
    let r = b.magnitude();
    if !(r > 0.0) {
        return Err(invalid("field", "zero effective field has no eigenbasis"));
    }
    let theta = (b.x.hypot(b.y)).atan2(b.z);
    let az = b.y.atan2(b.x);
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    Ok(if sign >= 0.0 {
        [Complex64::new(c, 0.0), Complex64::from_polar(s, az)]
    } else {
        [-Complex64::from_polar(s, -az), Complex64::new(c, 0.0)]
    })
}

/// Oscillator eigenfunctions `h_0..h_{n_max}` at `x`, by the three-term
/// recurrence carried with a separate exponent so that the Gaussian factor
/// cannot underflow far from the origin.
pub fn hermite_functions(n_max: usize, x: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n_max + 1];
    let mut log_scale = -0.5 * x * x - 0.25 * PI.ln();
    let (mut prev, mut cur) = (0.0f64, 1.0f64);
    out[0] = log_scale.exp();
    for n in 0..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e150 {
            cur /= mag;
            prev /= mag;
            log_scale += mag.ln();
        }
        out[n + 1] = cur * log_scale.exp();
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Grid(format!("oscillator recurrence overflowed at flux {x}")));
    }
    Ok(out)
}

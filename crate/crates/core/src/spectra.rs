//! Perturbative levels of the qubit–resonator system with transverse
//! coupling `iλσ_y(a† − a)`, and an exact-diagonalization oracle.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::numerics::fit::fit_polynomial;
use crate::qubit::QubitState;
use crate::resonator::NonlinearOscParams;

/// Relative floor on `|ω_q − ω_r|/ω_r` below which perturbation theory is refused.
pub const DEGENERACY_FLOOR: f64 = 1e-6;

/// Default number of photon levels fitted in [`effective_nonlinear_params`].
pub const DEFAULT_N_FIT: usize = 6;

/// Minimum eigenvector overlap accepted while tracking labels.
pub const LABEL_OVERLAP_FLOOR: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LevelIndex {
    pub state: QubitState,
    pub n: usize,
}

impl LevelIndex {
    pub fn new(state: QubitState, n: usize) -> Self {
        Self { state, n }
    }
}

fn check_frequencies(omega_q: f64, omega_r: f64) -> Result<()> {
    if !(omega_q > 0.0) || !(omega_r > 0.0) {
        return Err(invalid("omega_q", "qubit and resonator frequencies must be positive"));
    }
    let gap = (omega_q - omega_r).abs();
    let floor = DEGENERACY_FLOOR * omega_r;
    if gap < floor {
        return Err(Error::Degenerate { gap, floor });
    }
    Ok(())
}

/// `∓ω_q/2 + ω_r(n + 1/2)`, lower sign for the ground state.
pub fn unperturbed_level(idx: LevelIndex, omega_q: f64, omega_r: f64) -> f64 {
    -idx.state.sign() * omega_q / 2.0 + omega_r * (idx.n as f64 + 0.5)
}

pub fn second_order_shift(idx: LevelIndex, lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    check_frequencies(omega_q, omega_r)?;
    let n = idx.n as f64;
    let l2 = lambda * lambda;
    let (sum, diff) = (omega_q + omega_r, omega_q - omega_r);
    Ok(match idx.state {
        QubitState::Ground => -l2 * ((n + 1.0) / sum + n / diff),
        QubitState::Excited => l2 * ((n + 1.0) / diff + n / sum),
    })
}

/// Change of the resonator transition frequency for the ground state,
/// `−2λ²ω_q/(ω_q² − ω_r²)`; the excited state sees the opposite sign.
pub fn dispersive_shift(lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    check_frequencies(omega_q, omega_r)?;
    Ok(-2.0 * lambda * lambda * omega_q / (omega_q * omega_q - omega_r * omega_r))
}

/// Second-order change of the qubit transition frequency with the resonator
/// empty, `2λ²ω_q/(ω_q² − ω_r²)`.
pub fn lamb_shift(lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    Ok(-dispersive_shift(lambda, omega_q, omega_r)?)
}

pub fn fourth_order_shift(idx: LevelIndex, lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    check_frequencies(omega_q, omega_r)?;
    let n = idx.n as f64;
    let l4 = lambda.powi(4);
    let (s, d) = (omega_q + omega_r, omega_q - omega_r);
    let den = omega_q * omega_q - omega_r * omega_r;
    Ok(match idx.state {
        QubitState::Ground => {
            l4 * (d * (n + 1.0) + s * n) * (d * d * (n + 1.0) + s * s * n) / den.powi(3)
                + l4 * (-d * d * (n + 1.0) * (n + 2.0) + s * s * n * (n - 1.0)) / (2.0 * omega_r * den * den)
        }
        QubitState::Excited => {
            -l4 * (s * (n + 1.0) + d * n) * (s * s * (n + 1.0) + d * d * n) / den.powi(3)
                + l4 * (-s * s * (n + 1.0) * (n + 2.0) + d * d * n * (n - 1.0)) / (2.0 * omega_r * den * den)
        }
    })
}

/// Quadratic-in-`n` fourth-order shift valid close to resonance.
pub fn fourth_order_near_resonant(idx: LevelIndex, lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    check_frequencies(omega_q, omega_r)?;
    let n = idx.n as f64;
    let base = lambda.powi(4) * (omega_q + omega_r).powi(3) / (omega_q * omega_q - omega_r * omega_r).powi(3);
    Ok(match idx.state {
        QubitState::Ground => base * n * n,
        QubitState::Excited => -base * (n + 1.0) * (n + 1.0),
    })
}

/// Quadratic-in-`n` fourth-order shift for `ω_q ≫ ω_r`.
pub fn fourth_order_far_detuned(idx: LevelIndex, lambda: f64, omega_q: f64, omega_r: f64) -> Result<f64> {
    check_frequencies(omega_q, omega_r)?;
    let n = idx.n as f64;
    Ok(idx.state.sign() * 6.0 * lambda.powi(4) * n * n / omega_q.powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub state: QubitState,
    pub n: usize,
    pub e0: f64,
    pub e2: f64,
    pub e4: f64,
    pub e_total: f64,
    pub e_exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
}

impl SpectrumTable {
    /// Perturbative levels for `n = 0..=n_levels` of both qubit states, with
    /// the exact oracle column filled when `n_max_exact` is given.
    pub fn build(
        lambda: f64,
        omega_q: f64,
        omega_r: f64,
        n_levels: usize,
        n_max_exact: Option<usize>,
    ) -> Result<Self> {
        let exact = match n_max_exact {
            Some(n_max) => Some(exact_diagonalize(omega_q, omega_r, lambda, n_max)?),
            None => None,
        };
        let mut rows = Vec::new();
        for state in [QubitState::Ground, QubitState::Excited] {
            for n in 0..=n_levels {
                let idx = LevelIndex::new(state, n);
                let e0 = unperturbed_level(idx, omega_q, omega_r);
                let e2 = second_order_shift(idx, lambda, omega_q, omega_r)?;
                let e4 = fourth_order_shift(idx, lambda, omega_q, omega_r)?;
                rows.push(SpectrumRow {
                    state,
                    n,
                    e0,
                    e2,
                    e4,
                    e_total: e0 + e2 + e4,
                    e_exact: exact.as_ref().map(|x| x.level(idx)).transpose()?,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, idx: LevelIndex) -> Option<&SpectrumRow> {
        self.rows.iter().find(|r| r.state == idx.state && r.n == idx.n)
    }

    /// CSV with columns `state,n,E0,E2,E4,E_total,E_exact`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "n", "E0", "E2", "E4", "E_total", "E_exact"])?;
        for r in &self.rows {
            w.write_record([
                r.state.label().to_string(),
                r.n.to_string(),
                format!("{:.17e}", r.e0),
                format!("{:.17e}", r.e2),
                format!("{:.17e}", r.e4),
                format!("{:.17e}", r.e_total),
                r.e_exact.map(|e| format!("{e:.17e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of `|s, n⟩` in the product basis (spin-major, ground first).
fn basis_index(idx: LevelIndex, n_max: usize) -> usize {
    match idx.state {
        QubitState::Ground => idx.n,
        QubitState::Excited => n_max + 1 + idx.n,
    }
}

/// `H = −(ω_q/2)σ_z + ω_r(a†a + 1/2) + iλσ_y(a† − a)`, real symmetric.
pub fn coupled_hamiltonian(omega_q: f64, omega_r: f64, lambda: f64, n_max: usize) -> DMatrix<f64> {
    let dim = 2 * (n_max + 1);
    let mut h = DMatrix::zeros(dim, dim);
    for state in [QubitState::Ground, QubitState::Excited] {
        for n in 0..=n_max {
            let idx = LevelIndex::new(state, n);
            let i = basis_index(idx, n_max);
            h[(i, i)] = unperturbed_level(idx, omega_q, omega_r);
        }
    }
    // iσ_y = [[0, 1], [−1, 0]] in (↑, ↓); ⟨m|(a† − a)|n⟩ = √(n+1)δ_{m,n+1} − √n δ_{m,n−1}
    for n in 0..=n_max {
        let down = basis_index(LevelIndex::new(QubitState::Excited, n), n_max);
        if n < n_max {
            let up = basis_index(LevelIndex::new(QubitState::Ground, n + 1), n_max);
            let v = lambda * ((n + 1) as f64).sqrt();
            h[(up, down)] = v;
            h[(down, up)] = v;
        }
        if n > 0 {
            let up = basis_index(LevelIndex::new(QubitState::Ground, n - 1), n_max);
            let v = -lambda * (n as f64).sqrt();
            h[(up, down)] = v;
            h[(down, up)] = v;
        }
    }
    h
}

/// Exact spectrum with each eigenvalue labelled by continuity from λ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSpectrum {
    pub n_max: usize,
    /// Energies indexed by the unperturbed basis position.
    pub energies: Vec<f64>,
    pub min_overlap: f64,
}

impl ExactSpectrum {
    pub fn level(&self, idx: LevelIndex) -> Result<f64> {
        if idx.n > self.n_max {
            return Err(invalid("n", "level beyond the truncation"));
        }
        Ok(self.energies[basis_index(idx, self.n_max)])
    }
}

/// Diagonalize the truncated Hamiltonian, following eigenvectors from the
/// uncoupled basis through at least eight coupling increments.
pub fn exact_diagonalize(omega_q: f64, omega_r: f64, lambda: f64, n_max: usize) -> Result<ExactSpectrum> {
    if !(omega_q > 0.0) || !(omega_r > 0.0) || !lambda.is_finite() {
        return Err(invalid("omega_q", "frequencies must be positive and lambda finite"));
    }
    let dim = 2 * (n_max + 1);
    let mut tracked: Vec<DVector<f64>> = (0..dim)
        .map(|i| {
            let mut v = DVector::zeros(dim);
            v[i] = 1.0;
            v
        })
        .collect();
    let mut energies: Vec<f64> = (0..dim)
        .map(|i| coupled_hamiltonian(omega_q, omega_r, 0.0, n_max)[(i, i)])
        .collect();
    let mut min_overlap: f64 = 1.0;
    let steps = 16;
    if lambda != 0.0 {
        for k in 1..=steps {
            let lk = lambda * k as f64 / steps as f64;
            let eig = coupled_hamiltonian(omega_q, omega_r, lk, n_max).symmetric_eigen();
            let mut taken = vec![false; dim];
            let mut next = tracked.clone();
            for (label, v) in tracked.iter().enumerate() {
                let (mut best, mut best_j) = (-1.0, 0);
                for j in 0..dim {
                    if taken[j] {
                        continue;
                    }
                    let o = v.dot(&eig.eigenvectors.column(j)).abs();
                    if o > best {
                        best = o;
                        best_j = j;
                    }
                }
                if best < LABEL_OVERLAP_FLOOR {
                    return Err(Error::LabelTracking { overlap: best, coupling: lk });
                }
                min_overlap = min_overlap.min(best);
                taken[best_j] = true;
                let mut col = eig.eigenvectors.column(best_j).into_owned();
                if col.dot(v) < 0.0 {
                    col.neg_mut();
                }
                next[label] = col;
                energies[label] = eig.eigenvalues[best_j];
            }
            tracked = next;
        }
    }
    Ok(ExactSpectrum { n_max, energies, min_overlap })
}

/// Fit `ζ + ω̃n + μn²` to the perturbative levels `n = 0..=n_fit`.
pub fn effective_nonlinear_params(
    lambda: f64,
    omega_q: f64,
    omega_r: f64,
    state: QubitState,
    n_fit: usize,
) -> Result<NonlinearOscParams> {
    if n_fit < 2 {
        return Err(invalid("n_fit", "a quadratic fit needs at least three levels"));
    }
    let mut xs = Vec::with_capacity(n_fit + 1);
    let mut ys = Vec::with_capacity(n_fit + 1);
    for n in 0..=n_fit {
        let idx = LevelIndex::new(state, n);
        xs.push(n as f64);
        ys.push(
            unperturbed_level(idx, omega_q, omega_r)
                + second_order_shift(idx, lambda, omega_q, omega_r)?
                + fourth_order_shift(idx, lambda, omega_q, omega_r)?,
        );
    }
    let (c, rms) = fit_polynomial(&xs, &ys, 2)?;
    let bound = 1e-3 * c[2].abs() * (n_fit * n_fit) as f64;
    let scale_floor = 1e-12 * ys.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if rms > bound.max(scale_floor) {
        return Err(Error::Fit(format!("quadratic level fit residual {rms:.3e} exceeds {bound:.3e}")));
    }
    Ok(NonlinearOscParams {
        state,
        frequency: c[1],
        nonlinearity: c[2],
        offset: c[0],
        base_frequency: omega_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fit::power_law_exponent;
    use proptest::prelude::*;

    const G: QubitState = QubitState::Ground;
    const E: QubitState = QubitState::Excited;

    #[test]
    fn unperturbed_examples() {
        assert_eq!(unperturbed_level(LevelIndex::new(G, 0), 5.0, 1.0), -2.0);
        assert_eq!(unperturbed_level(LevelIndex::new(E, 0), 5.0, 1.0), 3.0);
        for n in 0..10 {
            let a = unperturbed_level(LevelIndex::new(G, n + 1), 5.0, 1.3);
            let b = unperturbed_level(LevelIndex::new(G, n), 5.0, 1.3);
            assert!((a - b - 1.3).abs() < 1e-14);
        }
    }

    #[test]
    fn second_order_examples() {
        let e = second_order_shift(LevelIndex::new(G, 0), 0.05, 5.0, 1.0).unwrap();
        assert!((e + 0.0025 / 6.0).abs() < 1e-16);
        let lamb = second_order_shift(LevelIndex::new(E, 0), 0.05, 5.0, 1.0).unwrap() - e;
        assert!((lamb - lamb_shift(0.05, 5.0, 1.0).unwrap()).abs() < 1e-16);
        assert!((dispersive_shift(0.05, 5.0, 1.0).unwrap() + 1.0416666666666667e-3).abs() < 1e-15);
        assert!(matches!(second_order_shift(LevelIndex::new(G, 0), 0.05, 1.0, 1.0), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn second_order_spacing_is_the_dispersive_shift() {
        let (l, q, r) = (0.05, 5.0, 1.0);
        let dw = dispersive_shift(l, q, r).unwrap();
        for (state, sign) in [(G, 1.0), (E, -1.0)] {
            for n in 0..10 {
                let a = second_order_shift(LevelIndex::new(state, n + 1), l, q, r).unwrap();
                let b = second_order_shift(LevelIndex::new(state, n), l, q, r).unwrap();
                assert!((a - b - sign * dw).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_matches_unperturbed_at_zero_coupling() {
        let s = exact_diagonalize(5.0, 1.0, 0.0, 10).unwrap();
        for state in [G, E] {
            for n in 0..=10 {
                let idx = LevelIndex::new(state, n);
                assert_eq!(s.level(idx).unwrap(), unperturbed_level(idx, 5.0, 1.0));
            }
        }
    }

    #[test]
    fn hamiltonian_is_symmetric_and_offset_covariant() {
        let h = coupled_hamiltonian(5.0, 1.0, 0.3, 12);
        assert!((&h - h.transpose()).amax() < 1e-14);
        let mut v1 = h.clone().symmetric_eigen().eigenvalues.as_slice().to_vec();
        let shifted = &h + DMatrix::identity(h.nrows(), h.ncols()) * 2.5;
        let mut v2 = shifted.symmetric_eigen().eigenvalues.as_slice().to_vec();
        v1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in v1.iter().zip(&v2) {
            assert!((b - a - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_converged_for_low_levels() {
        let a = exact_diagonalize(5.0, 1.0, 0.05, 20).unwrap();
        let b = exact_diagonalize(5.0, 1.0, 0.05, 30).unwrap();
        for state in [G, E] {
            for n in 0..=5 {
                let idx = LevelIndex::new(state, n);
                assert!((a.level(idx).unwrap() - b.level(idx).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn second_order_residual_is_the_fourth_order_shift() {
        // 10λ⁴/(ω_q−ω_r)³ bounds the ground-state residual only at n = 0; the
        // λ⁴ remainder grows like (n+1)²/ω_r and is what E⁽⁴⁾ accounts for
        let (l, q, r) = (0.05, 5.0, 1.0);
        let s = exact_diagonalize(q, r, l, 24).unwrap();
        let g0 = LevelIndex::new(G, 0);
        let approx = unperturbed_level(g0, q, r) + second_order_shift(g0, l, q, r).unwrap();
        assert!((s.level(g0).unwrap() - approx).abs() < 10.0 * l.powi(4) / (q - r).powi(3));
        for state in [G, E] {
            for n in 0..=3 {
                let idx = LevelIndex::new(state, n);
                let e2 = unperturbed_level(idx, q, r) + second_order_shift(idx, l, q, r).unwrap();
                let e4 = fourth_order_shift(idx, l, q, r).unwrap();
                let residual = s.level(idx).unwrap() - e2;
                assert!((residual - e4).abs() < 0.05 * e4.abs(), "{state:?} {n}: {residual} vs {e4}");
            }
        }
    }

    fn residual_exponent(order: usize) -> f64 {
        let (q, r) = (5.0, 1.0);
        let lambdas = [0.02, 0.04, 0.08];
        let res: Vec<f64> = lambdas
            .iter()
            .map(|&l| {
                let s = exact_diagonalize(q, r, l, 30).unwrap();
                let mut worst: f64 = 0.0;
                for state in [G, E] {
                    for n in 0..=3 {
                        let idx = LevelIndex::new(state, n);
                        let mut e = unperturbed_level(idx, q, r) + second_order_shift(idx, l, q, r).unwrap();
                        if order == 4 {
                            e += fourth_order_shift(idx, l, q, r).unwrap();
                        }
                        worst = worst.max((s.level(idx).unwrap() - e).abs());
                    }
                }
                worst
            })
            .collect();
        power_law_exponent(&lambdas, &res).unwrap()
    }

    #[test]
    fn residual_scaling_exponents() {
        let p2 = residual_exponent(2);
        let p4 = residual_exponent(4);
        assert!((p2 - 4.0).abs() < 0.3, "second order exponent {p2}");
        assert!((p4 - 6.0).abs() < 0.5, "fourth order exponent {p4}");
    }

    fn second_difference(f: impl Fn(usize) -> f64, n: usize) -> f64 {
        f(n + 1) - 2.0 * f(n) + f(n - 1)
    }

    #[test]
    fn far_detuned_variant_matches_curvature() {
        let (l, q, r) = (0.05, 50.0, 1.0);
        for state in [G, E] {
            for n in 1..=4 {
                let full = second_difference(|m| fourth_order_shift(LevelIndex::new(state, m), l, q, r).unwrap(), n);
                let far = second_difference(|m| fourth_order_far_detuned(LevelIndex::new(state, m), l, q, r).unwrap(), n);
                assert!(((full - far) / far).abs() < 0.15, "{state:?} n={n}: {full} vs {far}");
            }
        }
    }

    #[test]
    fn near_resonant_variant_matches_curvature() {
        let (l, q, r) = (0.01, 1.05, 1.0);
        for state in [G, E] {
            for n in 1..=4 {
                let full = second_difference(|m| fourth_order_shift(LevelIndex::new(state, m), l, q, r).unwrap(), n);
                let near =
                    second_difference(|m| fourth_order_near_resonant(LevelIndex::new(state, m), l, q, r).unwrap(), n);
                assert!(((full - near) / near).abs() < 0.15, "{state:?} n={n}: {full} vs {near}");
            }
        }
    }

    #[test]
    fn fourth_order_spacing_changes_linearly() {
        let (l, q, r) = (0.05, 5.0, 1.0);
        for state in [G, E] {
            let spacing = |n: usize| {
                fourth_order_shift(LevelIndex::new(state, n + 1), l, q, r).unwrap()
                    - fourth_order_shift(LevelIndex::new(state, n), l, q, r).unwrap()
            };
            let d1 = spacing(1) - spacing(0);
            assert!(d1.abs() > 0.0);
            for n in 1..8 {
                assert!((spacing(n + 1) - spacing(n) - d1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn effective_params() {
        let p = effective_nonlinear_params(0.0, 5.0, 1.0, G, DEFAULT_N_FIT).unwrap();
        assert!(p.nonlinearity.abs() < 1e-12 && (p.frequency - 1.0).abs() < 1e-12);
        let (l, q, r) = (0.05, 50.0, 1.0);
        for state in [G, E] {
            let p = effective_nonlinear_params(l, q, r, state, DEFAULT_N_FIT).unwrap();
            let far = state.sign() * 6.0 * l.powi(4) / q.powi(3);
            assert!(((p.nonlinearity - far) / far).abs() < 0.05);
        }
        let (l, q, r) = (0.05, 5.0, 1.0);
        for state in [G, E] {
            let p = effective_nonlinear_params(l, q, r, state, DEFAULT_N_FIT).unwrap();
            let dw = state.sign() * dispersive_shift(l, q, r).unwrap();
            assert!((p.frequency - r - dw).abs() < 10.0 * l.powi(4) / (q - r).powi(3));
        }
    }

    #[test]
    fn csv_columns() {
        let t = SpectrumTable::build(0.05, 5.0, 1.0, 2, Some(20)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state,n,E0,E2,E4,E_total,E_exact\n"));
        assert_eq!(text.lines().count(), 7);
        for r in &t.rows {
            assert_eq!(r.e_total, r.e0 + r.e2 + r.e4);
        }
    }

    proptest! {
        #[test]
        fn second_order_signs(n in 0usize..50, l in 1e-3f64..0.5, q in 1.1f64..20.0) {
            let r = 1.0;
            prop_assert!(second_order_shift(LevelIndex::new(G, n), l, q, r).unwrap() < 0.0);
            prop_assert!(second_order_shift(LevelIndex::new(E, n), l, q, r).unwrap() > 0.0);
        }
    }
}

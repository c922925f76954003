//! Unitary propagation of the spinor.
//!
//! `H(t) = K + V(t)` with `K = ω_r(N + 1/2)` diagonal in the Fock basis and
//! `V(t)` linear in `φ̂`, hence block diagonal (one 2×2 spin block per point)
//! in the eigenbasis of the truncated `φ̂`. The blocks are exponentiated with
//! fourth-order Magnus substeps. Strang splitting is lifted to fourth order by
//! the triple-jump composition, and step doubling controls the local error.
//! The Magnus substep length is calibrated once per run against the
//! tolerance. Eigenvectors of `φ̂` at `±x` differ only in the sign of their
//! odd-`n` components, so the basis change works on the parity halves.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::SQRT_2;

use super::{flux_matrix, QuantumParams, SpinorState, NORM_TOLERANCE, TAIL_LIMIT};
use crate::error::{invalid, Error, Result};

/// Bounds on `‖H_block‖·δ` for one Magnus substep.
const MAX_STRIDE: f64 = 1.0;
const MIN_STRIDE: f64 = 1e-4;
/// Share of the error budget left to the Magnus substeps.
const MAGNUS_SHARE: f64 = 0.1;
/// Step-doubling differences below this are round-off.
const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolveOptions {
    /// Cap on the outer step.
    pub dt_max: f64,
    /// Target for the accumulated error over the whole span (2-norm).
    pub tol: f64,
    pub tail_limit: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { dt_max: f64::INFINITY, tol: 1e-7, tail_limit: TAIL_LIMIT, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PropagatorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_norm_drift: f64,
    pub max_tail_mass: f64,
    pub estimated_error: f64,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<SpinorState>,
    pub stats: PropagatorStats,
}

pub struct SplitPropagator {
    params: QuantumParams,
    levels: usize,
    /// Positive eigenvalues of the truncated `φ̂`. The eigenvector at `−x` is
    /// the one at `x` with odd-`n` components negated.
    points: Vec<f64>,
    /// Even- and odd-`n` components of the positive-`x` eigenvectors, one row each.
    even: DMatrix<f64>,
    odd: DMatrix<f64>,
    /// Even components of the `x = 0` eigenvector (odd level counts only).
    zero: Option<DMatrix<f64>>,
    w_even: DMatrix<f64>,
    w_odd: DMatrix<f64>,
    plus: DMatrix<f64>,
    minus: DMatrix<f64>,
    centre: DMatrix<f64>,
    stride: f64,
    nodes: Vec<(f64, f64)>,
}

const TRIPLE_JUMP: [f64; 3] = {
    // γ1 = 1/(2 − 2^{1/3}), γ2 = 1 − 2γ1
    let g1 = 1.351_207_191_959_657_6;
    [g1, 1.0 - 2.0 * g1, g1]
};

impl SplitPropagator {
    pub fn new(params: QuantumParams, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(invalid("n_max", "need at least two Fock levels"));
        }
        let eig = SymmetricEigen::new(flux_matrix(n_max));
        let levels = n_max + 1;
        let (ne, no) = (levels.div_ceil(2), levels / 2);
        let floor = 1e-8;
        let mut positive: Vec<usize> = (0..levels).filter(|&j| eig.eigenvalues[j] > floor).collect();
        positive.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let centre = (0..levels).find(|&j| eig.eigenvalues[j].abs() <= floor);
        if positive.len() != no || centre.is_some() != (levels % 2 == 1) {
            return Err(Error::Singular("flux eigenvalues are not symmetric about zero".into()));
        }
        let v = &eig.eigenvectors;
        let even = DMatrix::from_fn(no, ne, |j, k| v[(2 * k, positive[j])]);
        let odd = DMatrix::from_fn(no, no, |j, k| v[(2 * k + 1, positive[j])]);
        let zero = centre.map(|c| DMatrix::from_fn(1, ne, |_, k| v[(2 * k, c)]));
        Ok(Self {
            params,
            levels,
            points: positive.iter().map(|&j| eig.eigenvalues[j]).collect(),
            even,
            odd,
            zero,
            w_even: DMatrix::zeros(ne, 4),
            w_odd: DMatrix::zeros(no, 4),
            plus: DMatrix::zeros(no, 4),
            minus: DMatrix::zeros(no, 4),
            centre: DMatrix::zeros(1, 4),
            stride: 0.1,
            nodes: Vec::new(),
        })
    }

    /// Largest block norm `|B|/2` over the flux points, ignoring the drive phase.
    fn block_norm(&self) -> f64 {
        let p = &self.params;
        let x = self.points.last().copied().unwrap_or(0.0);
        let bz = p.omega_mod.abs() + 2.0 * SQRT_2 * (p.coupling * x).abs();
        0.5 * p.omega_rabi.hypot(bz)
    }

    /// Pick the Magnus stride so that the substep error seen by step
    /// doubling stays below `MAGNUS_SHARE` of the error allowance. The local
    /// error rate is probed on the outermost flux point over short windows
    /// spread across one drive period.
    pub fn calibrate(&mut self, t0: f64, span: f64, tol: f64) {
        let p = self.params;
        if p.omega_mod == 0.0 {
            return;
        }
        let period = 2.0 * std::f64::consts::PI / p.omega_r;
        let x = self.points.last().copied().unwrap_or(0.0);
        let norm = self.block_norm();
        // step doubling divides the difference by 15
        let target = 15.0 * MAGNUS_SHARE * tol / span;
        let mut stride = MAX_STRIDE;
        loop {
            let len = 4.0 * stride / norm;
            let mut rate: f64 = 0.0;
            for k in 0..8 {
                let t = t0 + k as f64 * period / 8.0;
                let a = self.block_direct(x, t, len, 4);
                let b = self.block_direct(x, t, len, 8);
                let mut diff = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        diff += (a[i][j] - b[i][j]).norm_sqr();
                    }
                }
                rate = rate.max(diff.sqrt() / len);
            }
            if rate <= target || stride <= MIN_STRIDE {
                break;
            }
            stride = (0.8 * stride * (target / rate).powf(0.25)).min(0.5 * stride).max(MIN_STRIDE);
        }
        self.stride = stride;
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    fn kinetic(&self, psi: &mut [Complex64], tau: f64) {
        let m = self.levels;
        for n in 0..m {
            let ph = Complex64::from_polar(1.0, -self.params.omega_r * (n as f64 + 0.5) * tau);
            psi[n] *= ph;
            psi[m + n] *= ph;
        }
    }

    fn substeps(&self, h: f64) -> usize {
        if self.params.omega_mod == 0.0 {
            return 1;
        }
        ((h.abs() * self.block_norm() / self.stride).ceil() as usize).max(1)
    }

    /// Drive values at the two Gauss nodes of each of `m` substeps of `[t, t+tau]`.
    fn fill_nodes(&mut self, t: f64, tau: f64, m: usize) {
        let p = self.params;
        let d = tau / m as f64;
        let (g1, g2) = (0.5 - 3f64.sqrt() / 6.0, 0.5 + 3f64.sqrt() / 6.0);
        self.nodes.clear();
        self.nodes.extend((0..m).map(|k| {
            let a = t + k as f64 * d;
            (p.omega_mod * (p.omega_r * (a + g1 * d)).cos(), p.omega_mod * (p.omega_r * (a + g2 * d)).cos())
        }));
    }

    fn block_direct(&mut self, x: f64, t: f64, tau: f64, m: usize) -> [[Complex64; 2]; 2] {
        self.fill_nodes(t, tau, m);
        block(&self.params, &self.nodes, x, tau)
    }

    fn potential(&mut self, psi: &mut [Complex64], t: f64, tau: f64, h_ref: f64, frac: f64) {
        let m = self.levels;
        for n in 0..m {
            let (w, r) = if n % 2 == 0 { (&mut self.w_even, n / 2) } else { (&mut self.w_odd, n / 2) };
            w[(r, 0)] = psi[n].re;
            w[(r, 1)] = psi[n].im;
            w[(r, 2)] = psi[m + n].re;
            w[(r, 3)] = psi[m + n].im;
        }
        // plus = E + O and minus = E − O with E, O the even and odd projections
        self.plus.gemm(1.0, &self.even, &self.w_even, 0.0);
        self.minus.copy_from(&self.plus);
        self.plus.gemm(1.0, &self.odd, &self.w_odd, 1.0);
        self.minus.gemm(-1.0, &self.odd, &self.w_odd, 1.0);
        if let Some(z) = &self.zero {
            self.centre.gemm(1.0, z, &self.w_even, 0.0);
        }
        let sub = ((self.substeps(h_ref) as f64 * frac.abs()).ceil() as usize).max(1);
        self.fill_nodes(t, tau, sub);
        let p = self.params;
        let apply = |rows: &mut DMatrix<f64>, j: usize, x: f64, nodes: &[(f64, f64)]| {
            let u = block(&p, nodes, x, tau);
            let a = Complex64::new(rows[(j, 0)], rows[(j, 1)]);
            let b = Complex64::new(rows[(j, 2)], rows[(j, 3)]);
            let na = u[0][0] * a + u[0][1] * b;
            let nb = u[1][0] * a + u[1][1] * b;
            rows[(j, 0)] = na.re;
            rows[(j, 1)] = na.im;
            rows[(j, 2)] = nb.re;
            rows[(j, 3)] = nb.im;
        };
        for (j, &x) in self.points.iter().enumerate() {
            apply(&mut self.plus, j, x, &self.nodes);
            apply(&mut self.minus, j, -x, &self.nodes);
        }
        if self.zero.is_some() {
            apply(&mut self.centre, 0, 0.0, &self.nodes);
        }
        // back: even part from plus + minus, odd part from plus − minus
        self.w_odd.gemm_tr(1.0, &self.odd, &self.plus, 0.0);
        self.w_odd.gemm_tr(-1.0, &self.odd, &self.minus, 1.0);
        self.w_even.gemm_tr(1.0, &self.even, &self.plus, 0.0);
        self.w_even.gemm_tr(1.0, &self.even, &self.minus, 1.0);
        if let Some(z) = &self.zero {
            self.w_even.gemm_tr(1.0, z, &self.centre, 1.0);
        }
        for n in 0..m {
            let (w, r) = if n % 2 == 0 { (&self.w_even, n / 2) } else { (&self.w_odd, n / 2) };
            psi[n] = Complex64::new(w[(r, 0)], w[(r, 1)]);
            psi[m + n] = Complex64::new(w[(r, 2)], w[(r, 3)]);
        }
    }

    fn strang(&mut self, psi: &mut [Complex64], t: f64, h: f64, h_ref: f64, frac: f64) {
        self.kinetic(psi, 0.5 * h);
        self.potential(psi, t, h, h_ref, frac);
        self.kinetic(psi, 0.5 * h);
    }

    /// One fourth-order step. The Magnus substep count is fixed by `h_ref`,
    /// so the two half steps of step doubling use substeps half as long.
    fn step4(&mut self, psi: &mut [Complex64], t: f64, h: f64, h_ref: f64) {
        let mut tc = t;
        for g in TRIPLE_JUMP {
            self.strang(psi, tc, g * h, h_ref, g);
            tc += g * h;
        }
    }

    /// Advance by `h` with step doubling; returns the error estimate.
    pub fn step(&mut self, psi: &mut [Complex64], t: f64, h: f64) -> f64 {
        let mut full = psi.to_vec();
        self.step4(&mut full, t, h, h);
        self.step4(psi, t, 0.5 * h, h);
        self.step4(psi, t + 0.5 * h, 0.5 * h, h);
        let diff: f64 = psi.iter().zip(&full).map(|(a, b)| (a - b).norm_sqr()).sum();
        diff.sqrt() / 15.0
    }
}

/// 2×2 propagator of the block at `x` over an interval of length `tau`,
/// one fourth-order Magnus substep per entry of `nodes`.
fn block(p: &QuantumParams, nodes: &[(f64, f64)], x: f64, tau: f64) -> [[Complex64; 2]; 2] {
    let by = p.omega_rabi;
    let bz_static = -2.0 * SQRT_2 * p.coupling * x;
    let d = tau / nodes.len() as f64;
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut u = [[one, zero], [zero, one]];
    for &(w1, w2) in nodes {
        let (bz1, bz2) = (w1 + bz_static, w2 + bz_static);
        // exponent −i n·σ
        let nx = 3f64.sqrt() / 24.0 * d * d * by * (bz1 - bz2);
        let ny = -0.5 * d * by;
        let nz = -0.25 * d * (bz1 + bz2);
        let r = (nx * nx + ny * ny + nz * nz).sqrt();
        let (c, s) = (r.cos(), if r > 0.0 { r.sin() / r } else { 1.0 });
        let step = [
            [Complex64::new(c, -s * nz), Complex64::new(-s * ny, -s * nx)],
            [Complex64::new(s * ny, -s * nx), Complex64::new(c, s * nz)],
        ];
        u = [
            [step[0][0] * u[0][0] + step[0][1] * u[1][0], step[0][0] * u[0][1] + step[0][1] * u[1][1]],
            [step[1][0] * u[0][0] + step[1][1] * u[1][0], step[1][0] * u[0][1] + step[1][1] * u[1][1]],
        ];
    }
    let phase = Complex64::from_polar(1.0, -SQRT_2 * p.drive_coupling * x * tau);
    [[u[0][0] * phase, u[0][1] * phase], [u[1][0] * phase, u[1][1] * phase]]
}

/// Propagate `state` from `t_span.0` to `t_span.1`, recording it at every
/// time in `samples` (which must lie in the span, increasing).
pub fn evolve(
    state: &SpinorState,
    params: &QuantumParams,
    t_span: (f64, f64),
    samples: &[f64],
    opts: &EvolveOptions,
) -> Result<Evolution> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(invalid("t_span", "end must follow start"));
    }
    if !(opts.dt_max > 0.0) || !(opts.tol > 0.0) {
        return Err(invalid("dt_max", "step cap and tolerance must be positive"));
    }
    let slack = 1e-12 * (t1 - t0).max(1.0);
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.iter().any(|&s| s < t0 - slack || s > t1 + slack) {
        return Err(invalid("samples", "must be increasing and inside the span"));
    }
    let mut prop = SplitPropagator::new(*params, state.n_max)?;
    prop.calibrate(t0, t1 - t0, opts.tol);
    let mut psi = state.amplitudes.clone();
    let norm0 = state.norm_sqr();
    let span = t1 - t0;
    let mut stats = PropagatorStats::default();
    let mut out = Evolution { times: Vec::with_capacity(samples.len()), states: Vec::with_capacity(samples.len()), stats };
    let mut next = 0;
    let record = |out: &mut Evolution, next: &mut usize, t: f64, psi: &[Complex64]| {
        while *next < samples.len() && samples[*next] <= t + 1e-12 * span.max(1.0) {
            out.times.push(samples[*next]);
            out.states.push(SpinorState { n_max: state.n_max, amplitudes: psi.to_vec() });
            *next += 1;
        }
    };
    let mut t = t0;
    record(&mut out, &mut next, t, &psi);
    let mut h = opts.dt_max.min(span).min(1.0);
    while t < t1 - 1e-12 * span {
        if stats.accepted_steps + stats.rejected_steps >= opts.max_steps {
            return Err(Error::TooManySteps { max_steps: opts.max_steps, t_end: t1 });
        }
        let target = if next < samples.len() { samples[next].min(t1) } else { t1 };
        let h_try = if target - t <= 1.01 * h { target - t } else { h }.min(opts.dt_max);
        let mut trial = psi.clone();
        let err = prop.step(&mut trial, t, h_try);
        if !err.is_finite() {
            return Err(Error::NonFinite { t });
        }
        let allowed = (opts.tol * h_try / span).max(ROUNDOFF_FLOOR);
        let factor = if err > 0.0 { (0.9 * (allowed / err).powf(0.2)).clamp(0.2, 5.0) } else { 5.0 };
        if err > allowed {
            stats.rejected_steps += 1;
            h = h_try * factor.min(0.9);
            if h < 1e-12 * span {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }
        psi = trial;
        t = if (target - (t + h_try)).abs() <= 1e-12 * span { target } else { t + h_try };
        stats.accepted_steps += 1;
        stats.estimated_error += err;
        let current = SpinorState { n_max: state.n_max, amplitudes: psi.clone() };
        let drift = (current.norm_sqr() - norm0).abs();
        stats.max_norm_drift = stats.max_norm_drift.max(drift);
        if drift > NORM_TOLERANCE {
            return Err(Error::Regime(format!("norm drifted by {drift:.3e} at t = {t}")));
        }
        let tail = current.tail_mass();
        stats.max_tail_mass = stats.max_tail_mass.max(tail);
        if tail > opts.tail_limit {
            return Err(Error::Truncation { tail_mass: tail, limit: opts.tail_limit, t });
        }
        // a step shortened to land on a sample does not shrink the next one
        if h_try >= h * (1.0 - 1e-12) {
            h = h_try * factor;
        }
        out.stats = stats;
        record(&mut out, &mut next, t, &psi);
    }
    out.stats = stats;
    Ok(out)
}

/// `e^{−iHτ}ψ` by dense eigendecomposition of the Hermitian `H`.
pub fn propagate_dense(state: &SpinorState, hamiltonian: &DMatrix<Complex64>, tau: f64) -> Result<SpinorState> {
    let dim = state.amplitudes.len();
    if hamiltonian.nrows() != dim || hamiltonian.ncols() != dim {
        return Err(invalid("hamiltonian", "dimension does not match the state"));
    }
    let eig = SymmetricEigen::new(hamiltonian.clone());
    let v = &eig.eigenvectors;
    let psi = nalgebra::DVector::from_column_slice(&state.amplitudes);
    let mut coef = v.adjoint() * psi;
    for (c, e) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c *= Complex64::from_polar(1.0, -e * tau);
    }
    let out = v * coef;
    Ok(SpinorState { n_max: state.n_max, amplitudes: out.iter().copied().collect() })
}

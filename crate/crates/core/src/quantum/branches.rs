//! Flux-space densities of the spinor and their split into two branches.

use num_complex::Complex64;
use serde::Serialize;

use super::{field_eigenspinor, hermite_functions, QuantumParams, SpinorState};
use crate::error::{Error, Result};
use crate::numerics::peaks::find_peaks;
use crate::resonator::FluxGrid;

/// Finest allowed grid spacing check: spacing must not exceed this.
pub const MAX_GRID_SPACING: f64 = 0.1;
/// Peaks below this fraction of the maximum density are ignored.
pub const PEAK_PROMINENCE: f64 = 1e-3;
/// Peaks closer than this are not treated as separate branches.
pub const MIN_SEPARATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxDensity {
    pub grid: FluxGrid,
    pub flux: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    #[serde(skip)]
    pub amplitudes: [Vec<Complex64>; 2],
}

impl FluxDensity {
    pub fn total(&self) -> Vec<f64> {
        self.up.iter().zip(&self.down).map(|(a, b)| a + b).collect()
    }

    /// Columns `phi_r, rho_up, rho_down, total`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi_r", "rho_up", "rho_down", "total"])?;
        for i in 0..self.flux.len() {
            w.write_record([
                format!("{:.10e}", self.flux[i]),
                format!("{:.10e}", self.up[i]),
                format!("{:.10e}", self.down[i]),
                format!("{:.10e}", self.up[i] + self.down[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `|ψ_s(φ_r)|²` on `grid` for both spin components. The grid spacing must not
/// exceed 0.1, and the densities must integrate to the component norms
/// within 10⁻⁴.
pub fn flux_density(state: &SpinorState, grid: &FluxGrid) -> Result<FluxDensity> {
    if grid.spacing() > MAX_GRID_SPACING {
        return Err(Error::Grid(format!("spacing {:.3} exceeds {MAX_GRID_SPACING}", grid.spacing())));
    }
    let flux = grid.values();
    let mut amps = [Vec::with_capacity(flux.len()), Vec::with_capacity(flux.len())];
    for &x in &flux {
        let h = hermite_functions(state.n_max, x)?;
        for (s, comp) in [state.up(), state.down()].into_iter().enumerate() {
            amps[s].push(comp.iter().zip(&h).map(|(c, v)| c * v).sum::<Complex64>());
        }
    }
    let up: Vec<f64> = amps[0].iter().map(|c| c.norm_sqr()).collect();
    let down: Vec<f64> = amps[1].iter().map(|c| c.norm_sqr()).collect();
    let norms = state.component_norms();
    for (d, n) in [(&up, norms[0]), (&down, norms[1])] {
        let m = grid.integrate(d);
        if (m - n).abs() > 1e-4 {
            return Err(Error::Grid(format!("density integrates to {m:.6} but the component norm is {n:.6}")));
        }
    }
    Ok(FluxDensity { grid: *grid, flux, up, down, amplitudes: amps })
}

/// One branch of a decomposition: a flux window, its mass and spin state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Branch {
    pub center: f64,
    pub weight: f64,
    /// Dominant eigenvector of the spin density matrix reduced over the window.
    #[serde(skip)]
    pub spinor: [Complex64; 2],
    /// Purity of that reduced spin state.
    pub purity: f64,
    /// `|⟨χ|χ_±(B(center))⟩|` against the field eigenspinor of the branch
    /// (`+1/2` for branch a, `−1/2` for branch b).
    pub field_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchDecomposition {
    pub t: f64,
    pub weight_a: f64,
    pub weight_b: f64,
    pub a: Option<Branch>,
    pub b: Option<Branch>,
    pub peak_count: usize,
    /// `|⟨χ_a|χ_b⟩|` when both branches are present.
    pub spinor_overlap: Option<f64>,
    pub reliable: bool,
}

fn reduced_spin(d: &FluxDensity, lo: usize, hi: usize) -> [[Complex64; 2]; 2] {
    let h = d.grid.spacing();
    let mut r = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in lo..=hi {
        let w = if (i == lo || i == hi) && hi > lo { 0.5 * h } else { h };
        for (s, row) in r.iter_mut().enumerate() {
            for (s2, v) in row.iter_mut().enumerate() {
                *v += d.amplitudes[s][i] * d.amplitudes[s2][i].conj() * w;
            }
        }
    }
    r
}

fn dominant(r: &[[Complex64; 2]; 2]) -> ([Complex64; 2], f64, f64) {
    let (a, b, c) = (r[0][0].re, r[1][1].re, r[0][1]);
    let tr = a + b;
    let disc = (0.25 * (a - b) * (a - b) + c.norm_sqr()).sqrt();
    let lmax = 0.5 * tr + disc;
    let v = if c.norm() > 1e-300 {
        [c, Complex64::new(lmax - a, 0.0)]
    } else if a >= b {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else {
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
    };
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let purity = if tr > 0.0 { (a * a + b * b + 2.0 * c.norm_sqr()) / (tr * tr) } else { 0.0 };
    ([v[0] / n, v[1] / n], purity, tr)
}

fn overlap(x: &[Complex64; 2], y: &[Complex64; 2]) -> f64 {
    (x[0].conj() * y[0] + x[1].conj() * y[1]).norm()
}

fn project(r: &[[Complex64; 2]; 2], chi: &[Complex64; 2]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for s in 0..2 {
        for s2 in 0..2 {
            acc += chi[s].conj() * r[s][s2] * chi[s2];
        }
    }
    acc.re
}

/// Split the state into the two flux branches: peaks of the total density
/// (prominence `10⁻³` of the maximum) with windows divided at the density
/// minimum between them. Branch a carries the spin aligned with its local
/// field, branch b the anti-aligned spin.
///
/// With a single peak the weights are the populations of the two field
/// eigenspinors at that peak.
pub fn decompose_branches(state: &SpinorState, t: f64, params: &QuantumParams, grid: &FluxGrid) -> Result<BranchDecomposition> {
    let d = flux_density(state, grid)?;
    let total = d.total();
    let max = total.iter().cloned().fold(0.0, f64::max);
    let mut peaks = find_peaks(&total, &d.flux, PEAK_PROMINENCE * max)?;
    if peaks.is_empty() {
        return Err(Error::Grid("no interior density maximum on the grid".into()));
    }
    let peak_count = peaks.len();
    peaks.sort_by(|p, q| q.value.total_cmp(&p.value));
    peaks.truncate(2);
    peaks.sort_by(|p, q| p.position.total_cmp(&q.position));

    let branch = |lo: usize, hi: usize, center: f64, sign: f64| -> Result<(Branch, [[Complex64; 2]; 2])> {
        let r = reduced_spin(&d, lo, hi);
        let (chi, purity, weight) = dominant(&r);
        let eig = field_eigenspinor(&params.field(t, center), sign)?;
        Ok((Branch { center, weight, spinor: chi, purity, field_overlap: overlap(&eig, &chi) }, r))
    };

    let last = total.len() - 1;
    if peaks.len() == 1 {
        let c = peaks[0].position;
        let (mut a, r) = branch(0, last, c, 1.0)?;
        let b_field = field_eigenspinor(&params.field(t, c), -1.0)?;
        let a_field = field_eigenspinor(&params.field(t, c), 1.0)?;
        let (wa, wb) = (project(&r, &a_field), project(&r, &b_field));
        let mut b = a;
        a.weight = wa;
        b.weight = wb;
        b.field_overlap = overlap(&b_field, &b.spinor);
        let minority = wa.min(wb);
        return Ok(BranchDecomposition {
            t,
            weight_a: wa,
            weight_b: wb,
            a: (wa >= 0.01 * (wa + wb)).then_some(a),
            b: (wb >= 0.01 * (wa + wb)).then_some(b),
            peak_count,
            spinor_overlap: None,
            reliable: minority < 0.01 * (wa + wb),
        });
    }

    let (i0, i1) = (peaks[0].index, peaks[1].index);
    let split = (i0..=i1).min_by(|&p, &q| total[p].total_cmp(&total[q])).unwrap();
    let (left_a, _) = branch(0, split, peaks[0].position, 1.0)?;
    let (right_a, _) = branch(split, last, peaks[1].position, 1.0)?;
    let (left_b, _) = branch(0, split, peaks[0].position, -1.0)?;
    let (right_b, _) = branch(split, last, peaks[1].position, -1.0)?;
    let (a, b) = if left_a.field_overlap + right_b.field_overlap >= right_a.field_overlap + left_b.field_overlap {
        (left_a, right_b)
    } else {
        (right_a, left_b)
    };
    Ok(BranchDecomposition {
        t,
        weight_a: a.weight,
        weight_b: b.weight,
        a: Some(a),
        b: Some(b),
        peak_count,
        spinor_overlap: Some(overlap(&a.spinor, &b.spinor)),
        reliable: (peaks[1].position - peaks[0].position).abs() >= MIN_SEPARATION,
    })
}

/// Columns `t, phi_a, phi_b, w_a, w_b`; absent branches are left empty.
pub fn write_branch_track_csv<W: std::io::Write>(track: &[BranchDecomposition], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "phi_a", "phi_b", "w_a", "w_b"])?;
    let opt = |b: &Option<Branch>| b.map(|b| format!("{:.10e}", b.center)).unwrap_or_default();
    for d in track {
        w.write_record([
            format!("{:.10e}", d.t),
            opt(&d.a),
            opt(&d.b),
            format!("{:.10e}", d.weight_a),
            format!("{:.10e}", d.weight_b),
        ])?;
    }
    w.flush()?;
    Ok(())
}

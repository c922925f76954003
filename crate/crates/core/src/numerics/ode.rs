//! Adaptive Dormand–Prince 5(4) integration with continuous output.
//!
//! The solver works on flat `f64` state vectors so that the same core drives
//! the real quasiclassical equations and the complex density-matrix equations
//! (which are packed as interleaved real/imaginary parts).

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Called after every accepted step. Returning `Ok(true)` signals that the
    /// state was modified in place and the cached derivative must be refreshed.
    fn after_step(&mut self, _t: f64, _y: &mut [f64]) -> Result<bool> {
        Ok(false)
    }

    /// Called for every requested sample, in order.
    fn on_sample(&mut self, _t: f64, _y: &[f64]) -> Result<()> {
        Ok(())
    }
}

impl<F> OdeSystem for F
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    /// Largest scaled error estimate among accepted steps (1.0 = at tolerance).
    pub max_error_estimate: f64,
}

/// Samples of an integrated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    dim: usize,
    states: Vec<f64>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// Time series of one state component.
    pub fn component(&self, k: usize) -> Vec<f64> {
        assert!(k < self.dim);
        self.states.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times
            .iter()
            .copied()
            .zip(self.states.chunks_exact(self.dim))
    }
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer & Wanner, DOPRI5 dense output).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Workspace {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    dense: [Vec<f64>; 5],
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            dense: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

fn validate(opts: &OdeOptions, t0: f64, t1: f64, samples: &[f64]) -> Result<()> {
    if !(opts.rel_tol > 0.0) || !(opts.abs_tol >= 0.0) {
        return Err(invalid("tolerance", "rel_tol must be > 0 and abs_tol >= 0"));
    }
    if !(t1 > t0) {
        return Err(invalid("t_span", format!("end time {t1} must exceed start time {t0}")));
    }
    if samples.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("samples", "sample times must be strictly increasing"));
    }
    if let (Some(&first), Some(&last)) = (samples.first(), samples.last()) {
        if first < t0 || last > t1 {
            return Err(invalid("samples", "sample times must lie inside the integration span"));
        }
    }
    Ok(())
}

fn error_norm(opts: &OdeOptions, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
    let n = y.len() as f64;
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((&a, &b), &e)| {
            let sc = opts.abs_tol + opts.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &mut S,
    opts: &OdeOptions,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    ws: &mut Workspace,
) -> f64 {
    let scale = |v: f64| opts.abs_tol + opts.rel_tol * v.abs();
    let n = y0.len() as f64;
    let d0 = (y0.iter().map(|&v| (v / scale(v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (y0
        .iter()
        .zip(f0)
        .map(|(&v, &f)| (f / scale(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for ((ys, &y), &f) in ws.y_stage.iter_mut().zip(y0).zip(f0) {
        *ys = y + h0 * f;
    }
    let y1 = std::mem::take(&mut ws.y_stage);
    sys.rhs(t0 + h0, &y1, &mut ws.k[1]);
    ws.y_stage = y1;
    let d2 = (y0
        .iter()
        .zip(f0)
        .zip(&ws.k[1])
        .map(|((&v, &a), &b)| ((b - a) / scale(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.h_max)
}

/// Integrate `sys` from `t0` to `t1`, recording the state at each time in
/// `samples` through the continuous extension of the method.
pub fn solve<S: OdeSystem + ?Sized>(
    sys: &mut S,
    y0: &[f64],
    t0: f64,
    t1: f64,
    samples: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    validate(opts, t0, t1, samples)?;
    let n = y0.len();
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut stats = IntegratorStats::default();

    let mut traj = Trajectory {
        times: Vec::with_capacity(samples.len()),
        dim: n,
        states: Vec::with_capacity(samples.len() * n),
        stats,
    };
    let mut next_sample = 0usize;
    let emit = |sys: &mut S, traj: &mut Trajectory, ts: f64, ys: &[f64]| -> Result<()> {
        sys.on_sample(ts, ys)?;
        traj.times.push(ts);
        traj.states.extend_from_slice(ys);
        Ok(())
    };
    while next_sample < samples.len() && samples[next_sample] <= t0 {
        emit(sys, &mut traj, samples[next_sample], &y)?;
        next_sample += 1;
    }

    sys.rhs(t, &y, &mut ws.k[0]);
    stats.rhs_evaluations += 1;
    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            let f0 = ws.k[0].clone();
            stats.rhs_evaluations += 1;
            initial_step(sys, opts, t, &y, &f0, &mut ws)
        }
    };

    let mut reject_streak = false;
    while t < t1 {
        if stats.accepted_steps + stats.rejected_steps >= opts.max_steps {
            return Err(Error::TooManySteps {
                max_steps: opts.max_steps,
                t_end: t1,
            });
        }
        h = h.min(opts.h_max).min(t1 - t);
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }

        macro_rules! stage {
            ($dst:expr, $tc:expr, [$(($a:expr, $ki:expr)),*]) => {{
                for i in 0..n {
                    ws.y_stage[i] = y[i] + h * (0.0 $(+ $a * ws.k[$ki][i])*);
                }
                let ys = std::mem::take(&mut ws.y_stage);
                let mut kd = std::mem::take(&mut ws.k[$dst]);
                sys.rhs(t + $tc * h, &ys, &mut kd);
                ws.k[$dst] = kd;
                ws.y_stage = ys;
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for i in 0..n {
            ws.y_new[i] = y[i]
                + h * (A71 * ws.k[0][i]
                    + A73 * ws.k[2][i]
                    + A74 * ws.k[3][i]
                    + A75 * ws.k[4][i]
                    + A76 * ws.k[5][i]);
        }
        {
            let yn = std::mem::take(&mut ws.y_new);
            let mut k7 = std::mem::take(&mut ws.k[6]);
            sys.rhs(t + h, &yn, &mut k7);
            ws.k[6] = k7;
            ws.y_new = yn;
        }
        stats.rhs_evaluations += 6;
        for i in 0..n {
            ws.err[i] = h
                * (E1 * ws.k[0][i]
                    + E3 * ws.k[2][i]
                    + E4 * ws.k[3][i]
                    + E5 * ws.k[4][i]
                    + E6 * ws.k[5][i]
                    + E7 * ws.k[6][i]);
        }
        let err = error_norm(opts, &y, &ws.y_new, &ws.err);
        if !err.is_finite() || ws.y_new.iter().any(|v| !v.is_finite()) {
            if h < 1e-300 {
                return Err(Error::NonFinite { t });
            }
            stats.rejected_steps += 1;
            h *= 0.1;
            reject_streak = true;
            continue;
        }

        if err <= 1.0 {
            let t_new = t + h;
            // Dense output polynomial for this step.
            for i in 0..n {
                let dy = ws.y_new[i] - y[i];
                let bspl = h * ws.k[0][i] - dy;
                ws.dense[0][i] = y[i];
                ws.dense[1][i] = dy;
                ws.dense[2][i] = bspl;
                ws.dense[3][i] = dy - h * ws.k[6][i] - bspl;
                ws.dense[4][i] = h
                    * (D1 * ws.k[0][i]
                        + D3 * ws.k[2][i]
                        + D4 * ws.k[3][i]
                        + D5 * ws.k[4][i]
                        + D6 * ws.k[5][i]
                        + D7 * ws.k[6][i]);
            }
            while next_sample < samples.len() && samples[next_sample] <= t_new {
                let ts = samples[next_sample];
                let theta = (ts - t) / h;
                let theta1 = 1.0 - theta;
                let ys: Vec<f64> = (0..n)
                    .map(|i| {
                        ws.dense[0][i]
                            + theta
                                * (ws.dense[1][i]
                                    + theta1
                                        * (ws.dense[2][i]
                                            + theta * (ws.dense[3][i] + theta1 * ws.dense[4][i])))
                    })
                    .collect();
                emit(sys, &mut traj, ts, &ys)?;
                next_sample += 1;
            }

            std::mem::swap(&mut y, &mut ws.y_new);
            t = if t1 - t_new <= 4.0 * f64::EPSILON * t1.abs().max(1.0) { t1 } else { t_new };
            if sys.after_step(t, &mut y)? {
                sys.rhs(t, &y, &mut ws.k[0]);
                stats.rhs_evaluations += 1;
            } else {
                ws.k.swap(0, 6);
            }
            stats.accepted_steps += 1;
            stats.max_error_estimate = stats.max_error_estimate.max(err);

            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 5.0);
            if reject_streak {
                fac = fac.min(1.0);
            }
            reject_streak = false;
            h *= fac;
        } else {
            stats.rejected_steps += 1;
            reject_streak = true;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }

    traj.stats = stats;
    Ok(traj)
}

/// Integrate and return only the final state.
pub fn solve_final<S: OdeSystem + ?Sized>(
    sys: &mut S,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<(Vec<f64>, IntegratorStats)> {
    let traj = solve(sys, y0, t0, t1, &[t1], opts)?;
    Ok((traj.state(0).to_vec(), traj.stats))
}

/// `count` evenly spaced sample times covering `[t0, t1]` inclusively.
pub fn uniform_samples(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![t1],
        _ => {
            let dt = (t1 - t0) / (count - 1) as f64;
            let mut v: Vec<f64> = (0..count).map(|i| t0 + dt * i as f64).collect();
            v[count - 1] = t1;
            v
        }
    }
}

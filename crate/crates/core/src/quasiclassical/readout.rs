//! The two readout protocols and their regime diagnostics.

use serde::Serialize;
use std::f64::consts::{PI, SQRT_2};

use super::averaging::{averaged_frequency_shift, leading_frequency_shift};
use super::{adiabatic_spin, effective_field, equilibrium_shift, integrate, pack_state, ReversalDrive, ResonatorPoint, SpinResonator};
use crate::error::{invalid, Result};
use crate::numerics::demod::{demodulate, instantaneous_frequency, trailing_periods, unwrap_phases, wrap_angle, Demodulation, FrequencyEstimate};
use crate::numerics::fit::fit_line;
use crate::numerics::ode::Trajectory;
use crate::qubit::QubitState;

/// Default factor for "a ≫ b" checks.
pub const DEFAULT_MUCH_GREATER: f64 = 10.0;

/// A recorded "a ≫ b" condition: `ratio = a/b`, satisfied when `ratio ≥ factor`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeMargin {
    pub name: String,
    pub condition: String,
    pub ratio: f64,
    pub factor: f64,
    pub satisfied: bool,
}

impl RegimeMargin {
    pub fn new(name: &str, condition: &str, ratio: f64, factor: f64) -> Self {
        Self {
            name: name.to_string(),
            condition: condition.to_string(),
            ratio,
            factor,
            satisfied: ratio >= factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseReadoutConfig {
    pub omega_r: f64,
    pub omega_rabi: f64,
    pub omega_mod: f64,
    /// Effective coupling `Λ`.
    pub coupling: f64,
    /// Constant force `λ′`, absorbed into the flux origin.
    pub drive_coupling: f64,
    pub state: QubitState,
    pub n_periods: usize,
    pub samples_per_period: usize,
    /// Whole periods at the end of the run used for demodulation; by default a
    /// third of the run but at least five.
    pub demod_periods: Option<usize>,
    pub tol: f64,
    pub much_greater: f64,
}

impl PhaseReadoutConfig {
    pub fn new(omega_r: f64, omega_rabi: f64, omega_mod: f64, coupling: f64, state: QubitState, n_periods: usize) -> Self {
        Self {
            omega_r,
            omega_rabi,
            omega_mod,
            coupling,
            drive_coupling: 0.0,
            state,
            n_periods,
            samples_per_period: 256,
            demod_periods: None,
            tol: 1e-9,
            much_greater: DEFAULT_MUCH_GREATER,
        }
    }

    pub fn drive(&self) -> Result<ReversalDrive> {
        ReversalDrive::fm(self.omega_mod, self.omega_r, self.omega_rabi)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReadout {
    #[serde(skip)]
    pub trajectory: Trajectory,
    /// Demodulation of `φ_r` against `cos(ω_r t)`, `sin(ω_r t)`.
    pub demodulation: Demodulation,
    /// Phase of `φ_r` relative to the modulation `θ̇ = −Ω cos(ω_r t)`.
    pub phase: f64,
    pub demod_window: (f64, f64),
    /// Slope of the per-period maximum of `|φ_r|` against time.
    pub amplitude_slope: f64,
    pub amplitude_slope_std_error: f64,
    pub envelope: Vec<(f64, f64)>,
    pub margins: Vec<RegimeMargin>,
    pub adiabaticity: f64,
    pub measured_adiabaticity: f64,
    pub max_spin_field_angle: f64,
    pub equilibrium_shift: f64,
}

fn sample_grid(omega_r: f64, n_periods: usize, per_period: usize) -> Vec<f64> {
    let dt = 2.0 * PI / omega_r / per_period as f64;
    (0..=n_periods * per_period).map(|i| i as f64 * dt).collect()
}

/// Integrate the fm-drive protocol from the resonator ground state and read
/// the phase of the driven flux oscillations.
pub fn run_phase_readout(cfg: &PhaseReadoutConfig) -> Result<PhaseReadout> {
    let drive = cfg.drive()?;
    if cfg.n_periods < 5 || cfg.samples_per_period < 16 {
        return Err(invalid("n_periods", "need at least 5 periods and 16 samples per period"));
    }
    let mut sys = SpinResonator { drive, coupling: cfg.coupling };
    let s0 = adiabatic_spin(&effective_field(0.0, 0.0, &drive, cfg.coupling), cfg.state.sign())?;
    let y0 = pack_state(&s0, &ResonatorPoint { phi: 0.0, q: 0.0 });
    let times = sample_grid(cfg.omega_r, cfg.n_periods, cfg.samples_per_period);
    let t_end = *times.last().unwrap();
    let traj = integrate(&mut sys, &y0, (0.0, t_end), &times, cfg.tol)?;
    let phi = traj.component(3);

    let demod_periods = cfg.demod_periods.unwrap_or((cfg.n_periods / 3).max(5));
    let (i0, i1) = trailing_periods(&traj.times, cfg.omega_r, demod_periods)?;
    let demod = demodulate(&phi[i0..=i1], &traj.times[i0..=i1], cfg.omega_r)?;

    let per = cfg.samples_per_period;
    let mut envelope = Vec::with_capacity(cfg.n_periods);
    for k in 0..cfg.n_periods {
        let (j, m) = (k * per..=(k + 1) * per)
            .map(|j| (j, phi[j].abs()))
            .fold((k * per, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        envelope.push((traj.times[j], m));
    }
    let (et, ea): (Vec<f64>, Vec<f64>) = envelope.iter().cloned().unzip();
    let slope = fit_line(&et, &ea)?;

    let max_phi = phi.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let g = cfg.much_greater;
    let margins = vec![
        RegimeMargin::new("rabi_over_resonator", "omega_rabi >> omega_r", cfg.omega_rabi / cfg.omega_r, g),
        RegimeMargin::new(
            "modulation_over_backaction",
            "omega_mod >> 2*sqrt(2)*Lambda*max|phi_r|",
            cfg.omega_mod / (2.0 * SQRT_2 * cfg.coupling.abs() * max_phi),
            g,
        ),
        RegimeMargin::new("modulation_over_rabi", "omega_mod >> omega_rabi", cfg.omega_mod / cfg.omega_rabi, g),
        RegimeMargin::new(
            "adiabatic_sweep",
            "omega_rabi^2/omega_mod >> omega_r",
            cfg.omega_rabi * cfg.omega_rabi / (cfg.omega_mod * cfg.omega_r),
            g,
        ),
    ];

    Ok(PhaseReadout {
        demodulation: demod,
        phase: wrap_angle(demod.phase - PI),
        demod_window: (traj.times[i0], traj.times[i1]),
        amplitude_slope: slope.slope,
        amplitude_slope_std_error: slope.slope_std_error,
        envelope,
        margins,
        adiabaticity: adiabaticity_margin(&drive, cfg.coupling, 0.0)?,
        measured_adiabaticity: measured_adiabaticity(&traj, &sys),
        max_spin_field_angle: max_spin_field_angle(&traj, &sys, cfg.state.sign()),
        equilibrium_shift: equilibrium_shift(cfg.drive_coupling, cfg.omega_r),
        trajectory: traj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyReadoutConfig {
    pub omega_r: f64,
    pub omega_rabi: f64,
    pub coupling: f64,
    /// Initial flux amplitude `A`, with `φ_r(0) = −A`, `q_r(0) = 0`.
    pub amplitude: f64,
    pub drive_coupling: f64,
    pub state: QubitState,
    pub n_periods: usize,
    pub samples_per_period: usize,
    pub tol: f64,
    pub much_greater: f64,
}

impl FrequencyReadoutConfig {
    pub fn new(omega_r: f64, omega_rabi: f64, coupling: f64, amplitude: f64, state: QubitState, n_periods: usize) -> Self {
        Self {
            omega_r,
            omega_rabi,
            coupling,
            amplitude,
            drive_coupling: 0.0,
            state,
            n_periods,
            samples_per_period: 256,
            tol: 1e-9,
            much_greater: DEFAULT_MUCH_GREATER,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyReadout {
    #[serde(skip)]
    pub trajectory: Trajectory,
    pub estimate: FrequencyEstimate,
    pub measured_omega: f64,
    /// `ω − ω_r`: negative for the ground state.
    pub delta_omega: f64,
    pub leading_prediction: f64,
    pub averaged_prediction: f64,
    pub margins: Vec<RegimeMargin>,
    pub adiabaticity: f64,
    pub measured_adiabaticity: f64,
    pub max_spin_field_angle: f64,
    pub equilibrium_shift: f64,
}

/// Integrate the resonator-drive protocol (`Ω = 0`) and measure the
/// oscillation frequency of `(φ_r, q_r)`.
pub fn run_frequency_readout(cfg: &FrequencyReadoutConfig) -> Result<FrequencyReadout> {
    let drive = ReversalDrive::resonator(cfg.omega_r, cfg.omega_rabi)?;
    if !(cfg.amplitude > 0.0) {
        return Err(invalid("amplitude", "resonator drive needs a positive initial amplitude"));
    }
    if cfg.n_periods < 1 || cfg.samples_per_period < 16 {
        return Err(invalid("n_periods", "need at least 1 period and 16 samples per period"));
    }
    let mut sys = SpinResonator { drive, coupling: cfg.coupling };
    let start = ResonatorPoint { phi: -cfg.amplitude, q: 0.0 };
    let s0 = adiabatic_spin(&effective_field(0.0, start.phi, &drive, cfg.coupling), cfg.state.sign())?;
    let y0 = pack_state(&s0, &start);
    let times = sample_grid(cfg.omega_r, cfg.n_periods, cfg.samples_per_period);
    let t_end = *times.last().unwrap();
    let traj = integrate(&mut sys, &y0, (0.0, t_end), &times, cfg.tol)?;
    let estimate = instantaneous_frequency(&traj.component(3), &traj.component(4), &traj.times)?;
    let delta = estimate.omega - cfg.omega_r;

    let lam = cfg.coupling.abs();
    let a = cfg.amplitude;
    let g = cfg.much_greater;
    let margins = vec![
        RegimeMargin::new("rabi_over_resonator", "omega_rabi >> omega_r", cfg.omega_rabi / cfg.omega_r, g),
        RegimeMargin::new("reversal_amplitude", "2*sqrt(2)*Lambda*A >> omega_rabi", 2.0 * SQRT_2 * lam * a / cfg.omega_rabi, g),
        RegimeMargin::new(
            "adiabatic_sweep",
            "omega_rabi^2/(2*sqrt(2)*Lambda*A) >> omega_r",
            cfg.omega_rabi * cfg.omega_rabi / (2.0 * SQRT_2 * lam * a * cfg.omega_r),
            g,
        ),
        RegimeMargin::new("small_shift", "omega_r >> |delta_omega|", cfg.omega_r / delta.abs(), g),
    ];

    Ok(FrequencyReadout {
        measured_omega: estimate.omega,
        delta_omega: delta,
        leading_prediction: leading_frequency_shift(cfg.coupling, a, cfg.state)?,
        averaged_prediction: averaged_frequency_shift(cfg.coupling, a, cfg.omega_rabi, cfg.omega_r, cfg.state)?,
        estimate,
        margins,
        adiabaticity: adiabaticity_margin(&drive, cfg.coupling, a)?,
        measured_adiabaticity: measured_adiabaticity(&traj, &sys),
        max_spin_field_angle: max_spin_field_angle(&traj, &sys, cfg.state.sign()),
        equilibrium_shift: equilibrium_shift(cfg.drive_coupling, cfg.omega_r),
        trajectory: traj,
    })
}

/// Peak ratio of the field's polar-angle rate to its precession frequency.
///
/// fm-drive: `ω_rΩ/ω_R²`; resonator drive: `2√2Λω_rA/ω_R²`. Both peaks occur
/// when the field crosses the transverse plane.
pub fn adiabaticity_margin(drive: &ReversalDrive, coupling: f64, amplitude: f64) -> Result<f64> {
    let wr2 = drive.rabi_frequency * drive.rabi_frequency;
    if !(wr2 > 0.0) {
        return Err(invalid("omega_rabi", "adiabaticity is undefined without a transverse field"));
    }
    Ok(match drive.mode {
        super::DriveMode::FmDrive => drive.resonator_frequency * drive.modulation_depth / wr2,
        super::DriveMode::ResonatorDrive => {
            2.0 * SQRT_2 * coupling.abs() * drive.resonator_frequency * amplitude.abs() / wr2
        }
    })
}

/// Maximum over the samples of `θ̇_p/|B|`, with `θ_p` the polar angle of the
/// field along the trajectory and its rate from central differences.
pub fn measured_adiabaticity(traj: &Trajectory, sys: &SpinResonator) -> f64 {
    let fields: Vec<_> = traj.iter().map(|(t, y)| sys.field(t, y)).collect();
    let theta = unwrap_phases(&fields.iter().map(|b| b.y.atan2(b.z)).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    for i in 1..theta.len().saturating_sub(1) {
        let rate = (theta[i + 1] - theta[i - 1]) / (traj.times[i + 1] - traj.times[i - 1]);
        worst = worst.max(rate.abs() / fields[i].magnitude());
    }
    worst
}

/// Largest angle between the spin and `sign·B` along the trajectory.
pub fn max_spin_field_angle(traj: &Trajectory, sys: &SpinResonator, sign: f64) -> f64 {
    traj.iter()
        .map(|(t, y)| {
            let b = sys.field(t, y);
            let s = super::SpinVector { x: sign * y[0], y: sign * y[1], z: sign * y[2] };
            s.angle_to(&b)
        })
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    #[serde(rename = "Sx")]
    sx: f64,
    #[serde(rename = "Sy")]
    sy: f64,
    #[serde(rename = "Sz")]
    sz: f64,
    phi_r: f64,
    q_r: f64,
    #[serde(rename = "Bz")]
    bz: f64,
}

/// CSV with columns `t, Sx, Sy, Sz, phi_r, q_r, Bz`.
pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, sys: &SpinResonator, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (t, y) in traj.iter() {
        w.serialize(TrajectoryRow { t, sx: y[0], sy: y[1], sz: y[2], phi_r: y[3], q_r: y[4], bz: sys.field(t, y).z })?;
    }
    w.flush()?;
    Ok(())
}

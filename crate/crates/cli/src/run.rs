//! Mode dispatch and report assembly.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use adiabatic_readout::numerics::demod::wrap_angle;
use adiabatic_readout::open_system::{
    coherence_metric, evolve_master, four_peak_decomposition, init_density, write_four_peak_csv, BathParams, FluxKernel,
};
use adiabatic_readout::quantum::branches::write_branch_track_csv;
use adiabatic_readout::quasiclassical::readout::write_trajectory_csv;
use adiabatic_readout::quantum::{decompose_branches, evolve, flux_density, init_spinor, EvolveOptions, QuantumParams};
use adiabatic_readout::quasiclassical::{
    run_frequency_readout, run_phase_readout, FrequencyReadoutConfig, PhaseReadoutConfig, RegimeMargin,
    ReversalDrive, SpinResonator,
};
use adiabatic_readout::resonator::{coherent_amplitude, gaussian_envelope_check, quantum_quality, spectral_width, time_scales, FluxGrid};
use adiabatic_readout::spectra::{dispersive_shift, effective_nonlinear_params, lamb_shift, SpectrumTable};
use adiabatic_readout::Error;
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{Derived, Margins, Mode, Scenario, ScenarioConfig, SCHEMA_VERSION};
use crate::CliError;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    pub name: String,
    pub value: f64,
    pub estimator: String,
    /// Time (or index) range the estimator used.
    pub window: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub config: ScenarioConfig,
    pub derived: Derived,
    pub margins: Margins,
    /// Margins re-evaluated on the computed trajectory.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runtime_margins: Vec<RegimeMargin>,
    pub observables: Vec<Observable>,
    pub acceptance: Vec<Check>,
    pub integrator: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    pub timing: Timing,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.acceptance.iter().all(|c| c.pass)
    }
}

#[derive(Default)]
struct Outcome {
    runtime_margins: Vec<RegimeMargin>,
    observables: Vec<Observable>,
    acceptance: Vec<Check>,
    integrator: serde_json::Value,
    artifacts: Vec<Artifact>,
}

impl Outcome {
    fn observe(&mut self, name: &str, value: f64, estimator: &str, window: [f64; 2], prediction: Option<f64>) {
        self.observables.push(Observable {
            name: name.into(),
            value,
            estimator: estimator.into(),
            window,
            prediction,
        });
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.acceptance.push(Check { name: name.into(), pass, detail });
    }

    fn artifact(&mut self, file: &str, columns: &[&str]) {
        self.artifacts.push(Artifact { file: file.into(), columns: columns.iter().map(|c| c.to_string()).collect() });
    }
}

fn numerical(op: &'static str) -> impl Fn(Error) -> CliError {
    move |source| CliError::Numerical { op, source }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_error(name: &str) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{name}: {e}"))
}

fn complex(v: Option<[f64; 2]>) -> Complex64 {
    let [re, im] = v.unwrap_or([0.0, 0.0]);
    Complex64::new(re, im)
}

/// Run a validated scenario, writing its artifacts and `report.json` into `out`.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let start = Instant::now();
    let outcome = match scenario.config.mode {
        Mode::PhaseReadout => phase_readout(scenario, out)?,
        Mode::FrequencyReadout => frequency_readout(scenario, out)?,
        Mode::PerturbationTable => perturbation_table(scenario, out)?,
        Mode::NonlinearDecoherence => nonlinear_decoherence(scenario, out)?,
        Mode::SchrodingerCat => schrodinger_cat(scenario, out)?,
        Mode::MasterEquation => master_equation(scenario, out)?,
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        mode: scenario.config.mode,
        config: scenario.config.clone(),
        derived: scenario.derived,
        margins: scenario.margins.clone(),
        runtime_margins: outcome.runtime_margins,
        observables: outcome.observables,
        acceptance: outcome.acceptance,
        integrator: outcome.integrator,
        artifacts: outcome.artifacts,
        timing: Timing { wall_clock_seconds: start.elapsed().as_secs_f64() },
    };
    let mut w = create(out, REPORT_FILE)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Io(format!("{REPORT_FILE}: {e}")))?;
    std::io::Write::flush(&mut w).map_err(|e| CliError::Io(format!("{REPORT_FILE}: {e}")))?;
    Ok(report)
}

fn phase_readout(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let (ph, num) = (&s.config.physics, &s.config.numerics);
    let lam = s.derived.coupling.unwrap();
    let state = ph.state.unwrap();
    let mut cfg = PhaseReadoutConfig::new(
        ph.omega_r.unwrap(),
        ph.omega_rabi.unwrap(),
        ph.omega_mod.unwrap(),
        lam,
        state,
        num.n_periods.unwrap(),
    );
    cfg.samples_per_period = num.samples_per_period.unwrap();
    cfg.tol = num.tol.unwrap();
    cfg.much_greater = s.margins.much_greater;
    cfg.drive_coupling = s.derived.drive_coupling.unwrap_or(0.0);
    let r = run_phase_readout(&cfg).map_err(numerical("quasiclassical::run_phase_readout"))?;
    let t_end = *r.trajectory.times.last().unwrap();

    let mut o = Outcome { runtime_margins: r.margins.clone(), ..Default::default() };
    let expected = -state.sign() * PI / 2.0;
    let demod = "quadrature demodulation of phi_r, referenced to the modulation -cos(omega_r t)";
    o.observe("phase", r.phase, demod, [r.demod_window.0, r.demod_window.1], Some(expected));
    o.observe("amplitude", r.demodulation.amplitude, demod, [r.demod_window.0, r.demod_window.1], None);
    o.observe(
        "amplitude_slope",
        r.amplitude_slope,
        "least-squares line through the per-period maxima of |phi_r|",
        [0.0, t_end],
        Some(lam.abs()),
    );
    o.observe("measured_adiabaticity", r.measured_adiabaticity, "max polar-angle rate of B over |B|", [0.0, t_end], None);
    o.observe("max_spin_field_angle", r.max_spin_field_angle, "max angle between S and sign*B", [0.0, t_end], None);
    let dev = wrap_angle(r.phase - expected).abs();
    o.check("phase", dev < 0.1, format!("|phase - ({expected:.4})| = {dev:.3e} (limit 0.1)"));
    let rel = (r.amplitude_slope / lam.abs() - 1.0).abs();
    o.check("amplitude_slope", rel < 0.1, format!("relative deviation from Lambda {rel:.3e} (limit 0.1)"));

    let sys = SpinResonator { drive: cfg.drive().map_err(numerical("quasiclassical::drive"))?, coupling: lam };
    write_trajectory_csv(&r.trajectory, &sys, create(out, "trajectory.csv")?).map_err(csv_error("trajectory.csv"))?;
    o.artifact("trajectory.csv", &["t", "Sx", "Sy", "Sz", "phi_r", "q_r", "Bz"]);
    o.integrator = serde_json::to_value(r.trajectory.stats).unwrap_or_default();
    Ok(o)
}

fn frequency_readout(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let (ph, num) = (&s.config.physics, &s.config.numerics);
    let lam = s.derived.coupling.unwrap();
    let state = ph.state.unwrap();
    let (wr, rabi) = (ph.omega_r.unwrap(), ph.omega_rabi.unwrap());
    let mut cfg = FrequencyReadoutConfig::new(wr, rabi, lam, ph.amplitude.unwrap(), state, num.n_periods.unwrap());
    cfg.samples_per_period = num.samples_per_period.unwrap();
    cfg.tol = num.tol.unwrap();
    cfg.much_greater = s.margins.much_greater;
    cfg.drive_coupling = s.derived.drive_coupling.unwrap_or(0.0);
    let r = run_frequency_readout(&cfg).map_err(numerical("quasiclassical::run_frequency_readout"))?;
    let t_end = *r.trajectory.times.last().unwrap();

    let mut o = Outcome { runtime_margins: r.margins.clone(), ..Default::default() };
    let window = [r.estimate.t_start, r.estimate.t_end];
    let est = "linear fit of the unwrapped angle atan2(q_r, phi_r)";
    o.observe("delta_omega", r.delta_omega, est, window, Some(r.averaged_prediction));
    o.observe("delta_omega_std_error", r.estimate.std_error, est, window, None);
    o.observe("leading_prediction", r.leading_prediction, "closed form Lambda/A", [0.0, t_end], None);
    o.observe("averaged_prediction", r.averaged_prediction, "period-averaged Bz", [0.0, t_end], None);
    o.observe("max_spin_field_angle", r.max_spin_field_angle, "max angle between S and sign*B", [0.0, t_end], None);
    let sign_ok = r.delta_omega.signum() == -state.sign();
    o.check("shift_sign", sign_ok, format!("delta_omega = {:.6e}", r.delta_omega));
    let rel = (r.delta_omega / r.averaged_prediction - 1.0).abs();
    o.check("shift_magnitude", rel < 0.2, format!("relative deviation from the averaged prediction {rel:.3e} (limit 0.2)"));

    let sys = SpinResonator { drive: ReversalDrive::resonator(wr, rabi).map_err(numerical("quasiclassical::drive"))?, coupling: lam };
    write_trajectory_csv(&r.trajectory, &sys, create(out, "trajectory.csv")?).map_err(csv_error("trajectory.csv"))?;
    o.artifact("trajectory.csv", &["t", "Sx", "Sy", "Sz", "phi_r", "q_r", "Bz"]);
    o.integrator = serde_json::to_value(r.trajectory.stats).unwrap_or_default();
    Ok(o)
}

fn perturbation_table(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let num = &s.config.numerics;
    let (lam, wq, wr) = (s.derived.raw_coupling.unwrap(), s.derived.omega_q.unwrap(), s.config.physics.omega_r.unwrap());
    let n_levels = num.n_levels.unwrap();
    let table = SpectrumTable::build(lam, wq, wr, n_levels, num.n_max).map_err(numerical("spectra::SpectrumTable::build"))?;
    let mut o = Outcome::default();
    let levels = [0.0, n_levels as f64];
    let chi = dispersive_shift(lam, wq, wr).map_err(numerical("spectra::dispersive_shift"))?;
    o.observe("dispersive_shift", chi, "second-order closed form", levels, None);
    let lamb = lamb_shift(lam, wq, wr).map_err(numerical("spectra::lamb_shift"))?;
    o.observe("lamb_shift", lamb, "second-order closed form", levels, None);
    let (mut r2, mut r4) = (0.0f64, 0.0f64);
    for row in &table.rows {
        let exact = row.e_exact.unwrap();
        r2 = r2.max((row.e0 + row.e2 - exact).abs());
        r4 = r4.max((row.e_total - exact).abs());
    }
    o.observe("max_residual_second_order", r2, "max |E0 + E2 - E_exact| over the table", levels, None);
    o.observe("max_residual_fourth_order", r4, "max |E0 + E2 + E4 - E_exact| over the table", levels, None);
    o.check("fourth_order_improves", r4 < r2, format!("residuals {r2:.3e} -> {r4:.3e}"));
    table.write_csv(create(out, "spectrum_table.csv")?).map_err(csv_error("spectrum_table.csv"))?;
    o.artifact("spectrum_table.csv", &["state", "n", "E0", "E2", "E4", "E_total", "E_exact"]);
    o.integrator = serde_json::json!({ "exact_n_max": num.n_max });
    Ok(o)
}

fn nonlinear_decoherence(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let (ph, num) = (&s.config.physics, &s.config.numerics);
    let alpha = complex(ph.alpha);
    let mu_bar = match ph.mu_bar {
        Some(m) => m,
        None => {
            let fit = effective_nonlinear_params(
                s.derived.raw_coupling.unwrap(),
                s.derived.omega_q.unwrap(),
                ph.omega_r.unwrap(),
                ph.state.unwrap(),
                3,
            )
            .map_err(numerical("spectra::effective_nonlinear_params"))?;
            fit.dimensionless_nonlinearity()
        }
    };
    if mu_bar == 0.0 {
        return Err(CliError::Validation("the nonlinearity vanishes; no decoherence time scales exist".into()));
    }
    // |α(τ)| depends on μ̄ only through its magnitude
    let m = mu_bar.abs();
    let ts = time_scales(alpha, m, m * alpha.norm_sqr()).map_err(numerical("resonator::time_scales"))?;
    let t_end = num.t_end.unwrap_or(ts.revival);
    let samples = num.samples.unwrap().max(2);

    let mut o = Outcome::default();
    o.observe("mu_bar", mu_bar, if ph.mu_bar.is_some() { "input" } else { "quadratic fit to perturbative levels n = 0..3" }, [0.0, 3.0], None);
    o.observe("departure_time", ts.departure, "1/(2 mu_bar |alpha|)", [0.0, t_end], None);
    o.observe("revival_time", ts.revival, "pi/mu_bar", [0.0, t_end], None);
    let (width, q_h) = quantum_quality(ts.departure).map_err(numerical("resonator::quantum_quality"))?;
    o.observe("quantum_linewidth", width, "2*sqrt(2)/tau_h", [0.0, ts.departure], None);
    o.observe("quantum_quality", q_h, "tau_h/(2*sqrt(2))", [0.0, ts.departure], None);
    let sw = spectral_width(alpha, m).map_err(numerical("resonator::spectral_width"))?;
    o.observe("spectral_width", sw, "closed-form Fock distribution width", [0.0, t_end], None);
    match gaussian_envelope_check(alpha, m, ts.departure) {
        Ok(dev) => {
            o.observe("envelope_deviation", dev, "relative |alpha(tau_h)| vs Gaussian envelope", [ts.departure, ts.departure], None);
            o.check("gaussian_envelope", dev < 0.05, format!("{dev:.3e} at tau_h (limit 0.05)"));
        }
        Err(e) => o.check("gaussian_envelope", false, e.to_string()),
    }
    let revival = (coherent_amplitude(alpha, m, ts.revival).norm() - alpha.norm()).abs();
    o.observe("revival_error", revival, "||alpha(tau_R)| - |alpha||", [ts.revival, ts.revival], None);
    o.check("revival", revival < 1e-6, format!("{revival:.3e} (limit 1e-6)"));

    let mut w = csv::Writer::from_writer(create(out, "kerr_amplitude.csv")?);
    let io = csv_error("kerr_amplitude.csv");
    w.write_record(["tau", "re_alpha", "im_alpha", "abs_alpha", "gaussian_envelope"]).map_err(&io)?;
    for k in 0..samples {
        let tau = t_end * k as f64 / (samples - 1) as f64;
        let a = coherent_amplitude(alpha, mu_bar, tau);
        let env = alpha.norm() * (-tau * tau / (2.0 * ts.departure * ts.departure)).exp();
        w.write_record([tau, a.re, a.im, a.norm(), env].map(|v| format!("{v:.12e}"))).map_err(&io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("kerr_amplitude.csv: {e}")))?;
    o.artifact("kerr_amplitude.csv", &["tau", "re_alpha", "im_alpha", "abs_alpha", "gaussian_envelope"]);
    o.integrator = serde_json::json!({ "closed_form": true, "samples": samples });
    Ok(o)
}

struct QuantumSetup {
    params: QuantumParams,
    alpha: Complex64,
    c0: Complex64,
    c1: Complex64,
    n_max: usize,
    t_end: f64,
    samples: Vec<f64>,
    grid: FluxGrid,
}

fn quantum_setup(s: &Scenario) -> Result<QuantumSetup, CliError> {
    let (ph, num) = (&s.config.physics, &s.config.numerics);
    let lam = s.derived.coupling.unwrap();
    let wr = ph.omega_r.unwrap();
    let params = QuantumParams::new(wr, ph.omega_rabi.unwrap(), ph.omega_mod.unwrap(), lam).map_err(numerical("quantum::QuantumParams"))?;
    let period = 2.0 * PI / wr;
    let (n_periods, spp) = (num.n_periods.unwrap(), num.samples_per_period.unwrap());
    let t_end = n_periods as f64 * period;
    let samples = (0..=n_periods * spp).map(|k| k as f64 * period / spp as f64).collect();
    let alpha = complex(ph.alpha);
    let grid = FluxGrid::covering(alpha.norm() + lam.abs() * t_end, num.grid_spacing.unwrap()).map_err(numerical("resonator::FluxGrid"))?;
    Ok(QuantumSetup {
        params,
        alpha,
        c0: complex(ph.c0),
        c1: complex(ph.c1),
        n_max: num.n_max.unwrap(),
        t_end,
        samples,
        grid,
    })
}

fn schrodinger_cat(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let q = quantum_setup(s)?;
    let st = init_spinor(q.alpha, q.c0, q.c1, q.n_max).map_err(numerical("quantum::init_spinor"))?;
    let opts = EvolveOptions { tol: s.config.numerics.tol.unwrap(), ..Default::default() };
    let ev = evolve(&st, &q.params, (0.0, q.t_end), &q.samples, &opts).map_err(numerical("quantum::evolve"))?;
    let mut track = Vec::with_capacity(ev.states.len());
    for (t, state) in ev.times.iter().zip(&ev.states) {
        track.push(decompose_branches(state, *t, &q.params, &q.grid).map_err(numerical("quantum::decompose_branches"))?);
    }

    let mut o = Outcome::default();
    let (p0, p1) = (q.c0.norm_sqr(), q.c1.norm_sqr());
    let split: Vec<_> = track.iter().filter(|d| d.reliable && d.peak_count == 2).collect();
    o.check("two_branches", !split.is_empty(), format!("{} of {} samples show two resolved peaks", split.len(), track.len()));
    if let (Some(first), Some(last)) = (split.first(), split.last()) {
        let window = [first.t, last.t];
        let n = split.len() as f64;
        let wa = split.iter().map(|d| d.weight_a).sum::<f64>() / n;
        let wb = split.iter().map(|d| d.weight_b).sum::<f64>() / n;
        let est = "flux-density mass of each branch window, mean over resolved samples";
        o.observe("weight_a", wa, est, window, Some(p0));
        o.observe("weight_b", wb, est, window, Some(p1));
        let (a, b) = (last.a.unwrap(), last.b.unwrap());
        o.observe("branch_separation", (a.center - b.center).abs(), "distance between the branch peaks", [last.t, last.t], None);
        let worst = split.iter().map(|d| (d.weight_a - p0).abs().max((d.weight_b - p1).abs())).fold(0.0, f64::max);
        o.check("branch_weights", worst < 0.05, format!("max deviation from |c0|^2, |c1|^2: {worst:.3e} (limit 0.05)"));
    }
    write_branch_track_csv(&track, create(out, "branch_track.csv")?).map_err(csv_error("branch_track.csv"))?;
    o.artifact("branch_track.csv", &["t", "phi_a", "phi_b", "w_a", "w_b"]);
    let last = ev.states.last().unwrap();
    flux_density(last, &q.grid)
        .map_err(numerical("quantum::flux_density"))?
        .write_csv(create(out, "final_density.csv")?)
        .map_err(csv_error("final_density.csv"))?;
    o.artifact("final_density.csv", &["phi_r", "rho_up", "rho_down", "total"]);
    o.integrator = serde_json::to_value(ev.stats).unwrap_or_default();
    Ok(o)
}

fn master_equation(s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let q = quantum_setup(s)?;
    let ph = &s.config.physics;
    let bath = BathParams::new(ph.quality_factor.unwrap(), ph.diffusion.unwrap()).map_err(numerical("open_system::BathParams"))?;
    let rho0 = init_density(q.alpha, q.c0, q.c1, q.n_max).map_err(numerical("open_system::init_density"))?;
    let wr = q.params.omega_r;
    let taus: Vec<f64> = q.samples.iter().map(|t| wr * t).collect();
    let ev = evolve_master(&rho0, &q.params, &bath, (0.0, wr * q.t_end), &taus, s.config.numerics.tol.unwrap())
        .map_err(numerical("open_system::evolve_master"))?;
    let mut summaries = Vec::with_capacity(ev.states.len());
    for (tau, rho) in ev.times.iter().zip(&ev.states) {
        summaries.push(four_peak_decomposition(rho, *tau, &q.params, &q.grid).map_err(numerical("open_system::four_peak_decomposition"))?);
    }

    let mut o = Outcome::default();
    let drift = ev.stats.max_trace_drift;
    o.check("trace_conserved", drift < 1e-8, format!("max trace drift {drift:.3e} (limit 1e-8)"));
    let (p0, p1) = (q.c0.norm_sqr(), q.c1.norm_sqr());
    let resolved: Vec<_> = summaries.iter().filter(|s| s.resolved).collect();
    let mut coherence = Vec::new();
    for sm in &resolved {
        if let Ok(c) = coherence_metric(sm) {
            coherence.push((sm.tau / wr, c));
        }
    }
    o.check("branches_resolved", !coherence.is_empty(), format!("{} of {} samples resolved", coherence.len(), summaries.len()));
    if let (Some(&(t0, c0)), Some(&(t1, c1))) = (coherence.first(), coherence.last()) {
        let window = [t0, t1];
        let est = "w3 / sqrt(w1 w2) from the spin-resolved four-peak split of the flux kernel";
        o.observe("coherence_final", c1, est, [t1, t1], None);
        let min = coherence.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        o.observe("coherence_min", min, est, window, None);
        if let Some(&(t, _)) = coherence.iter().find(|c| c.1 < 0.5 * c0) {
            o.observe("coherence_half_life", t - t0, "first time the coherence falls below half its first resolved value", window, None);
        }
        let rises = coherence.windows(2).map(|w| w[1].1 - w[0].1).fold(0.0, f64::max);
        o.check("coherence_monotone", rises <= 0.02 * c0, format!("largest rise {rises:.3e}"));
        let worst = resolved.iter().map(|s| (s.w1 - p0).abs().max((s.w2 - p1).abs())).fold(0.0, f64::max);
        let n = resolved.len() as f64;
        let est_w = "diagonal mass of each branch window, mean over resolved samples";
        o.observe("weight_a", resolved.iter().map(|s| s.w1).sum::<f64>() / n, est_w, window, Some(p0));
        o.observe("weight_b", resolved.iter().map(|s| s.w2).sum::<f64>() / n, est_w, window, Some(p1));
        o.check("branch_weights", worst < 0.05, format!("max deviation from |c0|^2, |c1|^2: {worst:.3e} (limit 0.05)"));
    }
    write_four_peak_csv(&summaries, create(out, "four_peak.csv")?).map_err(csv_error("four_peak.csv"))?;
    o.artifact("four_peak.csv", &["tau", "w1", "w2", "w3", "w4", "peak_a", "peak_b", "resolved"]);
    let kernel = FluxKernel::new(ev.states.last().unwrap(), &q.grid).map_err(numerical("open_system::FluxKernel"))?;
    kernel.write_magnitude_csv(create(out, "flux_kernel.csv")?).map_err(csv_error("flux_kernel.csv"))?;
    o.artifact("flux_kernel.csv", &["phi", "|rho(phi, phi')| with phi' from the header row"]);
    o.integrator = serde_json::to_value(ev.stats).unwrap_or_default();
    Ok(o)
}

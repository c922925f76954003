//! Scenario documents: strict JSON schema, per-mode parameter closure and
//! regime margins evaluated at load time.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adiabatic_readout::quantum::recommended_n_max;
use adiabatic_readout::qubit::{inductive_coupling, CouplingParams, QubitState, TwoLevelParams};
use adiabatic_readout::quasiclassical::readout::DEFAULT_MUCH_GREATER;
use adiabatic_readout::quasiclassical::{adiabaticity_margin, ReversalDrive, RegimeMargin};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PhaseReadout,
    FrequencyReadout,
    PerturbationTable,
    NonlinearDecoherence,
    SchrodingerCat,
    MasterEquation,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::PhaseReadout,
        Mode::FrequencyReadout,
        Mode::PerturbationTable,
        Mode::NonlinearDecoherence,
        Mode::SchrodingerCat,
        Mode::MasterEquation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::PhaseReadout => "phase-readout",
            Mode::FrequencyReadout => "frequency-readout",
            Mode::PerturbationTable => "perturbation-table",
            Mode::NonlinearDecoherence => "nonlinear-decoherence",
            Mode::SchrodingerCat => "schrodinger-cat",
            Mode::MasterEquation => "master-equation",
        }
    }

    /// Physics keys the mode accepts.
    fn allowed(self) -> &'static [&'static str] {
        match self {
            Mode::PhaseReadout => &["omega_r", "omega_rabi", "omega_mod", "omega_q", "lambda_prime", "state", "coupling", "lambda", "circuit", "epsilon", "delta"],
            Mode::FrequencyReadout => &["omega_r", "omega_rabi", "omega_mod", "omega_q", "lambda_prime", "state", "amplitude", "coupling", "lambda", "circuit", "epsilon", "delta"],
            Mode::PerturbationTable => &["omega_r", "omega_q", "lambda", "lambda_prime", "circuit", "epsilon", "delta"],
            Mode::NonlinearDecoherence => &["alpha", "mu_bar", "omega_r", "omega_q", "lambda", "state", "epsilon", "delta", "circuit"],
            Mode::SchrodingerCat => &["omega_r", "omega_rabi", "omega_mod", "omega_q", "lambda_prime", "alpha", "c0", "c1", "coupling", "lambda", "circuit", "epsilon", "delta"],
            Mode::MasterEquation => &["omega_r", "omega_rabi", "omega_mod", "omega_q", "lambda_prime", "alpha", "c0", "c1", "quality_factor", "diffusion", "coupling", "lambda", "circuit", "epsilon", "delta"],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected one of {})", Mode::ALL.map(Mode::name).join(", ")))
    }
}

/// Circuit inputs for the inductive coupling, in units with ħ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circuit {
    pub mutual: f64,
    pub inductance: f64,
    pub inductance_1: f64,
    pub capacitance: f64,
    pub phi_ll: f64,
    pub phi_rr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rabi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_mod: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Raw qubit–resonator coupling `λ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_prime: Option<f64>,
    /// Effective coupling `Λ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<Circuit>,
    /// Initial flux amplitude `A` of the resonator drive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Coherent amplitude `[re, im]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<QubitState>,
}

impl Physics {
    fn present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut mark = |set: bool, k: &'static str| {
            if set {
                keys.push(k)
            }
        };
        mark(self.omega_r.is_some(), "omega_r");
        mark(self.omega_rabi.is_some(), "omega_rabi");
        mark(self.omega_mod.is_some(), "omega_mod");
        mark(self.omega_q.is_some(), "omega_q");
        mark(self.epsilon.is_some(), "epsilon");
        mark(self.delta.is_some(), "delta");
        mark(self.lambda.is_some(), "lambda");
        mark(self.lambda_prime.is_some(), "lambda_prime");
        mark(self.coupling.is_some(), "coupling");
        mark(self.circuit.is_some(), "circuit");
        mark(self.amplitude.is_some(), "amplitude");
        mark(self.alpha.is_some(), "alpha");
        mark(self.c0.is_some(), "c0");
        mark(self.c1.is_some(), "c1");
        mark(self.quality_factor.is_some(), "quality_factor");
        mark(self.diffusion.is_some(), "diffusion");
        mark(self.mu_bar.is_some(), "mu_bar");
        mark(self.state.is_some(), "state");
        keys
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// End of the nonlinear-decoherence record in units of `1/ω_r`; the
    /// other modes run for `n_periods`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_periods: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub much_greater: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: Output,
}

/// Couplings resolved from whichever inputs were given.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Derived {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_coupling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive_coupling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cos_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resonator_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margins {
    pub much_greater: f64,
    pub regime: Vec<RegimeMargin>,
    /// Peak polar-angle rate of the field over its precession frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adiabaticity: Option<f64>,
}

/// A validated scenario: the config echo has every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub derived: Derived,
    pub margins: Margins,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn require(v: Option<f64>, key: &str, mode: Mode) -> Result<f64, CliError> {
    let x = v.ok_or_else(|| invalid(format!("mode {mode} requires `physics.{key}`")))?;
    if !x.is_finite() {
        return Err(invalid(format!("`physics.{key}` must be finite")));
    }
    Ok(x)
}

fn positive(v: f64, key: &str) -> Result<f64, CliError> {
    if !(v > 0.0) {
        return Err(invalid(format!("`{key}` must be positive, got {v}")));
    }
    Ok(v)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version)));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    validate(parse_config(&text)?)
}

/// Fill defaults, check the parameter closure of the mode and evaluate the
/// regime margins.
pub fn validate(mut cfg: ScenarioConfig) -> Result<Scenario, CliError> {
    let mode = cfg.mode;
    for key in cfg.physics.present() {
        if !mode.allowed().contains(&key) {
            if key == "omega_mod" && mode == Mode::FrequencyReadout {
                continue;
            }
            return Err(invalid(format!("`physics.{key}` is not used by mode {mode}")));
        }
    }
    let ph = cfg.physics.clone();
    let g = cfg.numerics.much_greater.unwrap_or(DEFAULT_MUCH_GREATER);
    positive(g, "numerics.much_greater")?;
    cfg.numerics.much_greater = Some(g);
    if let Some(tol) = cfg.numerics.tol {
        positive(tol, "numerics.tol")?;
    }

    let mut derived = Derived::default();
    let two_level = match (ph.epsilon, ph.delta) {
        (Some(e), Some(d)) => {
            Some(TwoLevelParams::new(e, d).map_err(|e| invalid(e.to_string()))?)
        }
        (None, None) => None,
        _ => return Err(invalid("`epsilon` and `delta` must be given together")),
    };
    if let Some(tl) = &two_level {
        let gap = tl.gap();
        if let Some(wq) = ph.omega_q {
            if (wq - gap).abs() > 1e-12 * gap {
                return Err(invalid(format!("`omega_q` = {wq} contradicts sqrt(epsilon^2 + delta^2) = {gap}")));
            }
        }
        derived.omega_q = Some(gap);
    } else {
        derived.omega_q = ph.omega_q;
    }
    if let Some(wr) = ph.omega_r {
        positive(wr, "physics.omega_r")?;
        derived.resonator_period = Some(2.0 * PI / wr);
    }

    // raw coupling λ (and λ′) from λ directly or from the circuit
    if ph.circuit.is_some() && (ph.lambda.is_some() || ph.lambda_prime.is_some()) {
        return Err(invalid("circuit inputs and a direct `lambda`/`lambda_prime` are mutually exclusive"));
    }
    if let Some(c) = ph.circuit {
        let wr = require(ph.omega_r, "omega_r", mode)?;
        let (l, lp) = inductive_coupling(c.mutual, c.inductance, c.inductance_1, c.capacitance, wr, c.phi_ll, c.phi_rr)
            .map_err(|e| invalid(e.to_string()))?;
        derived.raw_coupling = Some(l);
        derived.drive_coupling = Some(lp);
    } else {
        derived.raw_coupling = ph.lambda;
        derived.drive_coupling = ph.lambda_prime;
    }

    let needs_effective = !matches!(mode, Mode::PerturbationTable | Mode::NonlinearDecoherence);
    if needs_effective {
        if ph.coupling.is_some() && derived.raw_coupling.is_some() {
            return Err(invalid("`coupling` and the raw coupling (`lambda` or circuit inputs) are mutually exclusive"));
        }
        if let Some(lam) = ph.coupling {
            derived.coupling = Some(lam);
        } else if let Some(raw) = derived.raw_coupling {
            let tl = two_level.ok_or_else(|| invalid("deriving the effective coupling needs `epsilon` and `delta`"))?;
            let cp = CouplingParams::new(raw, derived.drive_coupling.unwrap_or(0.0), &tl).map_err(|e| invalid(e.to_string()))?;
            derived.cos_alpha = Some(cp.cos_alpha);
            derived.coupling = Some(cp.effective_coupling());
        } else {
            return Err(invalid(format!("mode {mode} requires `physics.coupling` or circuit inputs")));
        }
    }

    let num = &mut cfg.numerics;
    let mut margins = Margins { much_greater: g, regime: Vec::new(), adiabaticity: None };
    let mut push = |name: &str, cond: &str, ratio: f64| margins.regime.push(RegimeMargin::new(name, cond, ratio, g));
    match mode {
        Mode::PhaseReadout | Mode::SchrodingerCat | Mode::MasterEquation => {
            let wr = require(ph.omega_r, "omega_r", mode)?;
            let rabi = positive(require(ph.omega_rabi, "omega_rabi", mode)?, "physics.omega_rabi")?;
            let om = positive(require(ph.omega_mod, "omega_mod", mode)?, "physics.omega_mod")?;
            let lam = derived.coupling.unwrap();
            let (periods, spp, tol) = match mode {
                Mode::PhaseReadout => (20, 256, 1e-9),
                Mode::SchrodingerCat => (3, 16, 1e-6),
                _ => (1, 48, 1e-7),
            };
            let n_periods = *num.n_periods.get_or_insert(periods);
            if n_periods == 0 {
                return Err(invalid("`numerics.n_periods` must be at least 1"));
            }
            num.samples_per_period.get_or_insert(spp);
            num.tol.get_or_insert(tol);
            if mode == Mode::PhaseReadout {
                cfg.physics.state.get_or_insert(QubitState::Ground);
            } else {
                let s = 0.5f64.sqrt();
                cfg.physics.c0.get_or_insert([s, 0.0]);
                cfg.physics.c1.get_or_insert([s, 0.0]);
                cfg.physics.alpha.get_or_insert([0.0, 0.0]);
                num.grid_spacing.get_or_insert(0.05);
                positive(num.grid_spacing.unwrap(), "numerics.grid_spacing")?;
            }
            let alpha = cfg.physics.alpha.unwrap_or([0.0, 0.0]);
            if mode != Mode::PhaseReadout && num.n_max.is_none() {
                let t_end = n_periods as f64 * 2.0 * PI / wr;
                let base = recommended_n_max(Complex64::new(alpha[0], alpha[1]), lam, t_end);
                num.n_max = Some(if mode == Mode::MasterEquation { base + 5 } else { base });
            }
            if mode == Mode::MasterEquation {
                let q = require(ph.quality_factor, "quality_factor", mode)?;
                positive(q, "physics.quality_factor")?;
                let d = require(ph.diffusion, "diffusion", mode)?;
                if d < 0.0 {
                    return Err(invalid("`physics.diffusion` must be non-negative"));
                }
            }
            let t_end = n_periods as f64 * 2.0 * PI / wr;
            // the flux envelope grows at rate Λ
            let phi_max = lam.abs() * t_end;
            push("rabi_over_resonator", "omega_rabi >> omega_r", rabi / wr);
            if let Some(wq) = derived.omega_q {
                push("qubit_over_rabi", "omega_q >> omega_rabi", wq / rabi);
            }
            push("modulation_over_backaction", "omega_mod >> 2*sqrt(2)*Lambda*max|phi_r|", om / (2.0 * SQRT_2 * lam.abs() * phi_max));
            push("modulation_over_rabi", "omega_mod >> omega_rabi", om / rabi);
            push("adiabatic_sweep", "omega_rabi^2/omega_mod >> omega_r", rabi * rabi / (om * wr));
            let drive = ReversalDrive::fm(om, wr, rabi).map_err(|e| invalid(e.to_string()))?;
            margins.adiabaticity = Some(adiabaticity_margin(&drive, lam, 0.0).map_err(|e| invalid(e.to_string()))?);
        }
        Mode::FrequencyReadout => {
            let wr = require(ph.omega_r, "omega_r", mode)?;
            let rabi = positive(require(ph.omega_rabi, "omega_rabi", mode)?, "physics.omega_rabi")?;
            if let Some(om) = ph.omega_mod {
                if om != 0.0 {
                    return Err(invalid(format!("mode {mode} requires omega_mod = 0, got {om}")));
                }
            }
            let a = positive(require(ph.amplitude, "amplitude", mode)?, "physics.amplitude")?;
            let lam = derived.coupling.unwrap();
            cfg.physics.state.get_or_insert(QubitState::Ground);
            num.n_periods.get_or_insert(30);
            num.samples_per_period.get_or_insert(256);
            num.tol.get_or_insert(1e-9);
            push("rabi_over_resonator", "omega_rabi >> omega_r", rabi / wr);
            if let Some(wq) = derived.omega_q {
                push("qubit_over_rabi", "omega_q >> omega_rabi", wq / rabi);
            }
            push("reversal_amplitude", "2*sqrt(2)*Lambda*A >> omega_rabi", 2.0 * SQRT_2 * lam.abs() * a / rabi);
            push("adiabatic_sweep", "omega_rabi^2/(2*sqrt(2)*Lambda*A) >> omega_r", rabi * rabi / (2.0 * SQRT_2 * lam.abs() * a * wr));
            let drive = ReversalDrive::resonator(wr, rabi).map_err(|e| invalid(e.to_string()))?;
            margins.adiabaticity = Some(adiabaticity_margin(&drive, lam, a).map_err(|e| invalid(e.to_string()))?);
        }
        Mode::PerturbationTable => {
            let wr = require(ph.omega_r, "omega_r", mode)?;
            let wq = derived.omega_q.ok_or_else(|| invalid(format!("mode {mode} requires `omega_q` or `epsilon` and `delta`")))?;
            let lam = derived.raw_coupling.ok_or_else(|| invalid(format!("mode {mode} requires `lambda` or circuit inputs")))?;
            num.n_levels.get_or_insert(3);
            let n_max = *num.n_max.get_or_insert(30);
            if n_max < num.n_levels.unwrap() + 2 {
                return Err(invalid("`numerics.n_max` must exceed `n_levels` + 1"));
            }
            push("dispersive", "|omega_q - omega_r| >> lambda*sqrt(n_levels+1)", (wq - wr).abs() / (lam.abs() * ((num.n_levels.unwrap() + 1) as f64).sqrt()));
        }
        Mode::NonlinearDecoherence => {
            let alpha = ph.alpha.ok_or_else(|| invalid(format!("mode {mode} requires `physics.alpha`")))?;
            if alpha[0].hypot(alpha[1]) == 0.0 {
                return Err(invalid("`physics.alpha` must be non-zero"));
            }
            if ph.mu_bar.is_some() && derived.raw_coupling.is_some() {
                return Err(invalid("`mu_bar` and the coupling inputs it would be derived from are mutually exclusive"));
            }
            if ph.mu_bar.is_none() {
                require(ph.omega_r, "omega_r", mode)?;
                derived.omega_q.ok_or_else(|| invalid(format!("mode {mode} requires `mu_bar` or `omega_q` and `lambda`")))?;
                derived.raw_coupling.ok_or_else(|| invalid(format!("mode {mode} requires `mu_bar` or `lambda`")))?;
                cfg.physics.state.get_or_insert(QubitState::Ground);
            } else if ph.mu_bar.unwrap() < 0.0 {
                return Err(invalid("`physics.mu_bar` must be non-negative"));
            }
            num.samples.get_or_insert(2000);
        }
    }

    Ok(Scenario { config: cfg, derived, margins })
}

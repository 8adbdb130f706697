//! Experiment specification files.
//!
//! Specs are TOML: flat `key = value` lines grouped in three optional
//! sections. Every key has a default, unknown keys are rejected, and parse
//! errors carry the offending line and key.
//!
//! ```toml
//! seed = 7
//!
//! [scenario]
//! k = 4                 # users, also the number of waveguides
//! l = 8                 # antennas per waveguide
//! s_x = 20.0
//! s_y = 10.0
//! h_pa = 3.0
//! f_c = 28e9
//! n_eff = 1.4
//! sigma2_dbm = -90.0
//! p_max_dbm = 20.0      # used by export-data and eval-duals
//! # delta_min = 0.00535 # defaults to half a free-space wavelength
//! # waveguide_y = [1.25, 3.75, 6.25, 8.75]
//!
//! [experiment]
//! t_f = 100
//! n_s = 10
//! eval_samples = 100
//! p_max_sweep_dbm = [12.0, 16.0, 20.0, 24.0, 28.0]
//! methods = ["proposed", "ssca_thp", "mimo"]
//!
//! [solver]
//! short_solver = "wmmse"   # or "kkt_fit"
//! grad_mode = "omit"       # or "fd", "spsa"
//! fd_step = 1e-7
//! spsa_draws = 4
//! tau = 1e6
//! wmmse_max_iter = 200
//! wmmse_tol = 1e-6
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{dbm_to_watts, SystemConfig};
use crate::error::{Error, Result};
use crate::gradients::GradMode;
use crate::short_term::{KktFitOptions, ShortTermSolver, WmmseOptions};
use crate::ssca::{self, LongTermOptions, StepSchedule};

/// Methods compared by [`run_experiment`](super::run_experiment).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Two-timescale SSCA with the configured short-term solver.
    Proposed,
    /// SSCA over positions with a fixed RZF precoder.
    SscaThp,
    /// Fixed half-wavelength ULA served by WMMSE.
    Mimo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::SscaThp, Method::Mimo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::SscaThp => "ssca_thp",
            Method::Mimo => "mimo",
        }
    }

    /// Parses a comma-separated list such as `proposed,mimo`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Spec("empty method list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Spec(format!(
                    "unknown method `{s}` (expected proposed, ssca_thp or mimo)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortSolverKind {
    Wmmse,
    KktFit,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    /// Scenario with `p_max` set to `p_max_dbm`.
    pub scenario: SystemConfig,
    pub p_max_dbm: f64,
    pub seed: u64,
    pub t_f: usize,
    pub n_s: usize,
    pub eval_samples: usize,
    pub p_max_sweep_dbm: Vec<f64>,
    pub methods: Vec<Method>,
    pub grad_mode: GradMode,
    pub short_solver: ShortSolverKind,
    pub tau: f64,
    pub wmmse: WmmseOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        SpecFile::default()
            .resolve()
            .expect("built-in defaults are valid")
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        file.resolve()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Spec(msg) => Error::Spec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Scenario with the power budget replaced by `dbm`.
    pub fn scenario_at(&self, dbm: f64) -> SystemConfig {
        self.scenario.clone().with_p_max_dbm(dbm)
    }

    pub fn solver(&self) -> ShortTermSolver {
        match self.short_solver {
            ShortSolverKind::Wmmse => ShortTermSolver::Wmmse(self.wmmse),
            ShortSolverKind::KktFit => ShortTermSolver::KktFit(KktFitOptions {
                check_gap: false,
                wmmse: self.wmmse,
                ..KktFitOptions::default()
            }),
        }
    }

    pub fn long_term_options(&self) -> LongTermOptions {
        LongTermOptions {
            schedule: StepSchedule::default(),
            tau: self.tau,
            t_f: self.t_f,
            n_s: self.n_s,
            solver: self.solver(),
            grad_mode: self.grad_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.t_f == 0 || self.n_s == 0 || self.eval_samples == 0 {
            return Err(Error::Spec(
                "t_f, n_s and eval_samples must be positive".into(),
            ));
        }
        if self.p_max_sweep_dbm.is_empty() || self.p_max_sweep_dbm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("p_max_sweep_dbm must be a nonempty list of finite values".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Spec("methods must not be empty".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Spec(format!("tau must be positive, got {}", self.tau)));
        }
        match self.grad_mode {
            GradMode::Fd { step } | GradMode::Spsa { step, .. } if !(step > 0.0) => {
                return Err(Error::Spec("gradient step must be positive".into()));
            }
            GradMode::Spsa { draws: 0, .. } => {
                return Err(Error::Spec("spsa_draws must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    seed: Option<u64>,
    #[serde(default)]
    scenario: ScenarioSection,
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    solver: SolverSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    k: Option<usize>,
    l: Option<usize>,
    s_x: Option<f64>,
    s_y: Option<f64>,
    h_pa: Option<f64>,
    f_c: Option<f64>,
    n_eff: Option<f64>,
    sigma2_dbm: Option<f64>,
    p_max_dbm: Option<f64>,
    delta_min: Option<f64>,
    waveguide_y: Option<Vec<f64>>,
    friis_squared: Option<bool>,
    unit_mse_noise: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    t_f: Option<usize>,
    n_s: Option<usize>,
    eval_samples: Option<usize>,
    p_max_sweep_dbm: Option<Vec<f64>>,
    methods: Option<Vec<Method>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    short_solver: Option<ShortSolverKind>,
    grad_mode: Option<String>,
    fd_step: Option<f64>,
    spsa_draws: Option<usize>,
    tau: Option<f64>,
    wmmse_max_iter: Option<usize>,
    wmmse_tol: Option<f64>,
}

impl SpecFile {
    fn resolve(self) -> Result<ExperimentSpec> {
        let sc = self.scenario;
        let k = sc.k.unwrap_or(4);
        let l = sc.l.unwrap_or(8);
        let mut cfg = SystemConfig::with_dims(k, l);
        cfg.s_x = sc.s_x.unwrap_or(cfg.s_x);
        cfg.s_y = sc.s_y.unwrap_or(cfg.s_y);
        cfg.h_pa = sc.h_pa.unwrap_or(cfg.h_pa);
        if let Some(f_c) = sc.f_c {
            cfg.f_c = f_c;
            cfg.delta_min = cfg.lambda_f() / 2.0;
        }
        cfg.n_eff = sc.n_eff.unwrap_or(cfg.n_eff);
        if let Some(dbm) = sc.sigma2_dbm {
            cfg.sigma2 = dbm_to_watts(dbm);
        }
        cfg.delta_min = sc.delta_min.unwrap_or(cfg.delta_min);
        cfg.waveguide_y = sc
            .waveguide_y
            .unwrap_or_else(|| SystemConfig::even_waveguide_y(cfg.n, cfg.s_y));
        cfg.friis_squared = sc.friis_squared.unwrap_or(false);
        cfg.unit_mse_noise = sc.unit_mse_noise.unwrap_or(false);
        let p_max_dbm = sc.p_max_dbm.unwrap_or(20.0);
        let cfg = cfg.with_p_max_dbm(p_max_dbm);

        let ex = self.experiment;
        let so = self.solver;
        let fd_step = so.fd_step.unwrap_or(1e-7);
        let grad_mode = match so.grad_mode.as_deref().unwrap_or("omit") {
            "omit" => GradMode::Omit,
            "fd" => GradMode::Fd { step: fd_step },
            "spsa" => GradMode::Spsa {
                step: fd_step,
                draws: so.spsa_draws.unwrap_or(4),
            },
            other => return Err(GradMode::parse(other).unwrap_err()),
        };
        let defaults = WmmseOptions::default();
        let spec = ExperimentSpec {
            scenario: cfg,
            p_max_dbm,
            seed: self.seed.unwrap_or(0),
            t_f: ex.t_f.unwrap_or(100),
            n_s: ex.n_s.unwrap_or(10),
            eval_samples: ex.eval_samples.unwrap_or(100),
            p_max_sweep_dbm: ex
                .p_max_sweep_dbm
                .unwrap_or_else(|| vec![12.0, 16.0, 20.0, 24.0, 28.0]),
            methods: ex.methods.unwrap_or_else(|| Method::ALL.to_vec()),
            grad_mode,
            short_solver: so.short_solver.unwrap_or(ShortSolverKind::Wmmse),
            tau: so.tau.unwrap_or(ssca::DEFAULT_TAU),
            wmmse: WmmseOptions {
                max_iter: so.wmmse_max_iter.unwrap_or(defaults.max_iter),
                tol: so.wmmse_tol.unwrap_or(defaults.tol),
                ..defaults
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

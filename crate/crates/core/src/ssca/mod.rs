//! Long-term pinching beamforming by stochastic successive convex
//! approximation.
//!
//! Each iteration draws a mini-batch of CSI samples, solves the short-term
//! problem per sample, folds the sampled objective and gradients into
//! recursive averages, minimises the resulting strongly convex quadratic
//! surrogate over the feasible layouts and finally moves a `gamma` fraction of
//! the way toward that minimiser.

mod projection;

pub use projection::{
    isotonic_nondecreasing, project_layout, project_row, project_row_brute_force, repair_row,
};

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::gradients::{self, GradMode};
use crate::model::{self, ChannelSample, PinchingLayout};
use crate::rate;
use crate::short_term::ShortTermSolver;

/// Step-size rule `t -> value in (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepRule {
    /// `min(1, scale / (offset + t)^power)`.
    Polynomial { scale: f64, offset: f64, power: f64 },
    Constant { value: f64 },
}

impl StepRule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepRule::Polynomial {
                scale,
                offset,
                power,
            } => (scale / (offset + t as f64).powf(power)).min(1.0),
            StepRule::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Averaging weight for the recursive estimates.
    pub rho: StepRule,
    /// Smoothing weight of the iterate update.
    pub gamma: StepRule,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            rho: StepRule::Polynomial {
                scale: 10.0,
                offset: 10.0,
                power: 0.9,
            },
            gamma: StepRule::Polynomial {
                scale: 15.0,
                offset: 15.0,
                power: 1.0,
            },
        }
    }
}

impl StepSchedule {
    pub fn constant(rho: f64, gamma: f64) -> Self {
        StepSchedule {
            rho: StepRule::Constant { value: rho },
            gamma: StepRule::Constant { value: gamma },
        }
    }
}

/// One sample's contribution to the surrogate.
#[derive(Debug, Clone)]
pub struct BatchEntry {
    /// `g(X^t, W_j^t)`, bits/s/Hz.
    pub value: f64,
    pub grad_fixed: DMatrix<f64>,
    pub grad_total: DMatrix<f64>,
}

/// Recursive estimates of the objective and its gradient parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub f: f64,
    pub f_x: DMatrix<f64>,
    pub f_w: DMatrix<f64>,
    /// Number of updates applied so far.
    pub t: usize,
    /// Proximal weight of the surrogate.
    pub tau: f64,
    /// Linear coefficient of the surrogate around the last iterate.
    pub linear: DMatrix<f64>,
}

impl SurrogateState {
    pub fn new(n: usize, l: usize, tau: f64) -> Self {
        SurrogateState {
            f: 0.0,
            f_x: DMatrix::zeros(n, l),
            f_w: DMatrix::zeros(n, l),
            t: 0,
            tau,
            linear: DMatrix::zeros(n, l),
        }
    }

    /// Folds a mini-batch evaluated at the current iterate into the averages
    /// using weight `rho`.
    pub fn update(&mut self, rho: f64, batch: &[BatchEntry]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let count = batch.len() as f64;
        let mean_g = batch.iter().map(|b| b.value).sum::<f64>() / count;
        let mut mean_fixed = DMatrix::zeros(self.f_x.nrows(), self.f_x.ncols());
        let mut mean_total = mean_fixed.clone();
        for b in batch {
            mean_fixed += &b.grad_fixed;
            mean_total += &b.grad_total;
        }
        mean_fixed /= count;
        mean_total /= count;

        let keep = 1.0 - rho;
        self.f = keep * self.f + rho * mean_g;
        let f_x_prev = std::mem::replace(&mut self.f_x, DMatrix::zeros(0, 0));
        self.f_w = &self.f_w * keep + &mean_total * rho;
        self.linear = &mean_fixed * rho + &f_x_prev * keep + &self.f_w;
        self.f_x = f_x_prev * keep + mean_fixed * rho;
        self.t += 1;
        Ok(())
    }

    /// Value of the surrogate at `x`, given the iterate it was built around.
    pub fn surrogate_value(&self, x: &DMatrix<f64>, x_t: &DMatrix<f64>) -> f64 {
        let diff = x - x_t;
        self.f + self.linear.dot(&diff) + self.tau * diff.norm_squared()
    }
}

/// Minimiser of the surrogate over the feasible layouts: the projection of
/// `X^t - linear / (2 tau)`.
pub fn solve_subproblem(
    state: &SurrogateState,
    x_t: &PinchingLayout,
    cfg: &SystemConfig,
) -> PinchingLayout {
    let target = x_t.positions() - &state.linear / (2.0 * state.tau);
    project_layout(cfg, &target)
}

/// `(1 - gamma) X^t + gamma X_bar`, snapped onto the exactly feasible set.
pub fn smooth_update(
    cfg: &SystemConfig,
    x_t: &PinchingLayout,
    x_bar: &PinchingLayout,
    gamma: f64,
) -> PinchingLayout {
    let mut mixed = x_t.positions() * (1.0 - gamma) + x_bar.positions() * gamma;
    for n in 0..mixed.nrows() {
        let mut row: Vec<f64> = mixed.row(n).iter().copied().collect();
        repair_row(&mut row, cfg.delta_min, cfg.s_x);
        for (l, v) in row.into_iter().enumerate() {
            mixed[(n, l)] = v;
        }
    }
    PinchingLayout::new(mixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTermOptions {
    pub schedule: StepSchedule,
    pub tau: f64,
    pub t_f: usize,
    pub n_s: usize,
    pub solver: ShortTermSolver,
    pub grad_mode: GradMode,
}

impl Default for LongTermOptions {
    fn default() -> Self {
        LongTermOptions {
            schedule: StepSchedule::default(),
            tau: DEFAULT_TAU,
            t_f: 100,
            n_s: 10,
            solver: ShortTermSolver::default(),
            grad_mode: GradMode::Omit,
        }
    }
}

/// Default proximal weight, in (bits/s/Hz) / m^2. Position gradients at
/// 28 GHz are O(1e3) bits/s/Hz per meter and change over a wavelength, so
/// this keeps a full step below a millimeter.
pub const DEFAULT_TAU: f64 = 1e6;

/// One row of the long-term trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub f_t: f64,
    pub gamma_t: f64,
    pub rho_t: f64,
    /// Mean sum rate of the mini-batch at `X^t`.
    pub eval_sum_rate: f64,
}

#[derive(Debug, Clone)]
pub struct LongTermResult {
    pub layout: PinchingLayout,
    pub trace: Vec<TraceRow>,
    /// Every iterate `X^0 .. X^{T_f}`.
    pub iterates: Vec<PinchingLayout>,
    pub unconverged_solves: usize,
}

/// Evaluates one mini-batch at `x_t`. Samples are processed in parallel;
/// results keep the input order.
pub fn evaluate_batch(
    cfg: &SystemConfig,
    x_t: &PinchingLayout,
    samples: &[ChannelSample],
    solver: &ShortTermSolver,
    grad_mode: GradMode,
    seeds: &[u64],
) -> Result<(Vec<BatchEntry>, usize)> {
    let results: Vec<Result<(BatchEntry, usize)>> = samples
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(sample, seed)| {
            let eff = model::effective_channel(cfg, x_t, sample)?;
            let out = solver.solve(&eff, cfg)?;
            let value = -rate::sum_rate(&eff, &out.w, cfg.sigma2)?;
            let fixed = gradients::grad_x_fixed_w(cfg, x_t, sample, &out.w)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let total =
                gradients::total_grad_term(cfg, x_t, sample, solver, grad_mode, &mut rng)?;
            let unconverged = usize::from(!out.converged) + total.unconverged_solves;
            Ok((
                BatchEntry {
                    value,
                    grad_fixed: fixed.d,
                    grad_total: total.grad.d,
                },
                unconverged,
            ))
        })
        .collect();
    let mut batch = Vec::with_capacity(samples.len());
    let mut unconverged = 0;
    for r in results {
        let (entry, u) = r?;
        batch.push(entry);
        unconverged += u;
    }
    Ok((batch, unconverged))
}

/// Runs `t_f` SSCA iterations from `init`, drawing each mini-batch from
/// `sampler`.
pub fn run_long_term<F>(
    cfg: &SystemConfig,
    opts: &LongTermOptions,
    init: PinchingLayout,
    mut sampler: F,
) -> Result<LongTermResult>
where
    F: FnMut() -> (ChannelSample, u64),
{
    cfg.validate()?;
    init.validate(cfg)?;
    if opts.t_f == 0 || opts.n_s == 0 {
        return Err(Error::Config("t_f and n_s must be at least 1".into()));
    }
    if !(opts.tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    let mut state = SurrogateState::new(cfg.n, cfg.l, opts.tau);
    let mut x_t = init;
    let mut trace = Vec::with_capacity(opts.t_f);
    let mut iterates = vec![x_t.clone()];
    let mut unconverged = 0;

    for t in 0..opts.t_f {
        let (samples, seeds): (Vec<_>, Vec<_>) = (0..opts.n_s).map(|_| sampler()).unzip();
        let (batch, u) =
            evaluate_batch(cfg, &x_t, &samples, &opts.solver, opts.grad_mode, &seeds)?;
        unconverged += u;
        let rho = opts.schedule.rho.at(t);
        let gamma = opts.schedule.gamma.at(t);
        let batch_rate = -batch.iter().map(|b| b.value).sum::<f64>() / batch.len() as f64;
        state.update(rho, &batch)?;
        let x_bar = solve_subproblem(&state, &x_t, cfg);
        x_t = smooth_update(cfg, &x_t, &x_bar, gamma);
        x_t.validate(cfg)?;
        iterates.push(x_t.clone());
        trace.push(TraceRow {
            t,
            f_t: state.f,
            gamma_t: gamma,
            rho_t: rho,
            eval_sum_rate: batch_rate,
        });
    }
    if unconverged > 0 {
        warn!("{unconverged} short-term solves hit their iteration limit");
    }
    Ok(LongTermResult {
        layout: x_t,
        trace,
        iterates,
        unconverged_solves: unconverged,
    })
}

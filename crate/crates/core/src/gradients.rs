//! Derivatives of the per-sample objective `g(X, W) = -sum_k R_k` (bits/s/Hz)
//! with respect to the antenna positions.
//!
//! Gradients are reported in bits/s/Hz per meter; internal sums run in nats.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::model::{self, ChannelSample, EffectiveChannel, PinchingLayout};
use crate::rate::{self, BeamformingMatrix};
use crate::short_term::ShortTermSolver;
use crate::C64;

/// `N x L` matrix of partial derivatives, bits/s/Hz per meter.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGradient {
    pub d: DMatrix<f64>,
}

impl PositionGradient {
    pub fn zeros(n: usize, l: usize) -> Self {
        PositionGradient {
            d: DMatrix::zeros(n, l),
        }
    }

    /// Largest entrywise relative difference, each entry measured against
    /// `max(|other|, floor)`.
    pub fn max_relative_error(&self, other: &PositionGradient, floor: f64) -> f64 {
        self.d
            .iter()
            .zip(other.d.iter())
            .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
            .fold(0.0, f64::max)
    }
}

/// How the implicit term `dW^s/dX * dg/dW` is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GradMode {
    /// Treat the short-term solution as locally constant in `X`.
    #[default]
    Omit,
    /// Central differences of `x -> g(x, W^s(x))` minus the fixed-`W` partial.
    Fd { step: f64 },
    /// Two-point simultaneous perturbation, averaged over `draws`.
    Spsa { step: f64, draws: usize },
}

impl GradMode {
    pub fn name(&self) -> &'static str {
        match self {
            GradMode::Omit => "omit",
            GradMode::Fd { .. } => "fd",
            GradMode::Spsa { .. } => "spsa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "omit" => Ok(GradMode::Omit),
            "fd" => Ok(GradMode::Fd { step: 1e-7 }),
            "spsa" => Ok(GradMode::Spsa {
                step: 1e-7,
                draws: 4,
            }),
            other => Err(Error::Spec(format!(
                "unknown grad mode `{other}` (expected omit, fd or spsa)"
            ))),
        }
    }
}

/// `g(X, W) = -sum_k R_k` in bits/s/Hz, built through the dense
/// `H^H G` product. Accepts infeasible layouts.
pub fn objective(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
    w: &BeamformingMatrix,
) -> Result<f64> {
    let mut h = crate::CMatrix::zeros(cfg.m(), cfg.k);
    for (k, &pos) in sample.user_pos.iter().enumerate() {
        h.set_column(k, &model::user_channel_unchecked(cfg, layout, pos));
    }
    let g = model::waveguide_response_unchecked(cfg, layout);
    let eff = EffectiveChannel::from_dense(&h, &g)?;
    Ok(-rate::sum_rate(&eff, w, cfg.sigma2)?)
}

/// Exact partial derivative of `g` with respect to every `x[n, l]`, with `W`
/// held fixed.
pub fn grad_x_fixed_w(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
    w: &BeamformingMatrix,
) -> Result<PositionGradient> {
    sample.validate(cfg)?;
    if w.w.nrows() != cfg.n || w.w.ncols() != cfg.k {
        return Err(Error::Dimension("beamformer does not match config".into()));
    }
    let eff = model::effective_channel(cfg, layout, sample)?;
    let z = rate::cross_gains(&eff, w);
    let k_users = cfg.k;

    // d R / d z[k, i] weights: R_k = ln T_k - ln(T_k - |z_kk|^2)
    let mut inv_total = vec![0.0; k_users];
    let mut inv_interf = vec![0.0; k_users];
    for k in 0..k_users {
        let total: f64 = z.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>() + cfg.sigma2;
        inv_total[k] = 1.0 / total;
        inv_interf[k] = 1.0 / (total - z[(k, k)].norm_sqr());
    }

    let kappa = cfg.kappa();
    let guided = 2.0 * PI / cfg.lambda_w();
    let mut d = DMatrix::zeros(cfg.n, cfg.l);
    for n in 0..cfg.n {
        let y_w = cfg.waveguide_y[n];
        for l in 0..cfg.l {
            let x = layout.get(n, l);
            let mut d_rate = 0.0;
            for k in 0..k_users {
                let user = sample.user_pos[k];
                let r = model::pa_user_distance(cfg, x, y_w, user);
                let dr = (x - user[0]) / r;
                let term = model::pa_term(cfg, n, x, user);
                let dh = term * C64::new(-dr / r, -kappa * dr - guided);
                for i in 0..k_users {
                    let dz = dh * w.w[(n, i)];
                    let re = 2.0 * (z[(k, i)].conj() * dz).re;
                    d_rate += re * inv_total[k];
                    if i != k {
                        d_rate -= re * inv_interf[k];
                    }
                }
            }
            d[(n, l)] = -d_rate / LN_2;
        }
    }
    Ok(PositionGradient { d })
}

fn perturbed(layout: &PinchingLayout, n: usize, l: usize, delta: f64) -> PinchingLayout {
    let mut x = layout.positions().clone();
    x[(n, l)] += delta;
    PinchingLayout::new(x)
}

/// Central-difference oracle for [`grad_x_fixed_w`]. Perturbed layouts are
/// not projected back onto the feasible set.
pub fn grad_fd_oracle(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
    w: &BeamformingMatrix,
    step: f64,
) -> Result<PositionGradient> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    sample.validate(cfg)?;
    let mut d = DMatrix::zeros(cfg.n, cfg.l);
    for n in 0..cfg.n {
        for l in 0..cfg.l {
            let plus = objective(cfg, &perturbed(layout, n, l, step), sample, w)?;
            let minus = objective(cfg, &perturbed(layout, n, l, -step), sample, w)?;
            d[(n, l)] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(PositionGradient { d })
}

/// Estimate of the implicit term together with the number of perturbed
/// short-term solves that did not converge.
#[derive(Debug, Clone)]
pub struct TotalTerm {
    pub grad: PositionGradient,
    pub unconverged_solves: usize,
}

struct Composite<'a> {
    cfg: &'a SystemConfig,
    sample: &'a ChannelSample,
    solver: &'a ShortTermSolver,
    unconverged: usize,
}

impl Composite<'_> {
    fn solve_at(&mut self, layout: &PinchingLayout) -> Result<BeamformingMatrix> {
        let eff = model::effective_channel_unchecked(self.cfg, layout, self.sample);
        let out = self.solver.solve(&eff, self.cfg)?;
        if !out.converged {
            self.unconverged += 1;
        }
        Ok(out.w)
    }
}

/// The `dW^s/dX * dg/dW` contribution to the total derivative of
/// `x -> g(x, W^s(x))`. `solver` must be deterministic in its input.
pub fn total_grad_term<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
    solver: &ShortTermSolver,
    mode: GradMode,
    rng: &mut R,
) -> Result<TotalTerm> {
    let mut comp = Composite {
        cfg,
        sample,
        solver,
        unconverged: 0,
    };
    let grad = match mode {
        GradMode::Omit => PositionGradient::zeros(cfg.n, cfg.l),
        GradMode::Fd { step } => {
            let w0 = comp.solve_at(layout)?;
            let fixed = grad_x_fixed_w(cfg, layout, sample, &w0)?;
            let mut d = DMatrix::zeros(cfg.n, cfg.l);
            for n in 0..cfg.n {
                for l in 0..cfg.l {
                    let lp = perturbed(layout, n, l, step);
                    let lm = perturbed(layout, n, l, -step);
                    let wp = comp.solve_at(&lp)?;
                    let wm = comp.solve_at(&lm)?;
                    let gp = objective(cfg, &lp, sample, &wp)?;
                    let gm = objective(cfg, &lm, sample, &wm)?;
                    d[(n, l)] = (gp - gm) / (2.0 * step) - fixed.d[(n, l)];
                }
            }
            PositionGradient { d }
        }
        GradMode::Spsa { step, draws } => {
            let est = spsa_draws(&mut comp, layout, step, draws.max(1), rng)?;
            let mut mean = DMatrix::zeros(cfg.n, cfg.l);
            for e in &est {
                mean += e;
            }
            PositionGradient {
                d: mean / est.len() as f64,
            }
        }
    };
    Ok(TotalTerm {
        grad,
        unconverged_solves: comp.unconverged,
    })
}

/// Individual SPSA estimates of the implicit term.
///
/// Each draw perturbs all positions by `+-step` (Rademacher signs) inside the
/// short-term solver only; the channel stays at `X` so the fixed-`W` part
/// does not enter.
pub fn spsa_estimates<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
    solver: &ShortTermSolver,
    step: f64,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    let mut comp = Composite {
        cfg,
        sample,
        solver,
        unconverged: 0,
    };
    spsa_draws(&mut comp, layout, step, draws, rng)
}

fn spsa_draws<R: Rng + ?Sized>(
    comp: &mut Composite<'_>,
    layout: &PinchingLayout,
    step: f64,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    let (n, l) = (layout.rows(), layout.cols());
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let signs = DMatrix::from_fn(n, l, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let lp = PinchingLayout::new(layout.positions() + &signs * step);
        let lm = PinchingLayout::new(layout.positions() - &signs * step);
        let wp = comp.solve_at(&lp)?;
        let wm = comp.solve_at(&lm)?;
        let gp = objective(comp.cfg, layout, comp.sample, &wp)?;
        let gm = objective(comp.cfg, layout, comp.sample, &wm)?;
        out.push(signs * ((gp - gm) / (2.0 * step)));
    }
    Ok(out)
}

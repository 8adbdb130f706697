//! Per-sample transmit beamforming for a fixed pinching layout.
//!
//! [`wmmse_solve`] is the reference block-coordinate solver. [`kkt_fit`]
//! searches the 2K-parameter family produced by [`kkt_reconstruct`]; it is the
//! per-sample stand-in for an amortised dual predictor and uses the analytic
//! chain-rule gradient from [`kkt_sum_rate_grad`]. [`rzf_precoder`] and
//! [`mrt_precoder`] are closed-form references.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::model::EffectiveChannel;
use crate::rate::{self, BeamformingMatrix};
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmmseOptions {
    pub max_iter: usize,
    /// Relative objective change over the last [`STOP_WINDOW`] sweeps that
    /// ends the loop.
    pub tol: f64,
    /// Anderson-mix the transmit iterates of recent sweeps. A mixed candidate
    /// is only accepted when it strictly lowers the objective (at optimal
    /// receivers and weights), so the trace stays monotone.
    #[serde(default = "default_true")]
    pub extrapolate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for WmmseOptions {
    fn default() -> Self {
        WmmseOptions {
            max_iter: 200,
            tol: 1e-6,
            extrapolate: true,
        }
    }
}

impl WmmseOptions {
    /// Plain block coordinate descent without extrapolation.
    pub fn plain(max_iter: usize, tol: f64) -> Self {
        WmmseOptions {
            max_iter,
            tol,
            extrapolate: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WmmseState {
    pub w: BeamformingMatrix,
    pub u: Vec<C64>,
    pub m: Vec<f64>,
    /// Objective after initialisation and after every block update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iter` was hit with a windowed change above `100 * tol`.
    pub converged: bool,
}

fn check_shape(h: &EffectiveChannel, cfg: &SystemConfig) -> Result<()> {
    if h.users() != cfg.k || h.antennas() != cfg.n {
        return Err(Error::Dimension(format!(
            "effective channel is {}x{}, config expects {}x{}",
            h.users(),
            h.antennas(),
            cfg.k,
            cfg.n
        )));
    }
    Ok(())
}

/// Number of sweeps the stopping test looks back over. Progress at high SNR
/// comes in bursts separated by nearly flat sweeps.
pub const STOP_WINDOW: usize = 10;

/// Weighted-MMSE block coordinate descent, initialised at the RZF precoder.
pub fn wmmse_solve(
    h: &EffectiveChannel,
    cfg: &SystemConfig,
    opts: &WmmseOptions,
) -> Result<WmmseState> {
    check_shape(h, cfg)?;
    let noise = cfg.mse_noise();
    let mut w = rzf_precoder(h, cfg)?;
    let mut u = rate::mmse_receivers(h, &w, noise);
    let mut m = mse_weights(h, &w, &u, noise)?;
    let mut obj = rate::wmmse_objective(h, &w, &u, &m, noise)?;
    let mut trace = vec![obj];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut accel = Anderson::new(5);
    let mut sweep_values = vec![obj];

    while iterations < opts.max_iter {
        iterations += 1;
        let w_prev = w.clone();

        w = wmmse_transmit_update(h, &u, &m, cfg.p_max);
        trace.push(rate::wmmse_objective(h, &w, &u, &m, noise)?);
        u = rate::mmse_receivers(h, &w, noise);
        trace.push(rate::wmmse_objective(h, &w, &u, &m, noise)?);
        m = mse_weights(h, &w, &u, noise)?;
        obj = rate::wmmse_objective(h, &w, &u, &m, noise)?;
        trace.push(obj);

        if opts.extrapolate {
            let residual = to_real(&(&w.w - &w_prev.w));
            if let Some(cand) = accel.propose(to_real(&w.w), residual) {
                let cand = BeamformingMatrix::new(from_real(&cand, cfg.n, cfg.k))
                    .scaled_to_power(cfg.p_max);
                let cu = rate::mmse_receivers(h, &cand, noise);
                let cm = mse_weights(h, &cand, &cu, noise)?;
                let cobj = rate::wmmse_objective(h, &cand, &cu, &cm, noise)?;
                if cobj < obj {
                    w = cand;
                    u = cu;
                    m = cm;
                    obj = cobj;
                    trace.push(obj);
                }
            }
        }

        sweep_values.push(obj);
        if sweep_values.len() > STOP_WINDOW {
            let old = sweep_values[sweep_values.len() - 1 - STOP_WINDOW];
            change = (old - obj).abs() / obj.abs().max(1.0);
            if change < opts.tol {
                break;
            }
        }
    }
    let converged = change <= 100.0 * opts.tol;
    if !converged {
        debug!("wmmse stopped after {iterations} iterations, change {change:e}");
    }
    Ok(WmmseState {
        w,
        u,
        m,
        objective_trace: trace,
        iterations,
        converged,
    })
}

fn to_real(m: &CMatrix) -> DVector<f64> {
    DVector::from_iterator(2 * m.len(), m.iter().flat_map(|v| [v.re, v.im]))
}

fn from_real(v: &DVector<f64>, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_iterator(rows, cols, v.as_slice().chunks(2).map(|c| C64::new(c[0], c[1])))
}

/// Type-II Anderson mixing over the last `depth` sweeps of a fixed-point map.
struct Anderson {
    depth: usize,
    images: Vec<DVector<f64>>,
    residuals: Vec<DVector<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson {
            depth,
            images: Vec::new(),
            residuals: Vec::new(),
        }
    }

    /// Records `T(x)` and `T(x) - x`, returns the mixed iterate once at least
    /// two sweeps are stored.
    fn propose(&mut self, image: DVector<f64>, residual: DVector<f64>) -> Option<DVector<f64>> {
        self.images.push(image);
        self.residuals.push(residual);
        if self.images.len() > self.depth + 1 {
            self.images.remove(0);
            self.residuals.remove(0);
        }
        let cols = self.images.len() - 1;
        if cols == 0 {
            return None;
        }
        let rows = self.residuals[0].len();
        let mut df = DMatrix::zeros(rows, cols);
        let mut dg = DMatrix::zeros(rows, cols);
        for j in 0..cols {
            df.set_column(j, &(&self.residuals[j + 1] - &self.residuals[j]));
            dg.set_column(j, &(&self.images[j + 1] - &self.images[j]));
        }
        let last = &self.residuals[cols];
        let gamma = df.clone().svd(true, true).solve(last, 1e-12 * df.norm()).ok()?;
        let mixed = &self.images[cols] - dg * gamma;
        mixed.iter().all(|v| v.is_finite()).then_some(mixed)
    }
}

fn mse_weights(
    h: &EffectiveChannel,
    w: &BeamformingMatrix,
    u: &[C64],
    noise: f64,
) -> Result<Vec<f64>> {
    Ok(rate::mse_terms(h, w, u, noise)?
        .into_iter()
        .map(|e| 1.0 / e.max(f64::MIN_POSITIVE))
        .collect())
}

/// Exact minimiser of the weighted MSE sum over `W` under the power budget:
/// `w_k = (A + mu I)^-1 m_k u_k^* h_k` with
/// `A = sum_i m_i |u_i|^2 h_i h_i^H` and the smallest feasible `mu >= 0`.
pub fn wmmse_transmit_update(
    h: &EffectiveChannel,
    u: &[C64],
    m: &[f64],
    p_max: f64,
) -> BeamformingMatrix {
    let n = h.antennas();
    let k_users = h.users();
    let mut a = CMatrix::zeros(n, n);
    let mut b = CMatrix::zeros(n, k_users);
    for k in 0..k_users {
        let hk = h.user_column(k);
        a += &hk * hk.adjoint() * C64::from(m[k] * u[k].norm_sqr());
        b.set_column(k, &(&hk * (u[k].conj() * m[k])));
    }
    // enforce exact Hermitian symmetry before the eigensolve
    let a = (&a + a.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(a);
    let d: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let c = eig.eigenvectors.adjoint() * &b;
    let row_energy: Vec<f64> = (0..n)
        .map(|j| c.row(j).iter().map(|v| v.norm_sqr()).sum())
        .collect();
    let power_at = |mu: f64| -> f64 {
        d.iter()
            .zip(&row_energy)
            .map(|(dj, ej)| if *ej == 0.0 { 0.0 } else { ej / (dj + mu).powi(2) })
            .sum()
    };

    let d_max = d.iter().cloned().fold(0.0, f64::max);
    let interior = d.iter().zip(&row_energy).all(|(dj, ej)| *ej == 0.0 || *dj > 1e-13 * d_max)
        && power_at(0.0) <= p_max;
    let mu = if interior {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = (b.norm_squared() / p_max).sqrt();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power_at(mid) > p_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut scaled = c;
    for j in 0..n {
        let f = C64::from(1.0 / (d[j] + mu));
        for kk in 0..k_users {
            scaled[(j, kk)] *= f;
        }
    }
    let w = BeamformingMatrix::new(&eig.eigenvectors * scaled);
    if w.power() > p_max {
        w.scaled_to_power(p_max)
    } else {
        w
    }
}

/// Power allocation coefficients and dual variables of the KKT-structured
/// precoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub rho: Vec<f64>,
    pub lam: Vec<f64>,
}

impl DualParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.rho.len() != k || self.lam.len() != k {
            return Err(Error::Dimension(format!(
                "duals have {} / {} entries, expected {k}",
                self.rho.len(),
                self.lam.len()
            )));
        }
        if self
            .rho
            .iter()
            .chain(&self.lam)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("duals must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Duals whose reconstruction is exactly the RZF precoder with
    /// regularisation `sigma2 K / p_max`, at full power.
    pub fn rzf_equivalent(h: &EffectiveChannel, cfg: &SystemConfig) -> Result<Self> {
        let lam = cfg.p_max / (cfg.sigma2 * cfg.k as f64);
        DualParams {
            rho: vec![1.0; cfg.k],
            lam: vec![lam; cfg.k],
        }
        .power_normalized(h, cfg.p_max)
    }

    /// Rescales `rho` jointly so the reconstructed precoder uses exactly
    /// `p_max`. All-zero `rho` is left unchanged.
    pub fn power_normalized(mut self, h: &EffectiveChannel, p_max: f64) -> Result<Self> {
        let p = kkt_reconstruct(h, &self)?.power();
        if p > 0.0 {
            let s = (p_max / p).sqrt();
            self.rho.iter_mut().for_each(|r| *r *= s);
        }
        Ok(self)
    }
}

/// `w_k = rho_k (I_N + H^H diag(lam) H)^-1 h_k`, where `h_k` is row `k` of
/// the effective channel, conjugate-transposed.
pub fn kkt_reconstruct(h: &EffectiveChannel, duals: &DualParams) -> Result<BeamformingMatrix> {
    duals.validate(h.users())?;
    let a_inv_h = kkt_solve(h, &duals.lam);
    let mut w = a_inv_h;
    for k in 0..h.users() {
        w.column_mut(k).scale_mut(duals.rho[k]);
    }
    Ok(BeamformingMatrix::new(w))
}

/// `(I_N + H^H diag(lam) H)^-1 H^H`.
fn kkt_solve(h: &EffectiveChannel, lam: &[f64]) -> CMatrix {
    let n = h.antennas();
    let hh = h.h.adjoint();
    let lam_c = DVector::from_iterator(lam.len(), lam.iter().map(|v| C64::from(*v)));
    let a = CMatrix::identity(n, n) + &hh * CMatrix::from_diagonal(&lam_c) * &h.h;
    let a = (&a + a.adjoint()) * C64::from(0.5);
    match a.clone().cholesky() {
        Some(ch) => ch.solve(&hh),
        // identity plus PSD is always positive definite; LU covers roundoff
        None => a.lu().solve(&hh).expect("identity-plus-PSD system is nonsingular"),
    }
}

/// Regularised zero forcing `H^H (H H^H + alpha I)^-1` with
/// `alpha = sigma2 K / p_max`, scaled to full power.
pub fn rzf_precoder(h: &EffectiveChannel, cfg: &SystemConfig) -> Result<BeamformingMatrix> {
    check_shape(h, cfg)?;
    rzf_with_alpha(h, cfg.sigma2 * cfg.k as f64 / cfg.p_max, cfg.p_max)
}

pub fn rzf_with_alpha(h: &EffectiveChannel, alpha: f64, p_max: f64) -> Result<BeamformingMatrix> {
    let k = h.users();
    let gram = &h.h * h.h.adjoint() + CMatrix::identity(k, k) * C64::from(alpha);
    let inv = gram
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Dimension("singular channel Gram matrix".into()))?;
    Ok(BeamformingMatrix::new(h.h.adjoint() * inv).scaled_to_power(p_max))
}

/// Matched filter with an equal power split.
pub fn mrt_precoder(h: &EffectiveChannel, p_max: f64) -> BeamformingMatrix {
    let k = h.users();
    let mut w = CMatrix::zeros(h.antennas(), k);
    let per_user = (p_max / k as f64).sqrt();
    for kk in 0..k {
        let hk = h.user_column(kk);
        let norm = hk.norm();
        if norm > 0.0 {
            w.set_column(kk, &(hk * C64::from(per_user / norm)));
        }
    }
    BeamformingMatrix::new(w)
}

/// Sum rate (nats) of the power-normalised KKT precoder and its gradient with
/// respect to `rho` and `lam`.
pub fn kkt_sum_rate_grad(
    h: &EffectiveChannel,
    duals: &DualParams,
    sigma2: f64,
    p_max: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    duals.validate(h.users())?;
    let k_users = h.users();
    let a_inv_h = kkt_solve(h, &duals.lam);
    let mut u = a_inv_h.clone();
    for k in 0..k_users {
        u.column_mut(k).scale_mut(duals.rho[k]);
    }
    let u_norm2 = u.norm_squared();
    if u_norm2 == 0.0 {
        return Ok((0.0, vec![0.0; k_users], vec![0.0; k_users]));
    }
    let s = (p_max / u_norm2).sqrt();
    let w = BeamformingMatrix::new(&u * C64::from(s));
    let value = rate::sum_rate(h, &w, sigma2)? * std::f64::consts::LN_2;
    let g = rate::sum_rate_grad_w(h, &w, sigma2);
    let c = g.dotc(&u).re / u_norm2;
    let g_tilde = (g - &u * C64::from(c)) * C64::from(s);

    let mut d_rho = vec![0.0; k_users];
    let mut d_lam = vec![0.0; k_users];
    let gth = g_tilde.adjoint();
    let uh = u.adjoint();
    for k in 0..k_users {
        let a_k = a_inv_h.column(k);
        d_rho[k] = 2.0 * g_tilde.column(k).dotc(&a_k).re;
        let hk = h.user_column(k);
        let q = &uh * &hk;
        let p = &gth * a_k;
        d_lam[k] = -2.0 * q.dotc(&p).re;
    }
    Ok((value, d_rho, d_lam))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktFitOptions {
    pub max_iter: usize,
    /// Relative sum-rate improvement below which the ascent stops.
    pub tol: f64,
    /// Allowed shortfall against WMMSE, bits/s/Hz.
    pub gap: f64,
    /// Run WMMSE on the same instance and report the gap.
    pub check_gap: bool,
    pub wmmse: WmmseOptions,
}

impl Default for KktFitOptions {
    fn default() -> Self {
        KktFitOptions {
            max_iter: 500,
            tol: 1e-10,
            gap: 0.1,
            check_gap: true,
            wmmse: WmmseOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KktFit {
    pub duals: DualParams,
    pub w: BeamformingMatrix,
    /// Bits/s/Hz.
    pub sum_rate: f64,
    /// Sum rate after every accepted step, starting at the initial point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// WMMSE sum rate on the same instance, when requested.
    pub reference_rate: Option<f64>,
    /// `reference_rate - sum_rate`.
    pub gap: Option<f64>,
    pub within_gap: bool,
}

/// Projected gradient ascent on the sum rate over `(rho, lam)`, with
/// backtracking, starting from the RZF-equivalent duals.
///
/// Coordinates are scaled by their initial values so both blocks are O(1);
/// `rho` is renormalised to full power after every step.
pub fn kkt_fit(h: &EffectiveChannel, cfg: &SystemConfig, opts: &KktFitOptions) -> Result<KktFit> {
    check_shape(h, cfg)?;
    let k = cfg.k;
    let init = DualParams::rzf_equivalent(h, cfg)?;
    let rho_ref = init.rho.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let lam_ref = init.lam[0];

    let to_scaled = |d: &DualParams| -> Vec<f64> {
        d.rho
            .iter()
            .map(|r| r / rho_ref)
            .chain(d.lam.iter().map(|l| l / lam_ref))
            .collect()
    };
    let from_scaled = |z: &[f64]| DualParams {
        rho: z[..k].iter().map(|v| v * rho_ref).collect(),
        lam: z[k..].iter().map(|v| v * lam_ref).collect(),
    };
    let eval = |d: &DualParams| -> Result<(f64, Vec<f64>)> {
        let (v, dr, dl) = kkt_sum_rate_grad(h, d, cfg.sigma2, cfg.p_max)?;
        let grad = dr
            .iter()
            .map(|g| g * rho_ref)
            .chain(dl.iter().map(|g| g * lam_ref))
            .collect();
        Ok((v, grad))
    };

    let mut duals = init;
    let mut z = to_scaled(&duals);
    let (mut value, mut grad) = eval(&duals)?;
    let mut trace = vec![value / std::f64::consts::LN_2];
    let mut step = 1e-2 / grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-300);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = z
                .iter()
                .zip(&grad)
                .map(|(zi, gi)| (zi + step * gi).max(0.0))
                .collect();
            let dir_gain: f64 = cand
                .iter()
                .zip(&z)
                .zip(&grad)
                .map(|((c, zi), gi)| (c - zi) * gi)
                .sum();
            if dir_gain <= 0.0 {
                step *= 0.5;
                continue;
            }
            let cand_duals = from_scaled(&cand).power_normalized(h, cfg.p_max)?;
            let (cv, cg) = eval(&cand_duals)?;
            if cv >= value + 1e-4 * dir_gain {
                accepted = Some((cand_duals, cv, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((nd, nv, ng)) = accepted else {
            break;
        };
        let improvement = (nv - value) / value.abs().max(1e-12);
        duals = nd;
        z = to_scaled(&duals);
        value = nv;
        grad = ng;
        trace.push(value / std::f64::consts::LN_2);
        step *= 2.0;
        if improvement < opts.tol {
            break;
        }
    }

    let w = kkt_reconstruct(h, &duals)?;
    let sum_rate = rate::sum_rate(h, &w, cfg.sigma2)?;
    let (reference_rate, gap) = if opts.check_gap {
        let reference = wmmse_solve(h, cfg, &opts.wmmse)?;
        let r = rate::sum_rate(h, &reference.w, cfg.sigma2)?;
        (Some(r), Some(r - sum_rate))
    } else {
        (None, None)
    };
    let within_gap = gap.is_none_or(|g| g <= opts.gap);
    Ok(KktFit {
        duals,
        w,
        sum_rate,
        trace,
        iterations,
        reference_rate,
        gap,
        within_gap,
    })
}

/// Short-term map `H_eff -> W` used inside the long-term loop and for
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortTermSolver {
    Wmmse(WmmseOptions),
    KktFit(KktFitOptions),
    Rzf,
    Mrt,
}

impl Default for ShortTermSolver {
    fn default() -> Self {
        ShortTermSolver::Wmmse(WmmseOptions::default())
    }
}

#[derive(Debug, Clone)]
pub struct ShortTermOutcome {
    pub w: BeamformingMatrix,
    pub converged: bool,
}

impl ShortTermSolver {
    pub fn solve(&self, h: &EffectiveChannel, cfg: &SystemConfig) -> Result<ShortTermOutcome> {
        match self {
            ShortTermSolver::Wmmse(opts) => {
                let st = wmmse_solve(h, cfg, opts)?;
                Ok(ShortTermOutcome {
                    w: st.w,
                    converged: st.converged,
                })
            }
            ShortTermSolver::KktFit(opts) => {
                let opts = KktFitOptions {
                    check_gap: false,
                    ..*opts
                };
                let fit = kkt_fit(h, cfg, &opts)?;
                Ok(ShortTermOutcome {
                    w: fit.w,
                    converged: fit.iterations < opts.max_iter,
                })
            }
            ShortTermSolver::Rzf => Ok(ShortTermOutcome {
                w: rzf_precoder(h, cfg)?,
                converged: true,
            }),
            ShortTermSolver::Mrt => {
                check_shape(h, cfg)?;
                Ok(ShortTermOutcome {
                    w: mrt_precoder(h, cfg.p_max),
                    converged: true,
                })
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShortTermSolver::Wmmse(_) => "wmmse",
            ShortTermSolver::KktFit(_) => "kkt_fit",
            ShortTermSolver::Rzf => "rzf",
            ShortTermSolver::Mrt => "mrt",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{model, ChannelSample, PinchingLayout};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn instance(seed: u64) -> (SystemConfig, EffectiveChannel) {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = ChannelSample::random(&cfg, &mut rng);
        let h = model::effective_channel(&cfg, &PinchingLayout::grid(&cfg), &sample).unwrap();
        (cfg, h)
    }

    fn random_channel(k: usize, n: usize, scale: f64, seed: u64) -> EffectiveChannel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EffectiveChannel::new(CMatrix::from_fn(k, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale
        }))
    }

    fn sized(k: usize, n: usize) -> SystemConfig {
        let mut cfg = SystemConfig::with_dims(k, 2);
        cfg.n = n;
        cfg.waveguide_y = SystemConfig::even_waveguide_y(n, cfg.s_y);
        cfg
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn single_user_wmmse_reaches_matched_filter_rate() {
        let cfg = sized(1, 3);
        let h = random_channel(1, 3, 1e-4, 3);
        let st = wmmse_solve(&h, &cfg, &WmmseOptions::default()).unwrap();
        let expected = (1.0 + cfg.p_max * h.h.norm_squared() / cfg.sigma2).log2();
        let got = rate::sum_rate(&h, &st.w, cfg.sigma2).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-10);
        assert!(st.converged);
    }

    #[test]
    fn wmmse_trace_is_monotone() {
        for seed in 0..5 {
            let (cfg, h) = instance(seed);
            for opts in [WmmseOptions::default(), WmmseOptions::plain(50, 0.0)] {
                let st = wmmse_solve(&h, &cfg, &opts).unwrap();
                for pair in st.objective_trace.windows(2) {
                    assert!(pair[1] <= pair[0] + 1e-9 * pair[0].abs().max(1.0), "{pair:?}");
                }
                assert!(st.w.within_budget(cfg.p_max));
            }
        }
    }

    #[test]
    fn orthogonal_users_get_water_filling() {
        let cfg = sized(2, 2);
        let gains = [1e-5, 4e-6];
        let h = EffectiveChannel::new(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(gains[0], 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, gains[1])],
        ));
        let snr = |i: usize, p: f64| p * gains[i] * gains[i] / cfg.sigma2;
        let split_rate = |p: f64| (1.0 + snr(0, p)).log2() + (1.0 + snr(1, cfg.p_max - p)).log2();
        let mut best = f64::NEG_INFINITY;
        let (mut lo, mut hi) = (0.0, cfg.p_max);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            let (arg, val) = (0..=1000)
                .map(|i| lo + i as f64 * step)
                .map(|p| (p, split_rate(p)))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            best = val;
            lo = (arg - step).max(0.0);
            hi = (arg + step).min(cfg.p_max);
        }
        let opts = WmmseOptions { tol: 1e-13, ..Default::default() };
        let st = wmmse_solve(&h, &cfg, &opts).unwrap();
        let got = rate::sum_rate(&h, &st.w, cfg.sigma2).unwrap();
        assert_relative_eq!(got, best, max_relative = 1e-8);
    }

    #[test]
    fn wmmse_improves_on_rzf() {
        for seed in 0..10 {
            let (cfg, h) = instance(seed);
            let st = wmmse_solve(&h, &cfg, &WmmseOptions::default()).unwrap();
            let r_w = rate::sum_rate(&h, &st.w, cfg.sigma2).unwrap();
            let r_z = rate::sum_rate(&h, &rzf_precoder(&h, &cfg).unwrap(), cfg.sigma2).unwrap();
            assert!(r_w >= r_z - 1e-9, "seed {seed}: {r_w} < {r_z}");
        }
    }

    #[test]
    fn zero_duals_give_matched_filter() {
        let h = random_channel(3, 4, 1.0, 7);
        let duals = DualParams { rho: vec![0.5, 2.0, 1.0], lam: vec![0.0; 3] };
        let w = kkt_reconstruct(&h, &duals).unwrap();
        for k in 0..3 {
            let expected = h.user_column(k) * C64::from(duals.rho[k]);
            assert!((w.column(k) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn rzf_equivalent_duals_reproduce_rzf() {
        for seed in 0..5 {
            let (cfg, h) = instance(seed);
            let duals = DualParams::rzf_equivalent(&h, &cfg).unwrap();
            let w = kkt_reconstruct(&h, &duals).unwrap();
            let z = rzf_precoder(&h, &cfg).unwrap();
            assert!(max_abs_diff(&w.w, &z.w) <= 1e-10 * z.w.norm());
            assert!(duals.rho.iter().all(|r| (r - duals.rho[0]).abs() <= 1e-12 * r));
        }
    }

    #[test]
    fn scalar_reconstruction() {
        let hv = C64::new(0.3, -0.4);
        let h = EffectiveChannel::new(CMatrix::from_element(1, 1, hv));
        let duals = DualParams { rho: vec![2.0], lam: vec![3.0] };
        let w = kkt_reconstruct(&h, &duals).unwrap();
        // h here is the row entry, so the column used is its conjugate
        let expected = hv.conj() * 2.0 / (1.0 + 3.0 * hv.norm_sqr());
        assert!((w.w[(0, 0)] - expected).norm() < 1e-15);
    }

    #[test]
    fn reconstruction_matches_push_through_form() {
        let h = random_channel(3, 5, 1.0, 11);
        let duals = DualParams { rho: vec![1.0, 0.3, 2.5], lam: vec![0.7, 1.9, 0.1] };
        let w = kkt_reconstruct(&h, &duals).unwrap();
        let lam = CMatrix::from_diagonal(&DVector::from_iterator(3, duals.lam.iter().map(|v| C64::from(*v))));
        let rho = CMatrix::from_diagonal(&DVector::from_iterator(3, duals.rho.iter().map(|v| C64::from(*v))));
        let inner = (CMatrix::identity(3, 3) + &lam * &h.h * h.h.adjoint()).try_inverse().unwrap();
        let alt = h.h.adjoint() * inner * rho;
        assert!(max_abs_diff(&w.w, &alt) < 1e-12);
    }

    #[test]
    fn power_normalisation_hits_budget() {
        let (cfg, h) = instance(2);
        let duals = DualParams { rho: vec![1.0, 2.0, 3.0, 4.0], lam: vec![1e9; 4] }
            .power_normalized(&h, cfg.p_max)
            .unwrap();
        let w = kkt_reconstruct(&h, &duals).unwrap();
        assert_relative_eq!(w.power(), cfg.p_max, max_relative = 1e-12);
    }

    #[test]
    fn bad_duals_are_rejected() {
        let h = random_channel(2, 2, 1.0, 1);
        let short = DualParams { rho: vec![1.0], lam: vec![1.0, 1.0] };
        assert!(matches!(kkt_reconstruct(&h, &short), Err(Error::Dimension(_))));
        let negative = DualParams { rho: vec![1.0, -1.0], lam: vec![1.0, 1.0] };
        assert!(matches!(kkt_reconstruct(&h, &negative), Err(Error::Config(_))));
        let nan = DualParams { rho: vec![1.0, 1.0], lam: vec![f64::NAN, 1.0] };
        assert!(kkt_reconstruct(&h, &nan).is_err());
    }

    #[test]
    fn rzf_tends_to_zero_forcing() {
        let h = random_channel(3, 4, 1.0, 5);
        let w = rzf_with_alpha(&h, 1e-14, 1.0).unwrap();
        let z = &h.h * &w.w;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(z[(i, j)].norm() < 1e-8 * z[(i, i)].norm());
                }
            }
        }
    }

    #[test]
    fn rzf_uses_full_power_and_matches_mrt_for_one_user() {
        let (cfg, h) = instance(4);
        assert_relative_eq!(rzf_precoder(&h, &cfg).unwrap().power(), cfg.p_max, max_relative = 1e-12);

        let cfg1 = sized(1, 4);
        let h1 = random_channel(1, 4, 1e-3, 9);
        let z = rzf_precoder(&h1, &cfg1).unwrap();
        let m = mrt_precoder(&h1, cfg1.p_max);
        assert!(max_abs_diff(&z.w, &m.w) < 1e-12 * m.w.norm());
    }

    #[test]
    fn mrt_splits_power_equally() {
        let h = random_channel(3, 4, 1.0, 8);
        let w = mrt_precoder(&h, 0.3);
        for k in 0..3 {
            assert_relative_eq!(w.column(k).norm_squared(), 0.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn kkt_gradient_matches_finite_differences() {
        let cfg = sized(3, 3);
        let h = random_channel(3, 3, 1e-5, 21);
        let duals = DualParams { rho: vec![1.0, 0.6, 1.4], lam: vec![2e10, 5e10, 1e10] };
        let (v0, dr, dl) = kkt_sum_rate_grad(&h, &duals, cfg.sigma2, cfg.p_max).unwrap();
        let rate_of = |d: &DualParams| -> f64 {
            let w = kkt_reconstruct(&h, d).unwrap().scaled_to_power(cfg.p_max);
            rate::sum_rate(&h, &w, cfg.sigma2).unwrap() * LN_2
        };
        assert_relative_eq!(v0, rate_of(&duals), max_relative = 1e-12);
        for k in 0..3 {
            let e = 1e-6 * duals.rho[k];
            let mut p = duals.clone();
            let mut m = duals.clone();
            p.rho[k] += e;
            m.rho[k] -= e;
            let fd = (rate_of(&p) - rate_of(&m)) / (2.0 * e);
            assert_relative_eq!(dr[k], fd, max_relative = 1e-5, epsilon = 1e-9 / duals.rho[k]);

            let e = 1e-6 * duals.lam[k];
            let mut p = duals.clone();
            let mut m = duals.clone();
            p.lam[k] += e;
            m.lam[k] -= e;
            let fd = (rate_of(&p) - rate_of(&m)) / (2.0 * e);
            assert_relative_eq!(dl[k], fd, max_relative = 1e-5, epsilon = 1e-9 / duals.lam[k]);
        }
    }

    #[test]
    fn kkt_fit_single_user_is_matched_filter() {
        let cfg = sized(1, 3);
        let h = random_channel(1, 3, 1e-4, 2);
        let fit = kkt_fit(&h, &cfg, &KktFitOptions::default()).unwrap();
        let expected = (1.0 + cfg.p_max * h.h.norm_squared() / cfg.sigma2).log2();
        assert_relative_eq!(fit.sum_rate, expected, max_relative = 1e-10);
        assert!(fit.within_gap);
    }

    #[test]
    fn kkt_fit_ascends_and_stays_close_to_wmmse() {
        for seed in 0..5 {
            let (cfg, h) = instance(seed);
            let fit = kkt_fit(&h, &cfg, &KktFitOptions::default()).unwrap();
            for pair in fit.trace.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
            assert_relative_eq!(fit.w.power(), cfg.p_max, max_relative = 1e-9);
            assert!(fit.within_gap, "seed {seed}: gap {:?}", fit.gap);
            assert_relative_eq!(*fit.trace.last().unwrap(), fit.sum_rate, max_relative = 1e-9);
        }
    }

    #[test]
    fn solver_dispatch_and_names() {
        let (cfg, h) = instance(0);
        for s in [
            ShortTermSolver::default(),
            ShortTermSolver::KktFit(KktFitOptions::default()),
            ShortTermSolver::Rzf,
            ShortTermSolver::Mrt,
        ] {
            let out = s.solve(&h, &cfg).unwrap();
            assert!(out.w.within_budget(cfg.p_max), "{}", s.name());
            let text = serde_json::to_string(&s).unwrap();
            let back: ShortTermSolver = serde_json::from_str(&text).unwrap();
            assert_eq!(back, s);
        }
        let wrong = sized(2, 4);
        assert!(ShortTermSolver::Mrt.solve(&h, &wrong).is_err());
    }
}

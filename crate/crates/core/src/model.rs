//! Line-of-sight channel synthesis for pinching antennas on waveguides.
//!
//! Antenna `(n, l)` sits at `(x[n, l], waveguide_y[n], h_pa)`. Signals travel
//! `x[n, l]` meters inside waveguide `n` (phase only, power split evenly over
//! the `L` antennas) and then radiate to the users over a free-space `1/r`
//! line-of-sight link.
//!
//! Antenna index `m = n * L + l` is used for all `M = N * L` dimensional
//! quantities.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::{CMatrix, CVector, C64};

/// Positions of all pinching antennas along the x-axis, one row per waveguide.
#[derive(Debug, Clone, PartialEq)]
pub struct PinchingLayout {
    x: DMatrix<f64>,
}

impl PinchingLayout {
    /// Wraps positions without checking feasibility.
    pub fn new(x: DMatrix<f64>) -> Self {
        PinchingLayout { x }
    }

    /// Wraps positions and checks them against `cfg`.
    pub fn checked(cfg: &SystemConfig, x: DMatrix<f64>) -> Result<Self> {
        let layout = PinchingLayout { x };
        layout.validate(cfg)?;
        Ok(layout)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::Dimension("ragged layout rows".into()));
        }
        Ok(PinchingLayout {
            x: DMatrix::from_fn(n, l, |i, j| rows[i][j]),
        })
    }

    /// Evenly spread antennas, `x[n, l] = (l + 1/2) * s_x / L` (zero-based `l`),
    /// projected onto the feasible set when the spacing does not fit.
    pub fn grid(cfg: &SystemConfig) -> Self {
        let x = DMatrix::from_fn(cfg.n, cfg.l, |_, l| {
            (l as f64 + 0.5) * cfg.s_x / cfg.l as f64
        });
        let layout = PinchingLayout { x };
        if layout.validate(cfg).is_ok() {
            layout
        } else {
            crate::ssca::project_layout(cfg, &layout.x)
        }
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_positions(self) -> DMatrix<f64> {
        self.x
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn get(&self, n: usize, l: usize) -> f64 {
        self.x[(n, l)]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.x.nrows())
            .map(|n| self.x.row(n).iter().copied().collect())
            .collect()
    }

    /// Checks ordering, minimum spacing and the waveguide extent exactly
    /// (no tolerance).
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.x.nrows() != cfg.n || self.x.ncols() != cfg.l {
            return Err(Error::Dimension(format!(
                "layout is {}x{}, expected {}x{}",
                self.x.nrows(),
                self.x.ncols(),
                cfg.n,
                cfg.l
            )));
        }
        for n in 0..cfg.n {
            for l in 0..cfg.l {
                let v = self.x[(n, l)];
                let fail = |reason: String| Error::InfeasibleLayout {
                    waveguide: n,
                    antenna: l,
                    reason,
                };
                if !v.is_finite() || v < 0.0 || v > cfg.s_x {
                    return Err(fail(format!("position {v} outside [0, {}]", cfg.s_x)));
                }
                if l > 0 {
                    let gap = v - self.x[(n, l - 1)];
                    if gap < cfg.delta_min {
                        return Err(fail(format!(
                            "spacing {gap} below minimum {}",
                            cfg.delta_min
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, cfg: &SystemConfig) -> bool {
        self.validate(cfg).is_ok()
    }
}

/// Ground-plane positions of all users for one CSI realisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    pub user_pos: Vec<[f64; 2]>,
}

impl ChannelSample {
    pub fn new(user_pos: Vec<[f64; 2]>) -> Self {
        ChannelSample { user_pos }
    }

    /// Draws all `K` users uniformly over the service region.
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let user_pos = (0..cfg.k)
            .map(|_| {
                let x = rng.random::<f64>() * cfg.s_x;
                let y = rng.random::<f64>() * cfg.s_y;
                [x, y]
            })
            .collect();
        ChannelSample { user_pos }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.user_pos.len() != cfg.k {
            return Err(Error::Dimension(format!(
                "sample has {} users, expected {}",
                self.user_pos.len(),
                cfg.k
            )));
        }
        for (user, &[x, y]) in self.user_pos.iter().enumerate() {
            check_user(cfg, user, [x, y])?;
        }
        Ok(())
    }

    /// Stacks the user channels into an `M x K` matrix, column `k` = `h_k`.
    pub fn channel_matrix(&self, cfg: &SystemConfig, layout: &PinchingLayout) -> Result<CMatrix> {
        self.validate(cfg)?;
        let mut h = CMatrix::zeros(cfg.m(), cfg.k);
        for (k, &pos) in self.user_pos.iter().enumerate() {
            h.set_column(k, &user_channel(cfg, layout, pos)?);
        }
        Ok(h)
    }
}

fn check_user(cfg: &SystemConfig, user: usize, [x, y]: [f64; 2]) -> Result<()> {
    if !(0.0..=cfg.s_x).contains(&x) || !(0.0..=cfg.s_y).contains(&y) {
        return Err(Error::UserOutsideRegion { user, x, y });
    }
    Ok(())
}

/// `K x N` composite channel; row `k` is `h_k^H G(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub h: CMatrix,
}

impl EffectiveChannel {
    pub fn new(h: CMatrix) -> Self {
        EffectiveChannel { h }
    }

    /// `H^H G` from the stacked user channels and the waveguide response.
    pub fn from_dense(h: &CMatrix, g: &CMatrix) -> Result<Self> {
        if h.nrows() != g.nrows() {
            return Err(Error::Dimension(format!(
                "channel has {} rows, waveguide response has {}",
                h.nrows(),
                g.nrows()
            )));
        }
        Ok(EffectiveChannel { h: h.adjoint() * g })
    }

    pub fn users(&self) -> usize {
        self.h.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.h.ncols()
    }

    /// `h_hat_k` as an `N x 1` column, i.e. the conjugate transpose of row `k`.
    pub fn user_column(&self, k: usize) -> CVector {
        self.h.row(k).adjoint()
    }
}

/// Distance from antenna `(x, y_w, h_pa)` to a ground user.
pub fn pa_user_distance(cfg: &SystemConfig, x: f64, y_w: f64, user: [f64; 2]) -> f64 {
    let dx = x - user[0];
    let dy = y_w - user[1];
    (dx * dx + dy * dy + cfg.h_pa * cfg.h_pa).sqrt()
}

/// Free-space downlink coefficient `sqrt(beta) exp(-j kappa r) / r`.
pub fn los_coefficient(cfg: &SystemConfig, r: f64) -> C64 {
    C64::from_polar(cfg.beta().sqrt() / r, -cfg.kappa() * r)
}

/// In-waveguide response of an antenna pinched `x` meters from the feed.
pub fn guided_coefficient(cfg: &SystemConfig, x: f64) -> C64 {
    let phase = -2.0 * std::f64::consts::PI * x / cfg.lambda_w();
    C64::from_polar(1.0 / (cfg.l as f64).sqrt(), phase)
}

/// Block-diagonal `M x N` waveguide response `G(X)`.
pub fn waveguide_response(cfg: &SystemConfig, layout: &PinchingLayout) -> Result<CMatrix> {
    layout.validate(cfg)?;
    Ok(waveguide_response_unchecked(cfg, layout))
}

/// As [`waveguide_response`] but accepts infeasible positions (used by
/// finite-difference probes).
pub fn waveguide_response_unchecked(cfg: &SystemConfig, layout: &PinchingLayout) -> CMatrix {
    let mut g = CMatrix::zeros(cfg.m(), cfg.n);
    for n in 0..cfg.n {
        for l in 0..cfg.l {
            g[(n * cfg.l + l, n)] = guided_coefficient(cfg, layout.get(n, l));
        }
    }
    g
}

/// Channel column `h_k` (length `M`) of a user at `user_pos`.
///
/// Entries are stored un-conjugated, so `h_k^H` has entries
/// `sqrt(beta) exp(-j kappa r) / r`.
pub fn user_channel(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    user_pos: [f64; 2],
) -> Result<CVector> {
    check_user(cfg, 0, user_pos)?;
    if layout.rows() != cfg.n || layout.cols() != cfg.l {
        return Err(Error::Dimension("layout does not match config".into()));
    }
    Ok(user_channel_unchecked(cfg, layout, user_pos))
}

pub(crate) fn user_channel_unchecked(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    user_pos: [f64; 2],
) -> CVector {
    let mut h = CVector::zeros(cfg.m());
    for n in 0..cfg.n {
        for l in 0..cfg.l {
            let r = pa_user_distance(cfg, layout.get(n, l), cfg.waveguide_y[n], user_pos);
            debug_assert!(r >= cfg.h_pa);
            h[n * cfg.l + l] = los_coefficient(cfg, r).conj();
        }
    }
    h
}

/// Contribution of antenna `(n, l)` to entry `(k, n)` of the effective channel.
pub fn pa_term(cfg: &SystemConfig, n: usize, x: f64, user: [f64; 2]) -> C64 {
    let r = pa_user_distance(cfg, x, cfg.waveguide_y[n], user);
    los_coefficient(cfg, r) * guided_coefficient(cfg, x)
}

/// Effective channel `H^H G(X)` evaluated block by block.
pub fn effective_channel(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
) -> Result<EffectiveChannel> {
    sample.validate(cfg)?;
    if layout.rows() != cfg.n || layout.cols() != cfg.l {
        return Err(Error::Dimension(format!(
            "layout is {}x{}, expected {}x{}",
            layout.rows(),
            layout.cols(),
            cfg.n,
            cfg.l
        )));
    }
    Ok(effective_channel_unchecked(cfg, layout, sample))
}

pub(crate) fn effective_channel_unchecked(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    sample: &ChannelSample,
) -> EffectiveChannel {
    let h = CMatrix::from_fn(cfg.k, cfg.n, |k, n| {
        (0..cfg.l)
            .map(|l| pa_term(cfg, n, layout.get(n, l), sample.user_pos[k]))
            .sum()
    });
    EffectiveChannel { h }
}

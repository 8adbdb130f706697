//! SINR, rates, MSE terms and the weighted-MMSE objective.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::EffectiveChannel;
use crate::{CMatrix, CVector, C64};

/// Transmit beamformers, one column `w_k` per user (`N x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix {
    pub w: CMatrix,
}

impl BeamformingMatrix {
    pub fn new(w: CMatrix) -> Self {
        BeamformingMatrix { w }
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        BeamformingMatrix {
            w: CMatrix::zeros(n, k),
        }
    }

    /// Total transmit power `sum_k ||w_k||^2`.
    pub fn power(&self) -> f64 {
        self.w.norm_squared()
    }

    pub fn within_budget(&self, p_max: f64) -> bool {
        self.power() <= p_max * (1.0 + 1e-9)
    }

    /// Rescales all columns jointly so the total power equals `p_max`.
    /// A zero matrix is returned unchanged.
    pub fn scaled_to_power(mut self, p_max: f64) -> Self {
        let p = self.power();
        if p > 0.0 {
            self.w *= C64::from((p_max / p).sqrt());
        }
        self
    }

    pub fn column(&self, k: usize) -> CVector {
        self.w.column(k).into_owned()
    }
}

/// Per-user SINR and rate (bits/s/Hz) plus their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_rate: f64,
}

fn check_dims(h: &EffectiveChannel, w: &BeamformingMatrix) -> Result<()> {
    if h.antennas() != w.w.nrows() || h.users() != w.w.ncols() {
        return Err(Error::Dimension(format!(
            "effective channel is {}x{}, beamformer is {}x{}",
            h.users(),
            h.antennas(),
            w.w.nrows(),
            w.w.ncols()
        )));
    }
    Ok(())
}

/// Received amplitudes `z[k, i] = h_hat_k^H w_i`.
pub fn cross_gains(h: &EffectiveChannel, w: &BeamformingMatrix) -> CMatrix {
    &h.h * &w.w
}

pub fn sinr_and_rate(
    h: &EffectiveChannel,
    w: &BeamformingMatrix,
    sigma2: f64,
) -> Result<RateReport> {
    check_dims(h, w)?;
    let z = cross_gains(h, w);
    let k_users = h.users();
    let mut sinr = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let signal = z[(k, k)].norm_sqr();
        let interference: f64 = (0..k_users)
            .filter(|&i| i != k)
            .map(|i| z[(k, i)].norm_sqr())
            .sum();
        sinr.push(signal / (interference + sigma2));
    }
    let rate: Vec<f64> = sinr.iter().map(|s| s.ln_1p() / LN_2).collect();
    let sum_rate = rate.iter().sum();
    Ok(RateReport {
        sinr,
        rate,
        sum_rate,
    })
}

/// Sum rate in bits/s/Hz.
pub fn sum_rate(h: &EffectiveChannel, w: &BeamformingMatrix, sigma2: f64) -> Result<f64> {
    Ok(sinr_and_rate(h, w, sigma2)?.sum_rate)
}

/// MSE of each user's linear estimate `u_k y_k` of its symbol.
///
/// `noise` weights the `|u_k|^2` term; pass `sigma2` for the
/// rate-equivalent form or `1.0` for the unit-noise form.
pub fn mse_terms(
    h: &EffectiveChannel,
    w: &BeamformingMatrix,
    u: &[C64],
    noise: f64,
) -> Result<Vec<f64>> {
    check_dims(h, w)?;
    if u.len() != h.users() {
        return Err(Error::Dimension(format!(
            "{} receive coefficients for {} users",
            u.len(),
            h.users()
        )));
    }
    let z = cross_gains(h, w);
    let k_users = h.users();
    Ok((0..k_users)
        .map(|k| {
            let uk = u[k];
            let mut e = (uk * z[(k, k)] - 1.0).norm_sqr();
            for i in (0..k_users).filter(|&i| i != k) {
                e += (uk * z[(k, i)]).norm_sqr();
            }
            e + noise * uk.norm_sqr()
        })
        .collect())
}

/// MMSE receive coefficients `u_k = z_kk^* / (sum_i |z_ki|^2 + noise)`.
pub fn mmse_receivers(h: &EffectiveChannel, w: &BeamformingMatrix, noise: f64) -> Vec<C64> {
    let z = cross_gains(h, w);
    (0..h.users())
        .map(|k| {
            let total: f64 = z.row(k).iter().map(|v| v.norm_sqr()).sum();
            z[(k, k)].conj() / (total + noise)
        })
        .collect()
}

/// `sum_k (m_k E_k - ln m_k)`.
pub fn wmmse_objective(
    h: &EffectiveChannel,
    w: &BeamformingMatrix,
    u: &[C64],
    m: &[f64],
    noise: f64,
) -> Result<f64> {
    if m.len() != h.users() {
        return Err(Error::Dimension(format!(
            "{} weights for {} users",
            m.len(),
            h.users()
        )));
    }
    if let Some((index, &value)) = m.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let e = mse_terms(h, w, u, noise)?;
    Ok(e.iter().zip(m).map(|(e, m)| m * e - m.ln()).sum())
}

/// Wirtinger gradient `dR/dW^*` of the sum rate in nats, so that
/// `dR = 2 Re tr(G^H dW)`.
pub fn sum_rate_grad_w(h: &EffectiveChannel, w: &BeamformingMatrix, sigma2: f64) -> CMatrix {
    let z = cross_gains(h, w);
    let k_users = h.users();
    let n = h.antennas();
    let mut grad = CMatrix::zeros(n, k_users);
    for k in 0..k_users {
        let total: f64 = z.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>() + sigma2;
        let interf = total - z[(k, k)].norm_sqr();
        let hk = h.user_column(k);
        for i in 0..k_users {
            let mut coef = 1.0 / total;
            if i != k {
                coef -= 1.0 / interf;
            }
            // h_k h_k^H w_i = h_k z[k, i]
            let scale = z[(k, i)] * coef;
            for a in 0..n {
                grad[(a, i)] += hk[a] * scale;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{config::SystemConfig, model, ChannelSample, PinchingLayout};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64) -> (SystemConfig, EffectiveChannel, BeamformingMatrix) {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = ChannelSample::random(&cfg, &mut rng);
        let h = model::effective_channel(&cfg, &PinchingLayout::grid(&cfg), &sample).unwrap();
        let w = CMatrix::from_fn(cfg.n, cfg.k, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let w = BeamformingMatrix::new(w).scaled_to_power(cfg.p_max);
        (cfg, h, w)
    }

    #[test]
    fn single_user_no_interference() {
        let hrow = CMatrix::from_row_slice(1, 3, &[C64::new(1e-2, 2e-3), C64::new(-3e-3, 0.0), C64::new(0.0, 5e-3)]);
        let h = EffectiveChannel::new(hrow);
        let p: f64 = 0.1;
        let hk = h.user_column(0);
        let col = &hk * C64::from(p.sqrt() / hk.norm());
        let w = BeamformingMatrix::new(CMatrix::from_column_slice(3, 1, col.as_slice()));
        let rep = sinr_and_rate(&h, &w, 1e-12).unwrap();
        assert_relative_eq!(rep.sinr[0], p * hk.norm_squared() / 1e-12, max_relative = 1e-12);
        assert_relative_eq!(rep.sum_rate, rep.sinr[0].ln_1p() / LN_2, max_relative = 1e-14);
    }

    #[test]
    fn zero_beamformer() {
        let (cfg, h, _) = random_instance(1);
        let w = BeamformingMatrix::zeros(cfg.n, cfg.k);
        let rep = sinr_and_rate(&h, &w, cfg.sigma2).unwrap();
        assert!(rep.sinr.iter().all(|s| *s == 0.0));
        assert_eq!(rep.sum_rate, 0.0);
    }

    #[test]
    fn orthogonal_rows_have_no_interference() {
        let h = EffectiveChannel::new(CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)],
        ));
        let w = CMatrix::from_fn(2, 2, |a, k| h.user_column(k)[a]);
        let z = cross_gains(&h, &BeamformingMatrix::new(w.clone()));
        assert_eq!(z[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(z[(1, 0)], C64::new(0.0, 0.0));
        let rep = sinr_and_rate(&h, &BeamformingMatrix::new(w), 0.5).unwrap();
        assert_relative_eq!(rep.sinr[0], 4.0 / 0.5);
    }

    #[test]
    fn mse_examples() {
        let (cfg, h, w) = random_instance(2);
        let zero = vec![C64::new(0.0, 0.0); cfg.k];
        let e = mse_terms(&h, &w, &zero, cfg.sigma2).unwrap();
        assert!(e.iter().all(|v| (*v - 1.0).abs() < 1e-15));

        let u = mmse_receivers(&h, &w, cfg.sigma2);
        let e = mse_terms(&h, &w, &u, cfg.sigma2).unwrap();
        let rep = sinr_and_rate(&h, &w, cfg.sigma2).unwrap();
        for k in 0..cfg.k {
            assert_relative_eq!(e[k], 1.0 / (1.0 + rep.sinr[k]), max_relative = 1e-8);
        }

        // perfect equalisation of a single user
        let h1 = EffectiveChannel::new(CMatrix::from_row_slice(1, 1, &[C64::new(0.0, 2.0)]));
        let w1 = BeamformingMatrix::new(CMatrix::from_element(1, 1, C64::new(1.5, 0.0)));
        let u1 = [C64::new(0.0, 2.0).inv() / 1.5];
        let e1 = mse_terms(&h1, &w1, &u1, 0.3).unwrap();
        assert_relative_eq!(e1[0], 0.3 * u1[0].norm_sqr(), max_relative = 1e-14);
    }

    #[test]
    fn objective_examples() {
        let (cfg, h, w) = random_instance(4);
        let zero = vec![C64::new(0.0, 0.0); cfg.k];
        let ones = vec![1.0; cfg.k];
        let obj = wmmse_objective(&h, &w, &zero, &ones, cfg.sigma2).unwrap();
        assert_relative_eq!(obj, cfg.k as f64);

        let u = mmse_receivers(&h, &w, cfg.sigma2);
        let e = mse_terms(&h, &w, &u, cfg.sigma2).unwrap();
        let m: Vec<f64> = e.iter().map(|v| 1.0 / v).collect();
        let obj = wmmse_objective(&h, &w, &u, &m, cfg.sigma2).unwrap();
        let rep = sinr_and_rate(&h, &w, cfg.sigma2).unwrap();
        let ln_sum: f64 = rep.sinr.iter().map(|s| s.ln_1p()).sum();
        assert_relative_eq!(obj, cfg.k as f64 - ln_sum, max_relative = 1e-9);
        // rate-MSE equivalence in bits
        let from_mse: f64 = e.iter().map(|v| -v.log2()).sum();
        assert!((from_mse - rep.sum_rate).abs() < 1e-8);

        // moving m from 1 toward 1/E decreases the objective
        let mut prev = wmmse_objective(&h, &w, &u, &ones, cfg.sigma2).unwrap();
        for step in 1..=10 {
            let t = step as f64 / 10.0;
            let mm: Vec<f64> = m.iter().map(|mk| 1.0 + t * (mk - 1.0)).collect();
            let cur = wmmse_objective(&h, &w, &u, &mm, cfg.sigma2).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn objective_rejects_nonpositive_weights() {
        let (cfg, h, w) = random_instance(5);
        let u = mmse_receivers(&h, &w, cfg.sigma2);
        let mut m = vec![1.0; cfg.k];
        m[2] = 0.0;
        assert!(matches!(
            wmmse_objective(&h, &w, &u, &m, cfg.sigma2),
            Err(Error::NonPositiveWeight { index: 2, .. })
        ));
    }

    #[test]
    fn sinr_invariant_to_column_phase() {
        let (cfg, h, w) = random_instance(6);
        let a = sinr_and_rate(&h, &w, cfg.sigma2).unwrap();
        let mut rotated = w.clone();
        for k in 0..cfg.k {
            let ph = C64::from_polar(1.0, 0.7 * k as f64 + 0.1);
            let col = rotated.w.column(k) * ph;
            rotated.w.set_column(k, &col);
        }
        let b = sinr_and_rate(&h, &rotated, cfg.sigma2).unwrap();
        for k in 0..cfg.k {
            assert_relative_eq!(a.sinr[k], b.sinr[k], max_relative = 1e-10);
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let (cfg, h, w) = random_instance(7);
        let grad = sum_rate_grad_w(&h, &w, cfg.sigma2);
        let eps = 1e-7 * w.w.norm();
        let f = |w: &BeamformingMatrix| sum_rate(&h, w, cfg.sigma2).unwrap() * LN_2;
        for a in 0..cfg.n {
            for k in 0..cfg.k {
                for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                    let mut plus = w.clone();
                    plus.w[(a, k)] += dir * eps;
                    let mut minus = w.clone();
                    minus.w[(a, k)] -= dir * eps;
                    let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
                    let analytic = 2.0 * (grad[(a, k)].conj() * dir).re;
                    let scale = grad.iter().map(|g| g.norm()).fold(0.0, f64::max);
                    assert!((fd - analytic).abs() < 1e-5 * scale, "{fd} vs {analytic}");
                }
            }
        }
    }
}

//! Comparison systems: SSCA over positions with a fixed RZF precoder, and a
//! conventional fixed uniform linear array served by WMMSE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::gradients::GradMode;
use crate::model::{self, ChannelSample, EffectiveChannel, PinchingLayout};
use crate::rate;
use crate::short_term::{self, ShortTermSolver, WmmseOptions};
use crate::ssca::{self, LongTermOptions, LongTermResult, StepSchedule};
use crate::CMatrix;

/// Long-term SSCA where the short-term map is the RZF precoder and the
/// implicit gradient term is dropped.
pub fn ssca_thp_run<F>(
    cfg: &SystemConfig,
    schedule: StepSchedule,
    tau: f64,
    t_f: usize,
    n_s: usize,
    init: PinchingLayout,
    sampler: F,
) -> Result<LongTermResult>
where
    F: FnMut() -> (ChannelSample, u64),
{
    let opts = LongTermOptions {
        schedule,
        tau,
        t_f,
        n_s,
        solver: ShortTermSolver::Rzf,
        grad_mode: GradMode::Omit,
    };
    ssca::run_long_term(cfg, &opts, init, sampler)
}

/// Conventional array: `N` elements on a line parallel to the x-axis at
/// height `h_pa`, half a wavelength apart, centred over the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlaConfig {
    pub positions: Vec<[f64; 3]>,
}

impl UlaConfig {
    pub fn new(cfg: &SystemConfig) -> Self {
        let spacing = cfg.lambda_f() / 2.0;
        let centre = (cfg.n as f64 - 1.0) / 2.0;
        let positions = (0..cfg.n)
            .map(|i| {
                [
                    cfg.s_x / 2.0 + (i as f64 - centre) * spacing,
                    cfg.s_y / 2.0,
                    cfg.h_pa,
                ]
            })
            .collect();
        UlaConfig { positions }
    }

    /// `K x N` channel; entry `(k, n)` is the free-space coefficient from
    /// element `n` to user `k`.
    pub fn channel(&self, cfg: &SystemConfig, sample: &ChannelSample) -> Result<EffectiveChannel> {
        sample.validate(cfg)?;
        let h = CMatrix::from_fn(sample.user_pos.len(), self.positions.len(), |k, n| {
            let [ex, ey, ez] = self.positions[n];
            let [ux, uy] = sample.user_pos[k];
            let r = ((ex - ux).powi(2) + (ey - uy).powi(2) + ez * ez).sqrt();
            model::los_coefficient(cfg, r)
        });
        Ok(EffectiveChannel::new(h))
    }
}

/// Per-sample WMMSE sum rates of the conventional array.
pub fn mimo_rates(
    cfg: &SystemConfig,
    samples: &[ChannelSample],
    opts: &WmmseOptions,
) -> Result<Vec<f64>> {
    let ula = UlaConfig::new(cfg);
    samples
        .par_iter()
        .map(|s| {
            let h = ula.channel(cfg, s)?;
            let st = short_term::wmmse_solve(&h, cfg, opts)?;
            rate::sum_rate(&h, &st.w, cfg.sigma2)
        })
        .collect()
}

/// Mean WMMSE sum rate of the conventional array over `samples`.
pub fn mimo_baseline(cfg: &SystemConfig, samples: &[ChannelSample]) -> Result<f64> {
    let rates = mimo_rates(cfg, samples, &WmmseOptions::default())?;
    Ok(rates.iter().sum::<f64>() / rates.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::dbm_to_watts;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_thp_tracks_full_method() {
        let cfg = SystemConfig::with_dims(1, 4);
        let x0 = PinchingLayout::grid(&cfg);
        let schedule = StepSchedule::default();
        let c = &cfg;
        let sampler = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            move || (ChannelSample::random(c, &mut rng), rng.random())
        };
        let thp = ssca_thp_run(&cfg, schedule, ssca::DEFAULT_TAU, 20, 4, x0.clone(), sampler(3)).unwrap();
        let opts = LongTermOptions { t_f: 20, n_s: 4, ..Default::default() };
        let full = ssca::run_long_term(&cfg, &opts, x0, sampler(3)).unwrap();
        for (a, b) in thp.iterates.iter().zip(&full.iterates) {
            assert!((a.positions() - b.positions()).amax() < 1e-9);
        }
    }

    #[test]
    fn ula_geometry() {
        let cfg = SystemConfig::default();
        let ula = UlaConfig::new(&cfg);
        assert_eq!(ula.positions.len(), cfg.n);
        let mean_x = ula.positions.iter().map(|p| p[0]).sum::<f64>() / cfg.n as f64;
        assert!((mean_x - cfg.s_x / 2.0).abs() < 1e-12);
        for pair in ula.positions.windows(2) {
            assert!((pair[1][0] - pair[0][0] - cfg.lambda_f() / 2.0).abs() < 1e-12);
            assert_eq!(pair[0][1], cfg.s_y / 2.0);
        }
    }

    #[test]
    fn centred_single_user_gets_matched_filter_rate() {
        let mut cfg = SystemConfig::with_dims(1, 2);
        cfg.n = 4;
        cfg.waveguide_y = SystemConfig::even_waveguide_y(4, cfg.s_y);
        let sample = ChannelSample::new(vec![[cfg.s_x / 2.0, cfg.s_y / 2.0]]);
        let ula = UlaConfig::new(&cfg);
        let gain: f64 = ula
            .positions
            .iter()
            .map(|p| {
                let r2 = (p[0] - cfg.s_x / 2.0).powi(2) + cfg.h_pa * cfg.h_pa;
                cfg.beta() / r2
            })
            .sum();
        let expected = (1.0 + cfg.p_max * gain / cfg.sigma2).log2();
        let got = mimo_baseline(&cfg, &[sample]).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn mimo_rate_grows_with_power() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<_> = (0..20).map(|_| ChannelSample::random(&cfg, &mut rng)).collect();
        let mut last = f64::NEG_INFINITY;
        for dbm in [12.0, 16.0, 20.0, 24.0, 28.0] {
            let mut c = cfg.clone();
            c.p_max = dbm_to_watts(dbm);
            let r = mimo_baseline(&c, &samples).unwrap();
            assert!(r >= last, "{dbm} dBm: {r} < {last}");
            last = r;
        }
    }
}

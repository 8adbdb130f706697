//! Self-checks exposed on the command line.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::gradients;
use crate::model::{ChannelSample, PinchingLayout};
use crate::rate::BeamformingMatrix;
use crate::ssca::{project_layout, project_row, project_row_brute_force};
use crate::{SystemConfig, C64, CMatrix};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub step: f64,
    /// Worst relative entry error per instance.
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Relative error floor, as a fraction of the instance's largest entry.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Random instance: users uniform, a random feasible layout and a random
/// full-power beamformer.
pub fn random_instance<R: Rng>(
    cfg: &SystemConfig,
    rng: &mut R,
) -> (PinchingLayout, ChannelSample, BeamformingMatrix) {
    let sample = ChannelSample::random(cfg, rng);
    let target = DMatrix::from_fn(cfg.n, cfg.l, |_, _| rng.random::<f64>() * cfg.s_x);
    let layout = project_layout(cfg, &target);
    let w = CMatrix::from_fn(cfg.n, cfg.k, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    (layout, sample, BeamformingMatrix::new(w).scaled_to_power(cfg.p_max))
}

/// Analytic position gradient against central differences with `step`.
pub fn gradient_check(cfg: &SystemConfig, instances: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let (layout, sample, w) = random_instance(cfg, &mut rng);
        let exact = gradients::grad_x_fixed_w(cfg, &layout, &sample, &w)?;
        let fd = gradients::grad_fd_oracle(cfg, &layout, &sample, &w, step)?;
        let floor = GRAD_CHECK_FLOOR * exact.d.amax();
        errors.push(fd.max_relative_error(&exact, floor));
    }
    Ok(GradCheckReport {
        instances,
        step,
        errors,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjCheckReport {
    pub instances: usize,
    /// Largest absolute coordinate difference against the enumeration.
    pub max_error: f64,
}

/// Row projection against active-set enumeration on random rows with
/// `L` in 2..=4.
pub fn projection_check(instances: usize, seed: u64) -> ProjCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..instances {
        let len = rng.random_range(2..=4);
        let s_x = rng.random_range(0.5..20.0);
        let delta = rng.random_range(0.0..s_x / (len as f64 - 1.0));
        let target: Vec<f64> = (0..len)
            .map(|_| rng.random_range(-0.5 * s_x..1.5 * s_x))
            .collect();
        let fast = project_row(&target, delta, s_x);
        let slow = project_row_brute_force(&target, delta, s_x).expect("feasible set is nonempty");
        for (a, b) in fast.iter().zip(&slow) {
            max_error = max_error.max((a - b).abs());
        }
    }
    ProjCheckReport {
        instances,
        max_error,
    }
}

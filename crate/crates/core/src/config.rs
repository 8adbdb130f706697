//! Scenario constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// All constants of one downlink scenario.
///
/// Users sit on the ground plane inside `[0, s_x] x [0, s_y]`; waveguide `n`
/// runs parallel to the x-axis at `y = waveguide_y[n]`, height `h_pa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of users.
    pub k: usize,
    /// Number of waveguides (one RF chain each).
    pub n: usize,
    /// Pinching antennas per waveguide.
    pub l: usize,
    pub s_x: f64,
    pub s_y: f64,
    pub h_pa: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Effective refractive index of the waveguide.
    pub n_eff: f64,
    /// Noise power in watts.
    pub sigma2: f64,
    /// Transmit power budget in watts.
    pub p_max: f64,
    /// Minimum spacing between adjacent antennas on one waveguide, meters.
    pub delta_min: f64,
    pub waveguide_y: Vec<f64>,
    /// Use `beta^2` in place of `beta` as the path-gain constant.
    #[serde(default)]
    pub friis_squared: bool,
    /// Use unit noise weight in the MSE terms instead of `sigma2`.
    #[serde(default)]
    pub unit_mse_noise: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::with_dims(4, 8)
    }
}

impl SystemConfig {
    /// Default 20 x 10 m^2 scenario at 28 GHz with `k` users, `k` waveguides
    /// and `l` antennas per waveguide.
    pub fn with_dims(k: usize, l: usize) -> Self {
        let f_c = 28e9;
        let s_y = 10.0;
        let n = k;
        SystemConfig {
            k,
            n,
            l,
            s_x: 20.0,
            s_y,
            h_pa: 3.0,
            f_c,
            n_eff: 1.4,
            sigma2: dbm_to_watts(-90.0),
            p_max: dbm_to_watts(20.0),
            delta_min: SPEED_OF_LIGHT / f_c / 2.0,
            waveguide_y: Self::even_waveguide_y(n, s_y),
            friis_squared: false,
            unit_mse_noise: false,
        }
    }

    /// `y_n = (n - 1/2) * s_y / n_waveguides`, with `n` counted from one.
    pub fn even_waveguide_y(n: usize, s_y: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) * s_y / n as f64).collect()
    }

    /// Total number of pinching antennas.
    pub fn m(&self) -> usize {
        self.n * self.l
    }

    /// Free-space wavelength.
    pub fn lambda_f(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    /// Guided wavelength inside the waveguide.
    pub fn lambda_w(&self) -> f64 {
        self.lambda_f() / self.n_eff
    }

    /// Free-space wavenumber.
    pub fn kappa(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.lambda_f()
    }

    /// Path-gain constant multiplying `1/r` (squared under `friis_squared`).
    pub fn beta(&self) -> f64 {
        let b = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * self.f_c);
        if self.friis_squared {
            b * b
        } else {
            b
        }
    }

    /// Noise weight used in the MSE terms.
    pub fn mse_noise(&self) -> f64 {
        if self.unit_mse_noise {
            1.0
        } else {
            self.sigma2
        }
    }

    pub fn with_p_max_dbm(mut self, dbm: f64) -> Self {
        self.p_max = dbm_to_watts(dbm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.n != self.k {
            return bad("n must equal k");
        }
        if self.l == 0 {
            return bad("l must be at least 1");
        }
        for (name, v) in [
            ("s_x", self.s_x),
            ("s_y", self.s_y),
            ("h_pa", self.h_pa),
            ("f_c", self.f_c),
            ("sigma2", self.sigma2),
            ("p_max", self.p_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.n_eff.is_finite() && self.n_eff >= 1.0) {
            return bad("n_eff must be at least 1");
        }
        if !(self.delta_min.is_finite() && self.delta_min >= 0.0) {
            return bad("delta_min must be nonnegative");
        }
        if (self.l - 1) as f64 * self.delta_min > self.s_x {
            return Err(Error::Config(format!(
                "{} antennas spaced {} m apart do not fit on a {} m waveguide",
                self.l, self.delta_min, self.s_x
            )));
        }
        if self.waveguide_y.len() != self.n {
            return Err(Error::Config(format!(
                "waveguide_y has {} entries, expected {}",
                self.waveguide_y.len(),
                self.n
            )));
        }
        if self.waveguide_y.iter().any(|y| !y.is_finite()) {
            return bad("waveguide_y entries must be finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(20.0) - 0.1).abs() < 1e-17);
        assert!((dbm_to_watts(-90.0) - 1e-12).abs() < 1e-27);
        assert!((watts_to_dbm(0.1) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn derived_constants() {
        let cfg = SystemConfig::default();
        assert!((cfg.lambda_f() - SPEED_OF_LIGHT / 28e9).abs() < 1e-15);
        assert!((cfg.lambda_w() * 1.4 - cfg.lambda_f()).abs() < 1e-15);
        assert!((cfg.kappa() * cfg.lambda_f() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((cfg.beta() - 8.5203e-4).abs() < 1e-7);
        let sq = SystemConfig {
            friis_squared: true,
            ..cfg.clone()
        };
        assert!((sq.beta() - cfg.beta().powi(2)).abs() < 1e-18);
        assert_eq!(cfg.waveguide_y, vec![1.25, 3.75, 6.25, 8.75]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SystemConfig::default();
        cfg.n = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.delta_min = 3.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.sigma2 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.n_eff = 0.5;
        assert!(cfg.validate().is_err());
    }
}

//! Two-timescale joint transmit and pinching beamforming for pinching-antenna
//! (PASS) downlink multi-user MISO systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`config`]: scenario constants and derived physical quantities.
//! * [`model`]: line-of-sight channel synthesis for pinching antennas placed on
//!   dielectric waveguides, and the effective user-to-waveguide channel.
//! * [`rate`]: SINR, rates, MSE terms and the weighted-MMSE objective.
//! * [`short_term`]: per-sample transmit beamforming (WMMSE, KKT-structured
//!   dual parameterisation, RZF and MRT reference precoders).
//! * [`gradients`]: derivatives of the per-sample negative sum rate with
//!   respect to pinching-antenna positions, plus finite-difference oracles.
//! * [`ssca`]: the long-term stochastic successive convex approximation loop
//!   and the ordered-spacing projection it relies on.
//! * [`baselines`]: SSCA with a fixed RZF precoder and a conventional ULA.
//! * [`harness`]: experiment specs, sample streams, CSV and JSON-lines I/O.

pub mod baselines;
pub mod config;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod model;
pub mod rate;
pub mod short_term;
pub mod ssca;

pub use config::{dbm_to_watts, watts_to_dbm, SystemConfig, SPEED_OF_LIGHT};
pub use error::{Error, Result};
pub use model::{ChannelSample, EffectiveChannel, PinchingLayout};
pub use rate::{BeamformingMatrix, RateReport};
pub use short_term::{DualParams, ShortTermSolver, WmmseOptions, WmmseState};
pub use ssca::{StepRule, StepSchedule, SurrogateState};
pub use harness::{ExperimentSpec, Method, ResultRow};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;

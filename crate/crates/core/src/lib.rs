//! Adaptive testing engine.
//!
//! - [`irt`]: item response functions, Fisher information, Gaussian-kernel approximation
//! - [`posterior`]: grid posterior over ability
//! - [`selector`]: Thompson-sampling selection with Gamma-randomized rewards
//! - [`calibration`]: least-squares projection of probability surfaces onto IRT parameters
//! - [`session`]: blueprint-driven live sessions with an event log
//! - [`simulation`] and [`metrics`]: replay/synthetic simulation and evaluation metrics
//! - [`formats`]: bank, surface, history and report file formats

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod calibration;
pub mod error;
pub mod formats;
pub mod irt;
pub mod metrics;
pub mod optimize;
pub mod posterior;
pub mod rng;
pub mod selector;
pub mod session;
pub mod simulation;

pub use bank::{BankRecord, Item, ItemBank};
pub use error::{Error, Result};
pub use irt::{fisher_info, irf_3pl, kernel_info, moment_match, session_total_info, ItemParams, KernelParams, ThetaGrid};
pub use posterior::{Posterior, PriorSpec};
pub use selector::{RewardMode, SelectionPolicy, SelectorConfig, TagConstraint};
pub use session::{Blueprint, SessionConfig, SessionState, Stage, TagRule};
pub use simulation::{HistoricalSession, SimulationConfig, SimulationReport};
pub use calibration::{CalibrationConfig, CalibrationModel, ProbabilitySurface};

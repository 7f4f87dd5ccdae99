//! Monte-Carlo simulator for a self-configuring, energy-self-sufficient hybrid
//! reconfigurable intelligent surface (HRIS) assisting a multi-user downlink.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: array layouts, wave vectors and array responses.
//! - [`channel`]: pathloss, PPP blockage and channel realisation.
//! - [`hris`]: phase configurations, codebooks, power-based probing and the
//!   closed-form / oracle reflection configurations.
//! - [`comm`]: RZF precoding, per-UE SINR and sum-rate.
//! - [`energy`]: RF harvester law, PIN-diode consumption and frame energy.
//! - [`battery`]: Markov-chain state-of-charge model, battery sizing and an
//!   empirical trace simulator.
//! - [`scenario`], [`runner`] and [`report`]: experiment configuration,
//!   orchestration and CSV emission.

pub mod battery;
pub mod channel;
pub mod comm;
pub mod energy;
mod error;
pub mod geometry;
pub mod hris;
pub mod report;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Complex = num_complex::Complex64;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type CVector = nalgebra::DVector<Complex>;
pub type CMatrix = nalgebra::DMatrix<Complex>;

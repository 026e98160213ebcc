//! Simulation and optimization library for a STAR-RIS assisted NOMA downlink.
//!
//! A base station with `N_T` antennas serves `K` single-antenna users grouped
//! into `C` NOMA clusters through a simultaneously-transmitting-and-reflecting
//! surface with `M` elements. The direct links are blocked; every signal path
//! goes BS -> surface -> user, picking up the transmission- or reflection-side
//! coefficient of the surface depending on which half-space the user occupies.
//!
//! The crate is organized around the stages of the joint sum-rate
//! maximization pipeline:
//!
//! * [`scenario`] - geometry, path loss, and Rician channel generation.
//! * [`star`] - energy-splitting surface coefficients and combined channels.
//! * [`rates`] - SINR/rate algebra, decoding orders, and SIC verification.
//! * [`power`] - closed-form intra-cluster power allocation.
//! * [`conic`] - a small dense PSD-cone program builder and interior-point
//!   solver used by both beamforming stages.
//! * [`active`] - successive convex approximation for the transmit beams.
//! * [`passive`] - sequential rank-one constraint relaxation for the surface
//!   coefficients.
//! * [`orchestrator`] - the two-layer alternating loop tying it all together.
//! * [`baselines`] - benchmark schemes (ZF/MRT/random beams, alternative
//!   decoding orders, conventional-RIS and OMA systems).

pub mod active;
pub mod baselines;
pub mod conic;
mod error;
pub mod orchestrator;
pub mod passive;
pub mod power;
pub mod rates;
pub mod scenario;
pub mod star;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVec = nalgebra::DVector<C64>;

/// dB power ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

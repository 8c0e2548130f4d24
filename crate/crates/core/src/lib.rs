//! Boundary-layer correctors and effective Navier-slip coefficients for
//! viscous flow over periodic rough walls, with multiscale diagnostics of
//! the local wall law.
//!
//! The numerical core is generic over the scalar type (see [`Real`]); the
//! aliases at the bottom of this file fix it to `f64`.

pub mod analysis;
pub mod cell;
pub mod channel;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod halfspace;
pub mod linalg;
pub mod stokes;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Crate version stamped into every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type BoundaryFunction = geometry::BoundaryFunction<f64>;
pub type CorrectorSolution = cell::CorrectorSolution<f64>;
pub type ChannelSolution = channel::ChannelSolution<f64>;
pub type SpectralTrace = halfspace::SpectralTrace<f64>;
pub type HalfspaceExtension = halfspace::HalfspaceExtension<f64>;
pub type NavierPolynomial = analysis::NavierPolynomial<f64>;

/// SHA-256 of `bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

//! Physics-informed neural networks for the generalized Korteweg-de Vries
//! equation `u_t + u_xxx = mu (u^k)_x` on a truncated line.
//!
//! The crate is generic over the scalar type (see [`scalar::Real`]); the
//! aliases at the root fix it to `f64`, which is what training uses.

pub mod autodiff;
pub mod grid;
pub mod io;
pub mod network;
pub mod norms;
pub mod physics;
pub mod presets;
pub mod quadrature;
pub mod refsolver;
pub mod scalar;
pub mod spectral;
pub mod training;

pub use grid::{GridError, SpectralGrid as GenericSpectralGrid, TimeGrid as GenericTimeGrid};
pub use quadrature::{Exponent, MixedKind, MixedNorm};
pub use scalar::Real;

pub type SpectralGrid = grid::SpectralGrid<f64>;
pub type TimeGrid = grid::TimeGrid<f64>;
pub type Field = spectral::Field<f64>;
pub type SampleMatrix = quadrature::SampleMatrix<f64>;
pub type WeightMatrix = quadrature::WeightMatrix<f64>;
pub type NetworkParams = network::NetworkParams<f64>;
pub type Jet = network::Jet<f64>;

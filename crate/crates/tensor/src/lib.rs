//! Reverse-mode automatic differentiation on dense CPU arrays.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`): models train in
//! single precision and gradient checks run the same code in double.

mod array;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
mod optim;
mod params;
mod scalar;

pub use array::Array;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::{broadcast_shape, concat, stack};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore, Session};
pub use scalar::Scalar;

pub use rand_chacha::ChaCha8Rng;

/// Scalar logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    ops::sigmoid(x)
}

/// Scalar `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    ops::softplus(x)
}

/// Seeded generator used for every initialiser in the workspace.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Array32 = Array<f32>;
pub type Array64 = Array<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;

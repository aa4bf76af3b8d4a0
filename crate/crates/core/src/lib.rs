//! Learning optimal transport maps with the Monge gap.
//!
//! A map `T` between two sampled measures is fitted by minimizing a fitting
//! loss (how far `T♯μ` is from `ν`) plus the *Monge gap* of `T`, which is zero
//! exactly when `T` moves its reference samples optimally for a chosen ground
//! cost. Costs of the form `h(x − y)` additionally allow the structured
//! parameterization `T = Id − ∇h*∘F` with a conservativity penalty on `F`.
//!
//! Module map:
//!
//! - [`costs`]: ground costs, their gradients and conjugate gradients
//! - [`ot`]: Sinkhorn, exact assignment, Sinkhorn divergence, entropic map
//! - [`monge_gap`]: the regularizer, its exact variants and its gradient
//! - [`nn`]: MLP maps with hand-written JVP/VJP/second-order passes
//! - [`regularizers`]: the conservativity penalty
//! - [`init`]: identity and Gaussian initializers, PSD square roots
//! - [`training`]: losses, Adam, schedules, evaluation metrics
//! - [`datasets`]: seeded synthetic measure pairs

pub mod costs;
pub mod datasets;
pub mod error;
pub mod init;
pub mod monge_gap;
pub mod nn;
pub mod ot;
pub mod regularizers;
pub mod training;

pub use costs::CostSpec;
pub use error::{Error, Result};
pub use monge_gap::{monge_gap, monge_gap_permutation, MongeGapValue};
pub use nn::{MapModel, Mlp, Parameterization};
pub use ot::{sinkhorn, SinkhornConfig, SinkhornSolution, TransportPlan};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/costs.md")]
    pub mod costs {}
    #[doc = include_str!("../../../book/src/transport.md")]
    pub mod transport {}
    #[doc = include_str!("../../../book/src/monge_gap.md")]
    pub mod monge_gap {}
    #[doc = include_str!("../../../book/src/maps.md")]
    pub mod maps {}
    #[doc = include_str!("../../../book/src/initializers.md")]
    pub mod initializers {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
}

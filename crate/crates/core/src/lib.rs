//! Numerical laboratory for non-free actions of `R^a x Z^b` on metric spaces.
//!
//! The group layer ([`lca`]) is generic over the scalar type; everything built
//! on top of it works in `f64` through the aliases below.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod lca;
pub mod quotient;
pub mod subgroups;
pub mod trace;

pub use error::{Error, Result};
pub use lca::{GroupDescriptor, Scalar};
pub use subgroups::ClosedSubgroup;

pub type Element = lca::GroupElement<f64>;
pub type Window = lca::Window<f64>;
pub type Character = lca::Character<f64>;
pub type Bump = lca::BumpFunction<f64>;

pub type Element32 = lca::GroupElement<f32>;
pub type Window32 = lca::Window<f32>;
pub type Character32 = lca::Character<f32>;
pub type Bump32 = lca::BumpFunction<f32>;

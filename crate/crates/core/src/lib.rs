//! Endomorphisms of computable von Neumann algebras: kernel chains, the
//! automorphic-summand / backward-shift decomposition of surjective
//! endomorphisms, tail algebras, asymptotic lifts, and the asymptotic lifts of
//! UCP maps obtained by compressing endomorphism dilations.

pub mod algebra;
pub mod endo;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod morphism;
pub mod seq;
pub mod ucp;

pub use error::{Error, Result};

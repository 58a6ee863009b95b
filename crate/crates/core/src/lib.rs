//! Synthesis of Clifford circuits from binary symplectic tableaus.
//!
//! A target tableau is reduced to the identity by right-multiplying generator
//! matrices (`H`, `S`, `CZ`); the applied gates, reversed, implement the
//! target. Gate choices come from a learned permutation-equivariant policy,
//! and an exhaustive search gives exact CZ-optimal answers for small `n`.

pub mod env;
pub mod error;
pub mod f2linalg;
pub mod io;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod search;
pub mod tableau;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
pub use f2linalg::BitMatrix;
pub use tableau::{Circuit, Gate, Tableau};
pub use targets::Difficulty;

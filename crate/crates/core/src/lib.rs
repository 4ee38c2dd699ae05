//! Multi-server secure aggregation with Lagrange coding and pairwise masks,
//! resilient to straggling client/server links.
//!
//! Modules build on each other bottom-up: [`ffield`] arithmetic, [`lagrange`]
//! coding, [`masking`], the [`network`] model, the [`protocol`] round itself,
//! closed-form [`bounds`] and exhaustive [`privacy`] checks.

pub mod bounds;
pub mod error;
pub mod ffield;
pub mod lagrange;
pub mod masking;
pub mod network;
pub mod privacy;
pub mod protocol;

pub use error::{Error, Result};
pub use ffield::{Fe, Field, FieldVec, DEFAULT_PRIME};
pub use protocol::Params;

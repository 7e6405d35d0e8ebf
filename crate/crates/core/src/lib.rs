//! Exact counting, uniformity norms and density-increment machinery for
//! L-shaped configurations in F_p^n x F_p^n.
//!
//! Everything is dense and desk scale: functions live in tables indexed by
//! the little-endian base-p encoding described in [`group`].

pub mod cli;
pub mod configurations;
pub mod error;
pub mod group;
pub mod increment;
pub mod linear_systems;
pub mod norms;
pub mod oracle;
pub mod par;
pub mod spectral;
pub mod structured;
pub mod table;

pub use error::{Error, Result};
pub use group::{AffineSubspace, GroupVector, IndexArith, Limits, LinearMap, PrimeField, Space};
pub use table::{FunctionTable, IndicatorSet, Kind, Slot};

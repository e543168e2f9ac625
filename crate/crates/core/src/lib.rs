//! Off-policy evaluation on finite-horizon tabular MDPs.

pub mod cdope;
pub mod continuous;
pub mod data;
pub mod error;
pub mod fitting;
pub mod mdp;
pub mod ope;
pub mod ops;
pub mod par;
pub mod policy;
pub mod rng;
pub mod stats;

pub use error::{OpeError, Result};

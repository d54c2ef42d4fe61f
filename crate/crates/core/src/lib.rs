//! Estimating the first-order mortality of a registry cohort when part of the
//! cohort is transferred out before the outcome is observed.

pub mod cohort;
pub mod counts;
pub mod error;
pub mod estimation;
pub mod fod;
pub mod grid;
pub mod inflow;
pub mod io;
pub mod reweight;
pub mod sequential;
pub mod simulator;
pub mod special;
pub mod stratify;

pub use error::{MortalityError, Result};

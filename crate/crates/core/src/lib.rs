//! Equilibrium (time-consistent) investment-consumption policies for the
//! Merton problem with CRRA utility and non-exponential discounting.

pub mod csv;
pub mod dual;
pub mod error;
pub mod lambda;
pub mod model;
pub mod policy;
pub mod run;
pub mod sim;

pub use error::{Error, Result};

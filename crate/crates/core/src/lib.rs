pub mod baselines;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod linear;
pub mod lmi;
pub mod models;
pub mod nonlinear;
pub mod selftest;

pub use error::{Error, Result};

//! Huber-loss super learner.

pub mod cli;
pub mod config;
pub mod cross_validation;
pub mod data;
pub mod error;
pub mod io;
pub mod learners;
pub mod losses;
pub mod metrics;
pub mod lambda;
pub mod meta;
pub mod report;
pub mod seed;
pub mod simulation;
pub mod super_learner;
pub mod tmle;

pub use error::{Error, Result};

//! Command-line driver for the imitation-learning benchmark: configs, runs, sweeps and checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod learners;
pub mod rows;
pub mod sweep;
pub mod verify;

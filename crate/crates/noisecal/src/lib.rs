//! Simulation lab, file formats and command-line plumbing around
//! [`noisecal_core`].

pub mod bench;
pub mod cli;
pub mod config;
pub mod gradcheck;
pub mod instances;
pub mod io;
pub mod montecarlo;
pub mod sim;

pub use noisecal_core as core;

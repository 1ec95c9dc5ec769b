//! Batch planner for descent-time data offloading: reads a JSON run
//! configuration, simulates the transmission window slot by slot, and writes
//! per-slot CSV, a JSON summary, and optional plots.

pub mod config;
pub mod output;
pub mod run;

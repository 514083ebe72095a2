//! Experiment harness: forward solves, placement ranking, inversion runs and
//! resumable sweeps, each writing manifest-tagged outputs.

pub mod commands;
pub mod manifest;

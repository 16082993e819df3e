//! Experiment layer on top of `surfch-core`: run configuration, the
//! manufactured-solution convergence study, phase-separation and adaptive
//! runs, and CSV / VTK output.

pub mod config;
pub mod experiments;
pub mod output;

//! Scenario files, the grid, smoothness and scaling experiments, and output
//! emission for the `obca` command.

pub mod experiments;
pub mod gallery;
pub mod metrics;
pub mod output;
pub mod scenario;

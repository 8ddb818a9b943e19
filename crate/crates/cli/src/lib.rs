//! Command-line operations over the habcov core: training, evaluation,
//! baseline runs, comparisons and trace replay.

pub mod app;
pub mod commands;
pub mod config;

//! Command-line front end: dataset generation, labeling, training,
//! evaluation, closed-loop simulation and the survey ANOVA.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

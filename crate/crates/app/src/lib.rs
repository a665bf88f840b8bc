//! Command-line pipeline and HTTP service around the diagnosis-uncertain
//! risk model: cohort generation, training, evaluation, experiments, batch
//! prediction and interactive rule-out sessions.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod service;

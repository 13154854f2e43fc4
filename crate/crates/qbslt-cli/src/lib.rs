//! Command line front end: corpus generation, the two training stages,
//! scoring, fusion ablations, and gate heatmap export. All numeric choices
//! come from a line-oriented `key = value` config file; every run directory
//! receives the fully resolved config and a manifest so results can be
//! traced back to their inputs.

pub mod commands;
pub mod error;
pub mod heatmap;
pub mod runcfg;

pub use error::CliError;
pub use runcfg::RunConfig;

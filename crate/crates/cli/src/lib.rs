//! Command-line laboratory over the `nelab` core: sectioned TOML configs
//! with dotted overrides and a canonical content hash, deterministic artifact
//! emission (CSV, JSON, binary containers), and one driver per subcommand
//! returning PASS/FAIL check lines.

pub mod config;
pub mod output;
pub mod run;

pub use config::{config_hash, load_config, Lab, RunConfig};
pub use output::{cell, Emitter};
pub use run::RunOutcome;

//! Follow-the-leader vehicles and multi-path LWR densities on road networks,
//! with the operators that move between the two descriptions.
//!
//! ```no_run
//! use ftlnet::config::ExperimentConfig;
//! use ftlnet::experiment::{Experiment, MicroRun};
//!
//! let cfg = ExperimentConfig::load("configs/merge.toml")?;
//! let exp = Experiment::from_config(cfg)?;
//! let out = exp.run_compare(MicroRun::default())?;
//! println!("L1 = {}", out.table.total);
//! # Ok::<(), ftlnet::Error>(())
//! ```

pub mod bridge;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod macroscopic;
pub mod micro;
pub mod network;

pub use error::{Error, Result};
pub use exec::Execution;

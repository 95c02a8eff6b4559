//! Functional-structural tree growth with substructure factorization.
//!
//! The crate simulates a tree growing one metamer per axis per growth cycle,
//! shares the carbon it produces between new organs and a ring compartment,
//! and calibrates hidden parameters against organ-level or compartment-level
//! target data by Levenberg–Marquardt least squares.
//!
//! ```no_run
//! use fstm_core::{config::load_config, engine::simulate, patterns::extract_pattern2};
//!
//! let (params, rules) = load_config("configs/tree1.json").unwrap();
//! let trace = simulate(&params, &rules).unwrap();
//! let observed = extract_pattern2(&trace);
//! println!("{} observables", observed.len());
//! ```

pub mod bench;
pub mod calibration;
pub mod config;
pub mod engine;
pub mod error;
pub mod patterns;
#[cfg(test)]
mod properties;
pub mod registry;
pub mod simulator;
pub mod structure;
pub mod synthetic;

pub use config::{load_config, Config, ModelParameters, OrganogenesisRules};
pub use engine::{simulate, SimulationTrace};
pub use error::{AllometryError, CalibrationError, ConfigError, EngineError, PatternError, StructureError};

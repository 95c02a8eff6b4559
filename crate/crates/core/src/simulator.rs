//! Interchangeable simulation backends.

use std::sync::Arc;

use crate::config::{ModelParameters, OrganogenesisRules};
use crate::engine::{self, explicit, SimulationTrace};
use crate::error::EngineError;
use crate::registry::Registry;
use crate::structure::node_cap_from_env;

pub trait Simulator: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn simulate(&self, params: &ModelParameters, rules: &OrganogenesisRules) -> Result<SimulationTrace, EngineError>;
}

/// Identical axes share one state record weighted by multiplicity.
#[derive(Debug, Default, Clone, Copy)]
pub struct Factorized;

impl Simulator for Factorized {
    fn name(&self) -> &'static str {
        "factorized"
    }

    fn description(&self) -> &'static str {
        "one state record per (PA, birth cycle) axis class"
    }

    fn simulate(&self, params: &ModelParameters, rules: &OrganogenesisRules) -> Result<SimulationTrace, EngineError> {
        engine::simulate(params, rules)
    }
}

/// Every metamer simulated on its own; bounded by a node cap.
#[derive(Debug, Clone, Copy)]
pub struct Explicit {
    pub node_cap: u64,
}

impl Default for Explicit {
    fn default() -> Self {
        Explicit {
            node_cap: node_cap_from_env(),
        }
    }
}

impl Simulator for Explicit {
    fn name(&self) -> &'static str {
        "explicit"
    }

    fn description(&self) -> &'static str {
        "every metamer of the tree stored and simulated (reference)"
    }

    fn simulate(&self, params: &ModelParameters, rules: &OrganogenesisRules) -> Result<SimulationTrace, EngineError> {
        Ok(explicit::simulate_explicit(params, rules, self.node_cap)?.to_trace(rules))
    }
}

pub struct SimulatorRegistry {
    inner: Registry<dyn Simulator>,
}

impl Default for SimulatorRegistry {
    fn default() -> Self {
        let mut inner: Registry<dyn Simulator> = Registry::new();
        inner.register("factorized", Arc::new(Factorized));
        inner.register("explicit", Arc::new(Explicit::default()));
        SimulatorRegistry { inner }
    }
}

impl SimulatorRegistry {
    pub fn get(&self, name: &str) -> Option<Arc<dyn Simulator>> {
        self.inner.get(name)
    }

    pub fn register(&mut self, simulator: Arc<dyn Simulator>) {
        self.inner.register(simulator.name(), simulator);
    }

    pub fn names(&self) -> Vec<&str> {
        self.inner.names()
    }
}

//! Reference simulation on the explicit tree.
//!
//! Every metamer is simulated on its own: demands are summed node by node and
//! foliage is found by walking the tree. Nothing here uses multiplicities, so
//! agreement with [`super::simulate`] checks the factorization itself.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{apply_allometry, compute_production, radius_from_biomass, solve_ring_demand};
use super::{AxisClassState, CycleRecord, LedgerEntry, MetamerRecord, SimulationTrace};
use crate::config::{self, FoliageMeasure, ModelParameters, OrganogenesisRules};
use crate::error::{ConfigError, EngineError};
use crate::structure::{count_from_explicit, expand_explicit, needle_active, AxisClassKey, ExplicitTree};

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitRun {
    pub tree: ExplicitTree,
    /// Final state of every node, aligned with `tree.nodes`.
    pub nodes: Vec<MetamerRecord>,
    pub cycles: Vec<CycleRecord>,
    /// Allocation to the first axis of every class, per cycle.
    pub ledger: Vec<LedgerEntry>,
}

/// Simulates every metamer of the tree independently.
pub fn simulate_explicit(
    params: &ModelParameters,
    rules: &OrganogenesisRules,
    cap: u64,
) -> Result<ExplicitRun, EngineError> {
    config::validate(params, rules).map_err(|issues| EngineError::Config(ConfigError::Validation(issues)))?;
    let tree = expand_explicit(rules, cap)?;
    let mut nodes: Vec<MetamerRecord> = tree
        .nodes
        .iter()
        .map(|n| MetamerRecord::new(n.rank, n.birth_cycle))
        .collect();
    let mut cycles = Vec::with_capacity(rules.horizon);
    let counts = count_from_explicit(&tree);
    let mut first_axis: BTreeMap<AxisClassKey, usize> = BTreeMap::new();
    for (axis_id, axis) in tree.axes.iter().enumerate() {
        first_axis.entry(axis.class()).or_insert(axis_id);
    }
    let representatives: Vec<(AxisClassKey, usize)> = first_axis.into_iter().collect();
    let mut slot_of_axis = vec![None; tree.axes.len()];
    for (slot, (_, axis_id)) in representatives.iter().enumerate() {
        slot_of_axis[*axis_id] = Some(slot);
    }
    let mut ledger = Vec::new();
    let mut q_prev = params.seed_biomass;
    let mut born = 0;

    for cycle in 1..=rules.horizon {
        let first_new = born;
        while born < nodes.len() && tree.nodes[born].birth_cycle == cycle {
            born += 1;
        }
        let new = first_new..born;

        let organ_demand: f64 = new
            .clone()
            .map(|id| {
                let pa = tree.nodes[id].pa;
                params.sink_needle_at(pa) + params.sink_internode_at(pa)
            })
            .sum();
        let demand = solve_ring_demand(organ_demand, q_prev, params.ring_sink_const, params.ring_sink_slope);
        let ratio = if demand.total > 0.0 { q_prev / demand.total } else { 0.0 };
        let mut organ_allocation = 0.0;
        for id in new.clone() {
            let pa = tree.nodes[id].pa;
            let node = &mut nodes[id];
            node.needle_mass = params.sink_needle_at(pa) * ratio;
            node.internode_mass = params.sink_internode_at(pa) * ratio;
            let (b, beta) = params.allometry_at(pa);
            node.length = apply_allometry(node.internode_mass, b, beta);
            organ_allocation += node.needle_mass + node.internode_mass;
        }
        let q_rg = demand.ring * ratio;

        for node in &mut nodes[..born] {
            node.needle_active = needle_active(node.birth_cycle, cycle, params.needle_lifespan);
        }
        let above = tree.foliage_above(cycle, params.foliage_includes_own, |id| {
            let node = &nodes[id];
            match (node.needle_active, params.foliage_measure) {
                (false, _) => 0.0,
                (true, FoliageMeasure::Count) => 1.0,
                (true, FoliageMeasure::Mass) => node.needle_mass,
            }
        });

        let mut pool_demand = 0.0;
        let mut pressler_demand = 0.0;
        for id in 0..born {
            let sink = params.ring_density_at(tree.nodes[id].pa) * nodes[id].length;
            pool_demand += sink;
            pressler_demand += above[id] * sink;
        }
        let mut ring_on_axis = vec![0.0; representatives.len()];
        if q_rg > 0.0 {
            if pool_demand <= 0.0 {
                return Err(EngineError::NoRingSupport { cycle, q_rg });
            }
            let lambda = if pressler_demand > 0.0 {
                params.lambda_pressler
            } else {
                0.0
            };
            for id in 0..born {
                let sink = params.ring_density_at(tree.nodes[id].pa) * nodes[id].length;
                let mut share = (1.0 - lambda) / pool_demand;
                if lambda > 0.0 {
                    share += lambda * above[id] / pressler_demand;
                }
                let inc = share * sink * q_rg;
                nodes[id].ring_mass += inc;
                if let Some(slot) = slot_of_axis[tree.nodes[id].axis] {
                    ring_on_axis[slot] += inc;
                }
            }
        }
        for (slot, &(key, axis_id)) in representatives.iter().enumerate() {
            if key.birth_cycle > cycle {
                continue;
            }
            let newest = &nodes[*tree.axes[axis_id]
                .metamers
                .get(cycle - key.birth_cycle)
                .expect("axis grew")];
            ledger.push(LedgerEntry {
                cycle,
                key,
                multiplicity: counts.multiplicity(key),
                internode: newest.internode_mass,
                needle: newest.needle_mass,
                ring: ring_on_axis[slot],
            });
        }
        for node in &mut nodes[..born] {
            node.radius = radius_from_biomass(node.wood_mass(), node.length, params.wood_density);
        }

        let active_mass: f64 = nodes[..born]
            .iter()
            .filter(|n| n.needle_active)
            .map(|n| n.needle_mass)
            .sum();
        let leaf_area = active_mass / params.slw;
        let production = compute_production(leaf_area, params, cycle);
        cycles.push(CycleRecord {
            cycle,
            available: q_prev,
            production,
            leaf_area,
            organ_demand,
            ring_demand: demand.ring,
            total_demand: demand.total,
            organ_allocation,
            ring_allocation: q_rg,
            pool_demand,
            pressler_demand,
        });
        q_prev = production;
    }

    Ok(ExplicitRun {
        tree,
        nodes,
        cycles,
        ledger,
    })
}

/// Outcome of checking a factorized trace against an explicit run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub counts_equal: bool,
    pub nodes_checked: usize,
    /// Largest relative difference over every per-node biomass, length and
    /// radius, and every cycle record field.
    pub max_relative_difference: f64,
}

impl OracleReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.counts_equal && self.max_relative_difference <= tolerance
    }
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl ExplicitRun {
    /// Compares every node with the factorized record of its class position.
    pub fn compare(&self, trace: &SimulationTrace) -> OracleReport {
        let counts_equal = count_from_explicit(&self.tree) == crate::structure::build_counts(&trace.rules);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (id, node) in self.tree.nodes.iter().enumerate() {
            let key = self.tree.axes[node.axis].class();
            let Some(class) = trace.class(key) else {
                worst = f64::INFINITY;
                continue;
            };
            let Some(f) = class.metamers.get(node.rank - 1) else {
                worst = f64::INFINITY;
                continue;
            };
            let e = &self.nodes[id];
            for (a, b) in [
                (e.internode_mass, f.internode_mass),
                (e.ring_mass, f.ring_mass),
                (e.needle_mass, f.needle_mass),
                (e.length, f.length),
                (e.radius, f.radius),
            ] {
                worst = worst.max(relative(a, b));
            }
            if e.needle_active != f.needle_active {
                worst = f64::INFINITY;
            }
            checked += 1;
        }
        for (e, f) in self.cycles.iter().zip(&trace.cycles) {
            for (a, b) in [
                (e.production, f.production),
                (e.leaf_area, f.leaf_area),
                (e.total_demand, f.total_demand),
                (e.ring_allocation, f.ring_allocation),
                (e.pool_demand, f.pool_demand),
                (e.pressler_demand, f.pressler_demand),
            ] {
                worst = worst.max(relative(a, b));
            }
        }
        if self.cycles.len() != trace.cycles.len() {
            worst = f64::INFINITY;
        }
        OracleReport {
            counts_equal,
            nodes_checked: checked,
            max_relative_difference: worst,
        }
    }

    /// Collapses the run into a class-level trace, using the first axis of
    /// each class as its representative.
    pub fn to_trace(&self, rules: &OrganogenesisRules) -> SimulationTrace {
        let counts = count_from_explicit(&self.tree);
        let mut classes: Vec<AxisClassState> = Vec::new();
        for key in counts.classes() {
            let axis = self
                .tree
                .axes
                .iter()
                .position(|a| a.class() == key)
                .expect("class has an axis");
            classes.push(AxisClassState {
                key,
                multiplicity: counts.multiplicity(key),
                metamers: self.tree.axes[axis]
                    .metamers
                    .iter()
                    .map(|&id| self.nodes[id].clone())
                    .collect(),
            });
        }
        SimulationTrace {
            rules: rules.clone(),
            cycles: self.cycles.clone(),
            classes,
            ledger: self.ledger.clone(),
        }
    }
}

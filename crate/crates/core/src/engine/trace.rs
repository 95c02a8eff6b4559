use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::OrganogenesisRules;
use crate::structure::AxisClassKey;

/// State of one metamer, shared by every axis of its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetamerRecord {
    pub rank: usize,
    pub birth_cycle: usize,
    /// Primary internode biomass, g.
    pub internode_mass: f64,
    /// Cumulative ring biomass, g.
    pub ring_mass: f64,
    /// cm
    pub length: f64,
    /// cm
    pub radius: f64,
    pub needle_mass: f64,
    pub needle_active: bool,
}

impl MetamerRecord {
    pub(crate) fn new(rank: usize, birth_cycle: usize) -> Self {
        MetamerRecord {
            rank,
            birth_cycle,
            internode_mass: 0.0,
            ring_mass: 0.0,
            length: 0.0,
            radius: 0.0,
            needle_mass: 0.0,
            needle_active: true,
        }
    }

    /// Internode plus ring biomass.
    pub fn wood_mass(&self) -> f64 {
        self.internode_mass + self.ring_mass
    }
}

/// Factorized state of all identical axes of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisClassState {
    pub key: AxisClassKey,
    pub multiplicity: u64,
    pub metamers: Vec<MetamerRecord>,
}

impl AxisClassState {
    /// Wood biomass of one axis of the class.
    pub fn axis_wood(&self) -> f64 {
        self.metamers.iter().map(MetamerRecord::wood_mass).sum()
    }

    /// Needle biomass of one axis of the class, dead needles included.
    pub fn axis_needles(&self) -> f64 {
        self.metamers.iter().map(|m| m.needle_mass).sum()
    }
}

/// Carbon budget of one growth cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Q(i−1): biomass shared out during this cycle.
    pub available: f64,
    /// Q(i): biomass produced by the foliage of this cycle.
    pub production: f64,
    /// S(i), m².
    pub leaf_area: f64,
    pub organ_demand: f64,
    pub ring_demand: f64,
    pub total_demand: f64,
    /// Biomass given to new organs.
    pub organ_allocation: f64,
    /// Q_rg(i).
    pub ring_allocation: f64,
    pub pool_demand: f64,
    pub pressler_demand: f64,
}

/// Per-cycle allocation to one axis of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub cycle: usize,
    pub key: AxisClassKey,
    pub multiplicity: u64,
    /// Biomass of the internode created this cycle on one axis.
    pub internode: f64,
    /// Biomass of the needles created this cycle on one axis.
    pub needle: f64,
    /// Ring biomass laid down this cycle on one axis.
    pub ring: f64,
}

impl LedgerEntry {
    /// Multiplicity-weighted biomass received by the whole class.
    pub fn class_total(&self) -> f64 {
        self.multiplicity as f64 * (self.internode + self.needle + self.ring)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub rules: OrganogenesisRules,
    pub cycles: Vec<CycleRecord>,
    /// Final state, ordered by PA then birth cycle.
    pub classes: Vec<AxisClassState>,
    pub ledger: Vec<LedgerEntry>,
}

impl SimulationTrace {
    pub fn class(&self, key: AxisClassKey) -> Option<&AxisClassState> {
        self.classes.iter().find(|c| c.key == key)
    }

    pub fn stem(&self) -> &AxisClassState {
        &self.classes[0]
    }

    /// Multiplicity-weighted (wood, needle) biomass of the whole tree.
    pub fn total_biomass(&self) -> (f64, f64) {
        self.classes.iter().fold((0.0, 0.0), |(w, n), c| {
            let m = c.multiplicity as f64;
            (w + m * c.axis_wood(), n + m * c.axis_needles())
        })
    }

    /// One CSV row per cycle.
    pub fn write_cycles_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for record in &self.cycles {
            writer.serialize(record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// One CSV row per metamer class position.
    pub fn write_classes_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record([
            "pa",
            "birth_cycle",
            "multiplicity",
            "rank",
            "metamer_birth_cycle",
            "internode_mass",
            "ring_mass",
            "length",
            "radius",
            "needle_mass",
            "needle_active",
        ])?;
        for class in &self.classes {
            for m in &class.metamers {
                writer.write_record([
                    class.key.pa.to_string(),
                    class.key.birth_cycle.to_string(),
                    class.multiplicity.to_string(),
                    m.rank.to_string(),
                    m.birth_cycle.to_string(),
                    m.internode_mass.to_string(),
                    m.ring_mass.to_string(),
                    m.length.to_string(),
                    m.radius.to_string(),
                    m.needle_mass.to_string(),
                    m.needle_active.to_string(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

//! Observation patterns: how a simulated tree is described for comparison
//! with measured target data.
//!
//! * Pattern 1 (organ level): every stem internode plus, for each lateral
//!   class, one representative axis internode by internode.
//! * Pattern 2 (compartment level): every stem internode with its radius,
//!   and the branches lumped into crown wood and needle totals.
//!
//! Both are [`ObservationPattern`] strategies registered by name in
//! [`PatternRegistry`].

mod allometry;
mod targets;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use allometry::{allometry_records, fit_allometry, read_allometry_csv, AllometryFit};
pub use targets::{parse_target_file, parse_targets, write_target_file, write_targets, TargetDataset, TargetRow};

use crate::engine::SimulationTrace;
use crate::error::PatternError;
use crate::registry::Registry;
use crate::structure::AxisClassKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    StemLen,
    StemRadius,
    StemWood,
    StemNeedle,
    BranchLen,
    BranchWood,
    BranchNeedle,
    CrownBranchWood,
    CrownBranchNeedle,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 9] = [
        ObservableKind::StemLen,
        ObservableKind::StemRadius,
        ObservableKind::StemWood,
        ObservableKind::StemNeedle,
        ObservableKind::BranchLen,
        ObservableKind::BranchWood,
        ObservableKind::BranchNeedle,
        ObservableKind::CrownBranchWood,
        ObservableKind::CrownBranchNeedle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObservableKind::StemLen => "stem_len",
            ObservableKind::StemRadius => "stem_radius",
            ObservableKind::StemWood => "stem_wood",
            ObservableKind::StemNeedle => "stem_needle",
            ObservableKind::BranchLen => "branch_len",
            ObservableKind::BranchWood => "branch_wood",
            ObservableKind::BranchNeedle => "branch_needle",
            ObservableKind::CrownBranchWood => "crown_branch_wood",
            ObservableKind::CrownBranchNeedle => "crown_branch_needle",
        }
    }

    pub fn unit(self) -> Unit {
        match self {
            ObservableKind::StemLen | ObservableKind::StemRadius | ObservableKind::BranchLen => Unit::Cm,
            _ => Unit::G,
        }
    }
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObservableKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObservableKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown observable kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Cm,
    G,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Cm => "cm",
            Unit::G => "g",
        }
    }
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cm" => Ok(Unit::Cm),
            "g" => Ok(Unit::G),
            other => Err(format!("unknown unit `{other}`")),
        }
    }
}

/// Identifies one observable. Stem rows use PA 1 and birth cycle 1; crown
/// totals use PA 0, birth cycle 0 and rank 0, or the bearing stem rank for
/// per-whorl totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObservationKey {
    pub kind: ObservableKind,
    pub pa: usize,
    pub birth_cycle: usize,
    pub rank: usize,
}

impl fmt::Display for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(pa={}, birth={}, rank={})",
            self.kind, self.pa, self.birth_cycle, self.rank
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub key: ObservationKey,
    pub value: f64,
}

/// Observables produced from one trace, in the pattern's documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVector {
    pub pattern: u8,
    pub rows: Vec<Observation>,
}

impl PatternVector {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|o| o.value)
    }

    /// The vector as a target dataset with unit weights.
    pub fn to_targets(&self) -> TargetDataset {
        TargetDataset {
            pattern: Some(self.pattern),
            rows: self
                .rows
                .iter()
                .map(|o| TargetRow {
                    key: o.key,
                    value: o.value,
                    unit: o.key.kind.unit(),
                    weight: None,
                })
                .collect(),
        }
    }
}

/// A way of describing a simulated tree as a vector of observables.
pub trait ObservationPattern: Send + Sync {
    /// Registry name.
    fn name(&self) -> &'static str;

    /// Pattern number written in target files.
    fn id(&self) -> u8;

    fn description(&self) -> &'static str;

    /// Whether rows of this kind may appear in the pattern's target files.
    fn accepts(&self, kind: ObservableKind) -> bool;

    fn extract(&self, trace: &SimulationTrace) -> PatternVector;
}

fn stem_key(kind: ObservableKind, rank: usize) -> ObservationKey {
    ObservationKey {
        kind,
        pa: 1,
        birth_cycle: 1,
        rank,
    }
}

/// Organ level: stem and one representative axis per lateral class, internode
/// by internode (length, wood, needles).
#[derive(Debug, Default, Clone, Copy)]
pub struct OrganLevel;

impl ObservationPattern for OrganLevel {
    fn name(&self) -> &'static str {
        "organ"
    }

    fn id(&self) -> u8 {
        1
    }

    fn description(&self) -> &'static str {
        "organ level: stem and one axis per (PA, birth cycle) class, internode by internode"
    }

    fn accepts(&self, kind: ObservableKind) -> bool {
        matches!(
            kind,
            ObservableKind::StemLen
                | ObservableKind::StemWood
                | ObservableKind::StemNeedle
                | ObservableKind::BranchLen
                | ObservableKind::BranchWood
                | ObservableKind::BranchNeedle
        )
    }

    fn extract(&self, trace: &SimulationTrace) -> PatternVector {
        let mut rows = Vec::new();
        for m in &trace.stem().metamers {
            rows.push(Observation {
                key: stem_key(ObservableKind::StemLen, m.rank),
                value: m.length,
            });
            rows.push(Observation {
                key: stem_key(ObservableKind::StemWood, m.rank),
                value: m.wood_mass(),
            });
            rows.push(Observation {
                key: stem_key(ObservableKind::StemNeedle, m.rank),
                value: m.needle_mass,
            });
        }
        for class in trace.classes.iter().filter(|c| c.key.pa > 1) {
            let key = |kind, rank| ObservationKey {
                kind,
                pa: class.key.pa,
                birth_cycle: class.key.birth_cycle,
                rank,
            };
            for m in &class.metamers {
                rows.push(Observation {
                    key: key(ObservableKind::BranchLen, m.rank),
                    value: m.length,
                });
                rows.push(Observation {
                    key: key(ObservableKind::BranchWood, m.rank),
                    value: m.wood_mass(),
                });
                rows.push(Observation {
                    key: key(ObservableKind::BranchNeedle, m.rank),
                    value: m.needle_mass,
                });
            }
        }
        PatternVector { pattern: 1, rows }
    }
}

/// Compartment level: stem internode by internode (length, radius, wood,
/// needles) and branch biomass aggregated over the crown, or per whorl.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompartmentLevel {
    pub per_whorl: bool,
}

/// Wood and needle biomass of one axis of every class including everything
/// it bears, keyed by class.
pub fn subtree_biomass(trace: &SimulationTrace) -> BTreeMap<AxisClassKey, (f64, f64)> {
    let horizon = trace.rules.horizon;
    let mut totals: BTreeMap<AxisClassKey, (f64, f64)> = BTreeMap::new();
    for class in trace.classes.iter().rev() {
        let nb = trace.rules.branching(class.key.pa) as f64;
        let (mut wood, mut needles) = (class.axis_wood(), class.axis_needles());
        if nb > 0.0 {
            for rank in 1..=class.metamers.len() {
                let lateral = AxisClassKey::new(class.key.pa + 1, class.key.birth_cycle + rank);
                if lateral.birth_cycle > horizon {
                    break;
                }
                if let Some(&(w, n)) = totals.get(&lateral) {
                    wood += nb * w;
                    needles += nb * n;
                }
            }
        }
        totals.insert(class.key, (wood, needles));
    }
    totals
}

impl ObservationPattern for CompartmentLevel {
    fn name(&self) -> &'static str {
        if self.per_whorl {
            "compartment-whorl"
        } else {
            "compartment"
        }
    }

    fn id(&self) -> u8 {
        2
    }

    fn description(&self) -> &'static str {
        if self.per_whorl {
            "compartment level: stem internode by internode, branch biomass per stem whorl"
        } else {
            "compartment level: stem internode by internode, branch biomass as crown totals"
        }
    }

    fn accepts(&self, kind: ObservableKind) -> bool {
        matches!(
            kind,
            ObservableKind::StemLen
                | ObservableKind::StemRadius
                | ObservableKind::StemWood
                | ObservableKind::StemNeedle
                | ObservableKind::CrownBranchWood
                | ObservableKind::CrownBranchNeedle
        )
    }

    fn extract(&self, trace: &SimulationTrace) -> PatternVector {
        let mut rows = Vec::new();
        for m in &trace.stem().metamers {
            for (kind, value) in [
                (ObservableKind::StemLen, m.length),
                (ObservableKind::StemRadius, m.radius),
                (ObservableKind::StemWood, m.wood_mass()),
                (ObservableKind::StemNeedle, m.needle_mass),
            ] {
                rows.push(Observation {
                    key: stem_key(kind, m.rank),
                    value,
                });
            }
        }
        let crown_key = |kind, rank| ObservationKey {
            kind,
            pa: 0,
            birth_cycle: 0,
            rank,
        };
        if self.per_whorl {
            let totals = subtree_biomass(trace);
            let nb = trace.rules.branching(1) as f64;
            for m in &trace.stem().metamers {
                let lateral = AxisClassKey::new(2, m.rank + 1);
                if let Some(&(w, n)) = totals.get(&lateral) {
                    rows.push(Observation {
                        key: crown_key(ObservableKind::CrownBranchWood, m.rank),
                        value: nb * w,
                    });
                    rows.push(Observation {
                        key: crown_key(ObservableKind::CrownBranchNeedle, m.rank),
                        value: nb * n,
                    });
                }
            }
        } else {
            let (mut wood, mut needles) = (0.0, 0.0);
            for class in trace.classes.iter().filter(|c| c.key.pa > 1) {
                let m = class.multiplicity as f64;
                wood += m * class.axis_wood();
                needles += m * class.axis_needles();
            }
            rows.push(Observation {
                key: crown_key(ObservableKind::CrownBranchWood, 0),
                value: wood,
            });
            rows.push(Observation {
                key: crown_key(ObservableKind::CrownBranchNeedle, 0),
                value: needles,
            });
        }
        PatternVector { pattern: 2, rows }
    }
}

pub fn extract_pattern1(trace: &SimulationTrace) -> PatternVector {
    OrganLevel.extract(trace)
}

pub fn extract_pattern2(trace: &SimulationTrace) -> PatternVector {
    CompartmentLevel { per_whorl: false }.extract(trace)
}

/// Observation patterns by name. `1` and `2` alias the default organ and
/// compartment patterns.
pub struct PatternRegistry {
    inner: Registry<dyn ObservationPattern>,
}

impl Default for PatternRegistry {
    fn default() -> Self {
        let mut inner: Registry<dyn ObservationPattern> = Registry::new();
        inner.register("organ", Arc::new(OrganLevel));
        inner.register("compartment", Arc::new(CompartmentLevel { per_whorl: false }));
        inner.register("compartment-whorl", Arc::new(CompartmentLevel { per_whorl: true }));
        inner.alias("1", "organ");
        inner.alias("2", "compartment");
        PatternRegistry { inner }
    }
}

impl PatternRegistry {
    pub fn get(&self, name: &str) -> Result<Arc<dyn ObservationPattern>, PatternError> {
        self.inner
            .get(name)
            .ok_or_else(|| PatternError::UnknownPattern(name.to_string()))
    }

    pub fn register(&mut self, pattern: Arc<dyn ObservationPattern>) {
        self.inner.register(pattern.name(), pattern);
    }

    pub fn names(&self) -> Vec<&str> {
        self.inner.names()
    }

    /// The pattern able to reproduce a target dataset: pattern 2 targets with
    /// per-whorl crown rows select the per-whorl variant.
    pub fn for_targets(&self, targets: &TargetDataset) -> Result<Arc<dyn ObservationPattern>, PatternError> {
        match targets.pattern {
            Some(1) => self.get("organ"),
            Some(2) => {
                let per_whorl = targets.rows.iter().any(|r| {
                    matches!(
                        r.key.kind,
                        ObservableKind::CrownBranchWood | ObservableKind::CrownBranchNeedle
                    ) && r.key.rank > 0
                });
                self.get(if per_whorl { "compartment-whorl" } else { "compartment" })
            }
            Some(other) => Err(PatternError::UnknownPattern(other.to_string())),
            None => Err(PatternError::Format("target dataset is empty".into())),
        }
    }
}

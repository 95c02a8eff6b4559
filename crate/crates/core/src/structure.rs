//! Tree topology in two forms.
//!
//! The factorized form groups every axis by its class, the pair
//! (physiological age, birth cycle). All axes of one class are identical, so
//! the tree is described by a multiplicity per class:
//!
//! ```text
//! M(1, 1)     = 1
//! M(k+1, t+1) = n_b(k) · Σ_{a ≤ t} M(k, a)
//! ```
//!
//! A metamer created at cycle i bears its laterals at cycle i+1, and every
//! living axis adds one metamer per cycle.
//!
//! The explicit form stores every metamer. It grows much faster than the
//! factorized form and exists as a reference for testing and benchmarking.

use serde::{Deserialize, Serialize};

use crate::config::OrganogenesisRules;
use crate::error::StructureError;

/// Default ceiling on the number of metamers an explicit expansion may hold.
pub const DEFAULT_NODE_CAP: u64 = 10_000_000;

/// Environment variable overriding [`DEFAULT_NODE_CAP`].
pub const NODE_CAP_ENV: &str = "FSTM_NODE_CAP";

/// Node cap from `FSTM_NODE_CAP`, or the default when unset or unparsable.
pub fn node_cap_from_env() -> u64 {
    std::env::var(NODE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_NODE_CAP)
}

/// Whether a needle born at `birth_cycle` still functions at `cycle`.
pub fn needle_active(birth_cycle: usize, cycle: usize, lifespan: u32) -> bool {
    cycle >= birth_cycle && cycle - birth_cycle < lifespan as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AxisClassKey {
    pub pa: usize,
    pub birth_cycle: usize,
}

impl AxisClassKey {
    pub fn new(pa: usize, birth_cycle: usize) -> Self {
        AxisClassKey { pa, birth_cycle }
    }

    /// Number of metamers an axis of this class carries at `cycle`.
    pub fn metamers_at(&self, cycle: usize) -> usize {
        (cycle + 1).saturating_sub(self.birth_cycle)
    }
}

/// Organ and axis counts of the factorized tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureCounts {
    pub pa_max: usize,
    pub horizon: usize,
    branching: Vec<u64>,
    /// `[pa-1][birth-1]`
    multiplicity: Vec<Vec<u64>>,
    /// `[pa-1][cycle-1]`
    new_internodes: Vec<Vec<u64>>,
    /// `[pa-1][cycle-1]`
    living_internodes: Vec<Vec<u64>>,
}

impl StructureCounts {
    fn from_multiplicity(pa_max: usize, horizon: usize, branching: Vec<u64>, multiplicity: Vec<Vec<u64>>) -> Self {
        let new_internodes: Vec<Vec<u64>> = multiplicity.iter().map(|row| prefix_sums(row)).collect();
        let living_internodes = new_internodes.iter().map(|row| prefix_sums(row)).collect();
        StructureCounts {
            pa_max,
            horizon,
            branching,
            multiplicity,
            new_internodes,
            living_internodes,
        }
    }

    /// n_b(k).
    pub fn branching(&self, pa: usize) -> u64 {
        if pa == 0 || pa >= self.pa_max {
            0
        } else {
            self.branching[pa - 1]
        }
    }

    /// M(k, a); zero outside the simulated range.
    pub fn multiplicity(&self, key: AxisClassKey) -> u64 {
        if key.pa == 0 || key.pa > self.pa_max || key.birth_cycle == 0 || key.birth_cycle > self.horizon {
            return 0;
        }
        self.multiplicity[key.pa - 1][key.birth_cycle - 1]
    }

    /// N_e(k, i): internodes of PA k created at cycle i. Needles follow the
    /// same count, one needle organ per metamer.
    pub fn new_internodes(&self, pa: usize, cycle: usize) -> u64 {
        lookup(&self.new_internodes, pa, cycle)
    }

    /// N_t(k, i): internodes of PA k alive at cycle i.
    pub fn living_internodes(&self, pa: usize, cycle: usize) -> u64 {
        lookup(&self.living_internodes, pa, cycle)
    }

    /// Needles of PA k still functioning at cycle i.
    pub fn active_needles(&self, pa: usize, cycle: usize, lifespan: u32) -> u64 {
        (1..=cycle.min(self.horizon))
            .filter(|&j| needle_active(j, cycle, lifespan))
            .map(|j| self.new_internodes(pa, j))
            .sum()
    }

    /// Existing axis classes ordered by PA, then birth cycle.
    pub fn classes(&self) -> impl Iterator<Item = AxisClassKey> + '_ {
        (1..=self.pa_max).flat_map(move |pa| {
            (1..=self.horizon)
                .map(move |a| AxisClassKey::new(pa, a))
                .filter(move |&key| self.multiplicity(key) > 0)
        })
    }

    /// Total number of metamers in the explicit tree at the horizon.
    pub fn total_internodes(&self) -> u64 {
        (1..=self.pa_max)
            .map(|pa| self.living_internodes(pa, self.horizon))
            .fold(0u64, u64::saturating_add)
    }

    /// Number of distinct (class, rank) positions at the horizon.
    pub fn class_metamers(&self) -> u64 {
        self.classes().map(|key| key.metamers_at(self.horizon) as u64).sum()
    }
}

fn lookup(table: &[Vec<u64>], pa: usize, cycle: usize) -> u64 {
    if pa == 0 || cycle == 0 {
        return 0;
    }
    table
        .get(pa - 1)
        .and_then(|row| row.get(cycle - 1))
        .copied()
        .unwrap_or(0)
}

fn prefix_sums(row: &[u64]) -> Vec<u64> {
    row.iter()
        .scan(0u64, |acc, &v| {
            *acc = acc.saturating_add(v);
            Some(*acc)
        })
        .collect()
}

/// Factorized counts from the branching recurrence; O(PA_m · N).
pub fn build_counts(rules: &OrganogenesisRules) -> StructureCounts {
    let pa_max = rules.pa_max;
    let horizon = rules.horizon;
    let branching: Vec<u64> = (1..pa_max).map(|k| rules.branching(k)).collect();
    let mut multiplicity = vec![vec![0u64; horizon]; pa_max];
    multiplicity[0][0] = 1;
    for k in 1..pa_max {
        let nb = branching[k - 1];
        let mut living = 0u64;
        // `t` is the 1-based cycle at which the bearer metamers appear.
        for t in 1..horizon {
            living = living.saturating_add(multiplicity[k - 1][t - 1]);
            multiplicity[k][t] = nb.saturating_mul(living);
        }
    }
    StructureCounts::from_multiplicity(pa_max, horizon, branching, multiplicity)
}

/// One metamer of the explicit tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metamer {
    pub pa: usize,
    pub birth_cycle: usize,
    pub axis: usize,
    pub rank: usize,
    /// Previous metamer on the same axis, or the bearer of a lateral axis.
    pub parent: Option<usize>,
    /// Next metamer on the same axis.
    pub next: Option<usize>,
    /// Lateral axes borne by this metamer.
    pub laterals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub pa: usize,
    pub birth_cycle: usize,
    pub bearer: Option<usize>,
    pub metamers: Vec<usize>,
}

impl Axis {
    pub fn class(&self) -> AxisClassKey {
        AxisClassKey::new(self.pa, self.birth_cycle)
    }
}

/// The unfactorized tree: every metamer stored, in creation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplicitTree {
    pub pa_max: usize,
    pub horizon: usize,
    pub branching: Vec<u64>,
    pub nodes: Vec<Metamer>,
    pub axes: Vec<Axis>,
}

/// Grows every metamer of the tree described by `rules`.
///
/// The projected size is computed from the factorized counts first; nothing
/// is allocated when it exceeds `cap`.
pub fn expand_explicit(rules: &OrganogenesisRules, cap: u64) -> Result<ExplicitTree, StructureError> {
    let projected = build_counts(rules).total_internodes();
    if projected > cap {
        return Err(StructureError::CapExceeded { projected, cap });
    }
    let branching: Vec<u64> = (1..rules.pa_max).map(|k| rules.branching(k)).collect();
    let mut nodes: Vec<Metamer> = Vec::with_capacity(projected as usize);
    let mut axes = vec![Axis {
        pa: 1,
        birth_cycle: 1,
        bearer: None,
        metamers: Vec::new(),
    }];
    let mut previous_cohort = 0..0;

    for cycle in 1..=rules.horizon {
        for bearer in previous_cohort.clone() {
            let pa = nodes[bearer].pa;
            for _ in 0..rules.branching(pa) {
                axes.push(Axis {
                    pa: pa + 1,
                    birth_cycle: cycle,
                    bearer: Some(bearer),
                    metamers: Vec::new(),
                });
                nodes[bearer].laterals.push(axes.len() - 1);
            }
        }
        let start = nodes.len();
        for (axis_id, axis) in axes.iter_mut().enumerate() {
            let id = nodes.len();
            let parent = axis.metamers.last().copied().or(axis.bearer);
            if let Some(&last) = axis.metamers.last() {
                nodes[last].next = Some(id);
            }
            nodes.push(Metamer {
                pa: axis.pa,
                birth_cycle: cycle,
                axis: axis_id,
                rank: axis.metamers.len() + 1,
                parent,
                next: None,
                laterals: Vec::new(),
            });
            axis.metamers.push(id);
        }
        previous_cohort = start..nodes.len();
    }

    Ok(ExplicitTree {
        pa_max: rules.pa_max,
        horizon: rules.horizon,
        branching,
        nodes,
        axes,
    })
}

impl ExplicitTree {
    /// Foliage above every metamer at `cycle`, by node index.
    ///
    /// Above a metamer lies the rest of its axis and everything borne on it or
    /// on later metamers of that axis. `foliage` gives each node's own foliage
    /// weight; it is excluded from its own total when `include_own` is false.
    pub fn foliage_above<F>(&self, cycle: usize, include_own: bool, foliage: F) -> Vec<f64>
    where
        F: Fn(usize) -> f64,
    {
        let mut subtree = vec![0.0; self.nodes.len()];
        let mut above = vec![0.0; self.nodes.len()];
        // children are always created after their parent
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if node.birth_cycle > cycle {
                continue;
            }
            let own = foliage(id);
            let mut rest = node.next.map_or(0.0, |n| subtree[n]);
            for &axis in &node.laterals {
                if let Some(&first) = self.axes[axis].metamers.first() {
                    rest += subtree[first];
                }
            }
            subtree[id] = own + rest;
            above[id] = if include_own { own + rest } else { rest };
        }
        above
    }
}

/// Counts read back from an explicit tree.
pub fn count_from_explicit(tree: &ExplicitTree) -> StructureCounts {
    let mut multiplicity = vec![vec![0u64; tree.horizon]; tree.pa_max];
    for axis in &tree.axes {
        multiplicity[axis.pa - 1][axis.birth_cycle - 1] += 1;
    }
    StructureCounts::from_multiplicity(tree.pa_max, tree.horizon, tree.branching.clone(), multiplicity)
}

/// Foliage weight above each position of each class at one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FoliageAbove {
    pub cycle: usize,
    /// `[pa-1][birth-1]`
    classes: Vec<Vec<Option<ClassFoliage>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFoliage {
    /// N_a by rank (index 0 is rank 1).
    pub above: Vec<f64>,
    /// Foliage of one whole axis of the class including its sub-branches.
    pub total: f64,
}

impl FoliageAbove {
    pub fn class(&self, key: AxisClassKey) -> Option<&ClassFoliage> {
        self.classes
            .get(key.pa.wrapping_sub(1))
            .and_then(|row| row.get(key.birth_cycle.wrapping_sub(1)))
            .and_then(|c| c.as_ref())
    }

    /// N_a at one position; zero for positions that do not exist.
    pub fn at(&self, key: AxisClassKey, rank: usize) -> f64 {
        self.class(key)
            .and_then(|c| c.above.get(rank.wrapping_sub(1)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total foliage of one axis of the class.
    pub fn axis_total(&self, key: AxisClassKey) -> f64 {
        self.class(key).map_or(0.0, |c| c.total)
    }
}

/// Foliage above every position of the factorized tree at `cycle`.
///
/// `foliage(key, rank)` is the own foliage of one metamer of that class.
/// Classes are resolved from the highest PA down, so each lateral class's
/// total is known before its bearers are visited.
pub fn foliage_above<F>(counts: &StructureCounts, cycle: usize, include_own: bool, foliage: F) -> FoliageAbove
where
    F: Fn(AxisClassKey, usize) -> f64,
{
    let horizon = counts.horizon;
    let mut classes: Vec<Vec<Option<ClassFoliage>>> = vec![vec![None; horizon]; counts.pa_max];
    for pa in (1..=counts.pa_max).rev() {
        let nb = counts.branching(pa) as f64;
        for birth in 1..=cycle.min(horizon) {
            let key = AxisClassKey::new(pa, birth);
            if counts.multiplicity(key) == 0 {
                continue;
            }
            let m = key.metamers_at(cycle);
            let mut above = vec![0.0; m];
            let mut acc = 0.0;
            for rank in (1..=m).rev() {
                let own = foliage(key, rank);
                let lateral_birth = birth + rank;
                let laterals = if nb > 0.0 && lateral_birth <= cycle {
                    classes[pa][lateral_birth - 1].as_ref().map_or(0.0, |c| c.total)
                } else {
                    0.0
                };
                acc += own + nb * laterals;
                above[rank - 1] = if include_own { acc } else { acc - own };
            }
            classes[pa - 1][birth - 1] = Some(ClassFoliage { above, total: acc });
        }
    }
    FoliageAbove { cycle, classes }
}

/// Number of active needles above every position, one needle organ per
/// metamer.
pub fn leaves_above(counts: &StructureCounts, cycle: usize, lifespan: u32, include_own: bool) -> FoliageAbove {
    foliage_above(counts, cycle, include_own, |key, rank| {
        let birth = key.birth_cycle + rank - 1;
        if needle_active(birth, cycle, lifespan) {
            1.0
        } else {
            0.0
        }
    })
}

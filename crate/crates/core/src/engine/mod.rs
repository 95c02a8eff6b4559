//! Growth-cycle loop on the factorized tree.
//!
//! Each cycle runs, in order: organogenesis, demand, allocation of Q(i−1) to
//! the new organs and to the ring compartment, geometry of the new organs,
//! ring partitioning, and finally the leaf area and production Q(i) of the
//! resulting foliage. Q(0) is the seed biomass.

pub mod explicit;
mod trace;

pub use trace::{AxisClassState, CycleRecord, LedgerEntry, MetamerRecord, SimulationTrace};

use crate::config::{self, FoliageMeasure, ModelParameters, OrganogenesisRules};
use crate::error::{ConfigError, EngineError};
use crate::structure::{self, build_counts, needle_active, AxisClassKey, FoliageAbove, StructureCounts};

/// Leaf area S = active needle biomass / specific needle weight, m².
pub fn compute_leaf_area(active_needle_mass: f64, slw: f64) -> f64 {
    active_needle_mass / slw
}

/// Biomass production Q(i) = E(i)·S_p/r·(1 − exp(−k·S/S_p)).
pub fn compute_production(leaf_area: f64, params: &ModelParameters, cycle: usize) -> f64 {
    let env = params.env.at(cycle);
    env * params.s_p / params.r * -(-params.k_beer * leaf_area / params.s_p).exp_m1()
}

/// Ring demand and total demand of one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub organ: f64,
    pub ring: f64,
    pub total: f64,
}

/// Solves D_rg = P_0 + P_1·Q(i−1)/(D_org + D_rg) for its non-negative root.
///
/// The fixed point is the positive root of
/// `x² + (D_org − P_0)·x − (P_0·D_org + P_1·Q) = 0`.
pub fn solve_ring_demand(organ_demand: f64, q_prev: f64, p0: f64, p1: f64) -> Demand {
    let c = p1 * q_prev;
    let ring = if c == 0.0 {
        // (x − P_0)(x + D_org) = 0
        p0
    } else {
        let b = organ_demand - p0;
        let constant = p0 * organ_demand + c;
        let root = (b * b + 4.0 * constant).sqrt();
        if b >= 0.0 {
            2.0 * constant / (b + root)
        } else {
            (root - b) / 2.0
        }
    };
    let total = organ_demand + ring;
    if total == 0.0 {
        return Demand {
            organ: organ_demand,
            ring: 0.0,
            total: 0.0,
        };
    }
    Demand {
        organ: organ_demand,
        ring,
        total,
    }
}

/// Biomass given to each new organ, by PA.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganIncrements {
    /// Per-needle increment, index 0 is PA 1.
    pub needle: Vec<f64>,
    /// Per-internode increment, index 0 is PA 1.
    pub internode: Vec<f64>,
    /// Σ increments weighted by organ counts.
    pub organ_total: f64,
    /// Q_rg(i).
    pub ring_total: f64,
}

/// Organ demand D_org(i) = Σ_k (P_a(k) + P_e(k))·N(k, i).
pub fn organ_demand(counts: &StructureCounts, params: &ModelParameters, cycle: usize) -> f64 {
    (1..=counts.pa_max)
        .map(|pa| {
            let n = counts.new_internodes(pa, cycle) as f64;
            (params.sink_needle_at(pa) + params.sink_internode_at(pa)) * n
        })
        .sum()
}

/// Δq_o(k, i) = P_o(k)·Q(i−1)/D(i) for every organ kind and PA.
pub fn allocate_new_organs(
    counts: &StructureCounts,
    params: &ModelParameters,
    q_prev: f64,
    demand: &Demand,
    cycle: usize,
) -> OrganIncrements {
    let ratio = if demand.total > 0.0 { q_prev / demand.total } else { 0.0 };
    let needle: Vec<f64> = (1..=counts.pa_max)
        .map(|pa| params.sink_needle_at(pa) * ratio)
        .collect();
    let internode: Vec<f64> = (1..=counts.pa_max)
        .map(|pa| params.sink_internode_at(pa) * ratio)
        .collect();
    let organ_total = (1..=counts.pa_max)
        .map(|pa| (needle[pa - 1] + internode[pa - 1]) * counts.new_internodes(pa, cycle) as f64)
        .sum();
    OrganIncrements {
        needle,
        internode,
        organ_total,
        ring_total: demand.ring * ratio,
    }
}

/// One place where ring biomass can be laid down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSite {
    /// Number of identical internodes at this position.
    pub weight: f64,
    /// p_rg(k)·l.
    pub sink: f64,
    /// N_a: foliage above the position.
    pub foliage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingPartition {
    /// Per-internode increments, aligned with the sites.
    pub increments: Vec<f64>,
    pub pool_demand: f64,
    pub pressler_demand: f64,
}

/// Splits `q_rg` between sites:
/// `q = [(1−λ)/D_pool + λ·N_a/D_pressler]·p_rg·l·Q_rg`.
///
/// With no foliage anywhere the Pressler share is dropped and the pool share
/// carries all of `q_rg`.
pub fn partition_rings(sites: &[RingSite], lambda: f64, q_rg: f64, cycle: usize) -> Result<RingPartition, EngineError> {
    let pool_demand: f64 = sites.iter().map(|s| s.weight * s.sink).sum();
    let pressler_demand: f64 = sites.iter().map(|s| s.weight * s.sink * s.foliage).sum();
    if q_rg == 0.0 {
        return Ok(RingPartition {
            increments: vec![0.0; sites.len()],
            pool_demand,
            pressler_demand,
        });
    }
    if pool_demand <= 0.0 {
        return Err(EngineError::NoRingSupport { cycle, q_rg });
    }
    let (pool_share, pressler_share) = if lambda > 0.0 && pressler_demand > 0.0 {
        ((1.0 - lambda) / pool_demand, lambda / pressler_demand)
    } else {
        (1.0 / pool_demand, 0.0)
    };
    let increments = sites
        .iter()
        .map(|s| (pool_share + pressler_share * s.foliage) * s.sink * q_rg)
        .collect();
    Ok(RingPartition {
        increments,
        pool_demand,
        pressler_demand,
    })
}

/// Internode length from its primary biomass, cm.
pub fn apply_allometry(internode_mass: f64, b: f64, beta: f64) -> f64 {
    if internode_mass <= 0.0 {
        0.0
    } else {
        b * internode_mass.powf(beta)
    }
}

/// Radius of a wooden cylinder of the given biomass and length, cm.
pub fn radius_from_biomass(total_mass: f64, length: f64, wood_density: f64) -> f64 {
    if length <= 0.0 || total_mass <= 0.0 {
        0.0
    } else {
        (total_mass / (wood_density * std::f64::consts::PI * length)).sqrt()
    }
}

/// Mutable state of a factorized simulation between cycles.
#[derive(Debug, Clone)]
pub struct GrowthState {
    counts: StructureCounts,
    rules: OrganogenesisRules,
    classes: Vec<AxisClassState>,
    /// `[pa-1][birth-1]` → position in `classes`
    index: Vec<Vec<Option<usize>>>,
    cycle: usize,
    q_prev: f64,
    cycles: Vec<CycleRecord>,
    ledger: Vec<LedgerEntry>,
}

impl GrowthState {
    pub fn new(params: &ModelParameters, rules: &OrganogenesisRules) -> Result<Self, EngineError> {
        config::validate(params, rules).map_err(|issues| EngineError::Config(ConfigError::Validation(issues)))?;
        let counts = build_counts(rules);
        let mut index = vec![vec![None; rules.horizon]; rules.pa_max];
        let classes: Vec<AxisClassState> = counts
            .classes()
            .enumerate()
            .map(|(i, key)| {
                index[key.pa - 1][key.birth_cycle - 1] = Some(i);
                AxisClassState {
                    key,
                    multiplicity: counts.multiplicity(key),
                    metamers: Vec::with_capacity(key.metamers_at(rules.horizon)),
                }
            })
            .collect();
        Ok(GrowthState {
            counts,
            rules: rules.clone(),
            classes,
            index,
            cycle: 0,
            q_prev: params.seed_biomass,
            cycles: Vec::with_capacity(rules.horizon),
            ledger: Vec::new(),
        })
    }

    /// Last completed cycle.
    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn counts(&self) -> &StructureCounts {
        &self.counts
    }

    pub fn classes(&self) -> &[AxisClassState] {
        &self.classes
    }

    fn class_index(&self, key: AxisClassKey) -> Option<usize> {
        self.index
            .get(key.pa.wrapping_sub(1))
            .and_then(|row| row.get(key.birth_cycle.wrapping_sub(1)))
            .copied()
            .flatten()
    }

    /// Foliage above every living position of the current state.
    pub fn foliage(&self, params: &ModelParameters) -> FoliageAbove {
        let lifespan = params.needle_lifespan;
        let cycle = self.cycle;
        structure::foliage_above(&self.counts, cycle, params.foliage_includes_own, |key, rank| {
            let Some(class) = self.class_index(key) else {
                return 0.0;
            };
            let m = &self.classes[class].metamers[rank - 1];
            if !needle_active(m.birth_cycle, cycle, lifespan) {
                return 0.0;
            }
            match params.foliage_measure {
                FoliageMeasure::Count => 1.0,
                FoliageMeasure::Mass => m.needle_mass,
            }
        })
    }

    /// Multiplicity-weighted biomass of functioning needles.
    pub fn active_needle_mass(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let own: f64 = c
                    .metamers
                    .iter()
                    .filter(|m| m.needle_active)
                    .map(|m| m.needle_mass)
                    .sum();
                c.multiplicity as f64 * own
            })
            .sum()
    }

    /// Runs one growth cycle and returns its carbon budget.
    pub fn step(&mut self, params: &ModelParameters) -> Result<CycleRecord, EngineError> {
        let cycle = self.cycle + 1;
        assert!(cycle <= self.rules.horizon, "cycle {cycle} is past the horizon");
        self.cycle = cycle;
        let q_prev = self.q_prev;

        // organogenesis
        for class in &mut self.classes {
            if class.key.birth_cycle <= cycle {
                let rank = class.metamers.len() + 1;
                class.metamers.push(MetamerRecord::new(rank, cycle));
            }
        }

        let demand = solve_ring_demand(
            organ_demand(&self.counts, params, cycle),
            q_prev,
            params.ring_sink_const,
            params.ring_sink_slope,
        );
        let organs = allocate_new_organs(&self.counts, params, q_prev, &demand, cycle);

        for class in &mut self.classes {
            if class.key.birth_cycle > cycle {
                continue;
            }
            let pa = class.key.pa;
            let (b, beta) = params.allometry_at(pa);
            let newest = class.metamers.last_mut().expect("class has a metamer");
            newest.internode_mass = organs.internode[pa - 1];
            newest.needle_mass = organs.needle[pa - 1];
            newest.length = apply_allometry(newest.internode_mass, b, beta);
            for m in &mut class.metamers {
                m.needle_active = needle_active(m.birth_cycle, cycle, params.needle_lifespan);
            }
        }

        let foliage = self.foliage(params);
        let mut sites = Vec::new();
        for class in self.classes.iter().filter(|c| c.key.birth_cycle <= cycle) {
            let density = params.ring_density_at(class.key.pa);
            let above = &foliage.class(class.key).expect("living class has foliage").above;
            for (m, &na) in class.metamers.iter().zip(above) {
                sites.push(RingSite {
                    weight: class.multiplicity as f64,
                    sink: density * m.length,
                    foliage: na,
                });
            }
        }
        let rings = partition_rings(&sites, params.lambda_pressler, organs.ring_total, cycle)?;

        let mut increments = rings.increments.iter();
        for class in self.classes.iter_mut().filter(|c| c.key.birth_cycle <= cycle) {
            let mut ring_on_axis = 0.0;
            for m in &mut class.metamers {
                let inc = *increments.next().expect("one increment per site");
                m.ring_mass += inc;
                ring_on_axis += inc;
                m.radius = radius_from_biomass(m.wood_mass(), m.length, params.wood_density);
            }
            let newest = class.metamers.last().expect("class has a metamer");
            self.ledger.push(LedgerEntry {
                cycle,
                key: class.key,
                multiplicity: class.multiplicity,
                internode: newest.internode_mass,
                needle: newest.needle_mass,
                ring: ring_on_axis,
            });
        }

        let leaf_area = compute_leaf_area(self.active_needle_mass(), params.slw);
        let production = compute_production(leaf_area, params, cycle);
        if !production.is_finite() {
            return Err(EngineError::NonFinite {
                cycle,
                what: "production",
            });
        }
        let record = CycleRecord {
            cycle,
            available: q_prev,
            production,
            leaf_area,
            organ_demand: demand.organ,
            ring_demand: demand.ring,
            total_demand: demand.total,
            organ_allocation: organs.organ_total,
            ring_allocation: organs.ring_total,
            pool_demand: rings.pool_demand,
            pressler_demand: rings.pressler_demand,
        };
        self.q_prev = production;
        self.cycles.push(record.clone());
        Ok(record)
    }

    pub fn into_trace(self) -> SimulationTrace {
        SimulationTrace {
            rules: self.rules,
            cycles: self.cycles,
            classes: self.classes,
            ledger: self.ledger,
        }
    }
}

/// Runs the factorized simulation over the whole horizon.
pub fn simulate(params: &ModelParameters, rules: &OrganogenesisRules) -> Result<SimulationTrace, EngineError> {
    let mut state = GrowthState::new(params, rules)?;
    for _ in 0..rules.horizon {
        state.step(params)?;
    }
    Ok(state.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    fn rules(pa_max: usize, nb: &[u32], horizon: usize) -> OrganogenesisRules {
        OrganogenesisRules {
            pa_max,
            branches_per_cycle: nb.to_vec(),
            horizon,
        }
    }

    #[test]
    fn leaf_area_is_mass_over_slw() {
        assert_eq!(compute_leaf_area(0.0, 100.0), 0.0);
        assert_eq!(compute_leaf_area(50.0, 100.0), 0.5);
    }

    #[test]
    fn production_values() {
        let mut p = ModelParameters::generic(1);
        p.s_p = 3.04;
        p.r = 1.79;
        p.k_beer = 1.0;
        assert_eq!(compute_production(0.0, &p, 1), 0.0);
        // (3.04/1.79)(1 − e⁻¹), evaluated independently
        assert!(rel(compute_production(3.04, &p, 1), 1.073_545_530_077_550_5) < 1e-12);
        let cap = p.s_p / p.r;
        assert!(rel(compute_production(1e6, &p, 1), cap) < 1e-12);
        let mut last = 0.0;
        for s in [0.01, 0.1, 1.0, 3.0, 10.0, 30.0] {
            let q = compute_production(s, &p, 1);
            assert!(q > last && q < cap);
            last = q;
        }
    }

    #[test]
    fn ring_demand_cases() {
        assert_eq!(solve_ring_demand(3.0, 5.0, 0.7, 0.0).ring, 0.7);
        assert_eq!(solve_ring_demand(3.0, 0.0, 0.7, 2.0).ring, 0.7);
        assert_eq!(solve_ring_demand(3.0, 5.0, 0.0, 0.0).ring, 0.0);
        let d = solve_ring_demand(1.0, 1.0, 1.0, 1.0);
        assert!(rel(d.ring, std::f64::consts::SQRT_2) < 1e-12);
        assert!(rel(d.total, 1.0 + std::f64::consts::SQRT_2) < 1e-12);
        let empty = solve_ring_demand(0.0, 4.0, 0.0, 0.0);
        assert_eq!((empty.ring, empty.total), (0.0, 0.0));
    }

    #[test]
    fn ring_demand_back_substitution_extremes() {
        for &(d, q, p0, p1) in &[
            (1e6, 1e-3, 1e-4, 1e-3),
            (1e-6, 1e6, 10.0, 5.0),
            (0.0, 3.0, 0.0, 2.0),
            (5.0, 2.0, 1e3, 1e-9),
        ] {
            let x = solve_ring_demand(d, q, p0, p1);
            let rhs = p0 + p1 * q / x.total;
            assert!(rel(x.ring, rhs) < 1e-12, "{d} {q} {p0} {p1}: {} vs {rhs}", x.ring);
        }
    }

    #[test]
    fn organ_allocation_proportional_to_sinks() {
        let counts = build_counts(&rules(1, &[], 1));
        let mut p = ModelParameters::generic(1);
        p.sink_needle = vec![1.0];
        p.sink_internode = vec![2.0];
        let demand = solve_ring_demand(organ_demand(&counts, &p, 1), 3.0, 0.0, 0.0);
        let inc = allocate_new_organs(&counts, &p, 3.0, &demand, 1);
        assert!(rel(inc.needle[0], 1.0) < 1e-15);
        assert!(rel(inc.internode[0], 2.0) < 1e-15);
        assert_eq!(inc.ring_total, 0.0);

        p.sink_internode = vec![0.0];
        let demand = solve_ring_demand(organ_demand(&counts, &p, 1), 3.0, 0.0, 0.0);
        let inc = allocate_new_organs(&counts, &p, 3.0, &demand, 1);
        assert_eq!(inc.needle[0], 3.0);
    }

    #[test]
    fn organ_allocation_conserves_mass() {
        let counts = build_counts(&rules(3, &[3, 2], 7));
        let p = ModelParameters::generic(3);
        for cycle in 1..=7 {
            let demand = solve_ring_demand(organ_demand(&counts, &p, cycle), 4.2, 0.5, 0.3);
            let inc = allocate_new_organs(&counts, &p, 4.2, &demand, cycle);
            assert!(rel(inc.organ_total + inc.ring_total, 4.2) < 1e-12);
        }
    }

    #[test]
    fn ring_partition_examples() {
        let site = |sink, foliage| RingSite {
            weight: 1.0,
            sink,
            foliage,
        };
        let uniform = partition_rings(&[site(1.0, 5.0), site(1.0, 0.0)], 0.0, 1.0, 1).unwrap();
        assert_eq!(uniform.increments, vec![0.5, 0.5]);

        let pressler = partition_rings(&[site(1.0, 3.0), site(1.0, 0.0)], 1.0, 1.0, 1).unwrap();
        assert_eq!(pressler.increments[1], 0.0);

        let mixed = partition_rings(&[site(1.0, 2.0), site(1.0, 0.0)], 0.4, 1.0, 1).unwrap();
        assert!((mixed.increments[0] - 0.7).abs() < 1e-15);
        assert!((mixed.increments[1] - 0.3).abs() < 1e-15);
        assert!((mixed.increments.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ring_partition_without_foliage_falls_back_to_pool() {
        let sites = [
            RingSite {
                weight: 2.0,
                sink: 1.0,
                foliage: 0.0,
            },
            RingSite {
                weight: 1.0,
                sink: 2.0,
                foliage: 0.0,
            },
        ];
        let part = partition_rings(&sites, 0.7, 4.0, 1).unwrap();
        assert_eq!(part.pressler_demand, 0.0);
        assert_eq!(part.increments, vec![1.0, 2.0]);
    }

    #[test]
    fn ring_partition_needs_length() {
        let sites = [RingSite {
            weight: 1.0,
            sink: 0.0,
            foliage: 1.0,
        }];
        assert!(matches!(
            partition_rings(&sites, 0.5, 1.0, 3),
            Err(EngineError::NoRingSupport { cycle: 3, .. })
        ));
        assert!(partition_rings(&sites, 0.5, 0.0, 3).is_ok());
    }

    #[test]
    fn allometry_and_radius() {
        assert_eq!(apply_allometry(4.0, 2.0, 0.5), 4.0);
        assert_eq!(apply_allometry(17.0, 3.0, 0.0), 3.0);
        assert_eq!(apply_allometry(0.0, 3.0, 0.5), 0.0);
        assert!((radius_from_biomass(std::f64::consts::PI, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(radius_from_biomass(2.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn single_metamer_holds_the_seed() {
        let mut p = ModelParameters::generic(1);
        p.ring_sink_const = 0.0;
        p.ring_sink_slope = 0.0;
        p.sink_internode = vec![0.5];
        p.seed_biomass = 3.0;
        let trace = simulate(&p, &rules(1, &[], 1)).unwrap();
        let m = &trace.stem().metamers[0];
        assert!(rel(m.needle_mass, 2.0) < 1e-15);
        assert!(rel(m.internode_mass, 1.0) < 1e-15);
        assert_eq!(m.ring_mass, 0.0);
    }

    #[test]
    fn ten_cycles_conserve_mass() {
        let p = ModelParameters::generic(3);
        let trace = simulate(&p, &rules(3, &[3, 2], 10)).unwrap();
        for c in &trace.cycles {
            assert!(rel(c.organ_allocation + c.ring_allocation, c.available) < 1e-9);
            assert!(rel(c.ring_allocation, c.available * c.ring_demand / c.total_demand) < 1e-12);
            let ledger: f64 = trace
                .ledger
                .iter()
                .filter(|e| e.cycle == c.cycle)
                .map(|e| e.class_total())
                .sum();
            assert!(rel(ledger, c.available) < 1e-9);
        }
    }

    #[test]
    fn stem_length_profile_grows() {
        let p = ModelParameters::generic(3);
        let trace = simulate(&p, &rules(3, &[4, 2], 18)).unwrap();
        let mut cumulated = 0.0;
        for m in &trace.stem().metamers {
            assert!(m.length > 0.0);
            cumulated += m.length;
        }
        assert!(cumulated > trace.stem().metamers[0].length);
        assert_eq!(trace.cycles.len(), 18);
        assert!(trace.cycles.iter().all(|c| c.production > 0.0));
    }

    #[test]
    fn dead_needles_stay_recorded() {
        let p = ModelParameters::generic(1);
        let trace = simulate(&p, &rules(1, &[], 5)).unwrap();
        let stem = trace.stem();
        let flags: Vec<bool> = stem.metamers.iter().map(|m| m.needle_active).collect();
        assert_eq!(flags, [false, false, false, true, true]);
        assert!(stem.metamers.iter().all(|m| m.needle_mass > 0.0));
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = ModelParameters::generic(3);
        let r = rules(3, &[2, 2], 9);
        let a = serde_json::to_string(&simulate(&p, &r).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate(&p, &r).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_leaves_biomass_unchanged() {
        let r = rules(2, &[3], 8);
        let mut raw = ModelParameters::generic(2);
        raw.sink_needle = vec![2.5, 1.0];
        raw.sink_internode = vec![2.0, 0.7];
        raw.ring_sink_const = 1.1;
        raw.ring_sink_slope = 0.9;
        raw.ring_density = vec![0.4, 0.3];
        let mut normalized = raw.clone();
        normalized.normalize();
        let a = simulate(&raw, &r).unwrap();
        let b = simulate(&normalized, &r).unwrap();
        for (ca, cb) in a.classes.iter().zip(&b.classes) {
            for (ma, mb) in ca.metamers.iter().zip(&cb.metamers) {
                assert!(rel(ma.wood_mass(), mb.wood_mass()) < 1e-12);
                assert!(rel(ma.needle_mass, mb.needle_mass) < 1e-12);
            }
        }
    }
}

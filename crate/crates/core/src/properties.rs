//! Property tests of the factorization against the explicit tree, and of the
//! file round trips.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, EnvironmentSeries, FoliageMeasure};
use crate::engine::explicit::simulate_explicit;
use crate::patterns::{parse_targets, write_targets, PatternRegistry};
use crate::structure::{build_counts, count_from_explicit, expand_explicit, leaves_above, needle_active};
use crate::synthetic::generate_targets;
use crate::{simulate, ModelParameters, OrganogenesisRules};

fn rules_strategy(max_pa: usize, max_horizon: usize) -> impl Strategy<Value = OrganogenesisRules> {
    (1..=max_pa, 1..=max_horizon).prop_flat_map(|(pa_max, horizon)| {
        prop::collection::vec(0u32..=3, pa_max - 1).prop_map(move |branches_per_cycle| OrganogenesisRules {
            pa_max,
            branches_per_cycle,
            horizon,
        })
    })
}

fn params_from_seed(seed: u64, rules: &OrganogenesisRules) -> ModelParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rules.pa_max;
    let mut per_pa = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let (sink_needle, sink_internode, ring_density) = (per_pa(0.2, 1.5), per_pa(0.1, 1.5), per_pa(0.5, 1.2));
    let (allometry_b, allometry_beta) = (per_pa(2.0, 8.0), per_pa(0.3, 0.7));
    ModelParameters {
        r: rng.gen_range(1.0..8.0),
        k_beer: rng.gen_range(0.4..1.0),
        s_p: rng.gen_range(1.0..80.0),
        env: if rng.gen_bool(0.5) {
            EnvironmentSeries::Constant(rng.gen_range(0.5..1.5))
        } else {
            EnvironmentSeries::Series((0..rules.horizon).map(|_| rng.gen_range(0.5..1.5)).collect())
        },
        sink_needle,
        sink_internode,
        ring_sink_const: rng.gen_range(0.0..1.0),
        ring_sink_slope: rng.gen_range(0.001..1.0),
        lambda_pressler: rng.gen_range(0.0..1.0),
        ring_density,
        allometry_b,
        allometry_beta,
        slw: rng.gen_range(0.02..1.0),
        needle_lifespan: rng.gen_range(1..=4),
        wood_density: rng.gen_range(0.3..0.8),
        seed_biomass: rng.gen_range(0.1..5.0),
        foliage_includes_own: rng.gen_bool(0.5),
        foliage_measure: if rng.gen_bool(0.5) {
            FoliageMeasure::Count
        } else {
            FoliageMeasure::Mass
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factorized_counts_match_the_explicit_tree(rules in rules_strategy(4, 7)) {
        let tree = expand_explicit(&rules, u64::MAX).unwrap();
        let counts = build_counts(&rules);
        prop_assert_eq!(count_from_explicit(&tree), counts.clone());
        prop_assert_eq!(tree.nodes.len() as u64, counts.total_internodes());
    }

    #[test]
    fn leaves_above_match_a_tree_walk(
        rules in rules_strategy(3, 7),
        lifespan in 1u32..=4,
        include_own in any::<bool>(),
        cycle_pick in 0usize..100,
    ) {
        let cycle = 1 + cycle_pick % rules.horizon;
        let tree = expand_explicit(&rules, u64::MAX).unwrap();
        let walked = tree.foliage_above(cycle, include_own, |id| {
            if needle_active(tree.nodes[id].birth_cycle, cycle, lifespan) { 1.0 } else { 0.0 }
        });
        let factorized = leaves_above(&build_counts(&rules), cycle, lifespan, include_own);
        for (id, node) in tree.nodes.iter().enumerate().filter(|(_, n)| n.birth_cycle <= cycle) {
            let key = tree.axes[node.axis].class();
            prop_assert_eq!(walked[id], factorized.at(key, node.rank), "node {} {:?}", id, key);
        }
    }

    #[test]
    fn factorized_simulation_matches_the_explicit_one(rules in rules_strategy(3, 6), seed in any::<u64>()) {
        let params = params_from_seed(seed, &rules);
        let trace = simulate(&params, &rules).unwrap();
        let report = simulate_explicit(&params, &rules, u64::MAX).unwrap().compare(&trace);
        prop_assert!(report.passes(1e-9), "{:?}", report);
    }

    #[test]
    fn configuration_round_trips_through_json(rules in rules_strategy(4, 20), seed in any::<u64>()) {
        let mut parameters = params_from_seed(seed, &rules);
        parameters.normalize();
        let config = Config { parameters, rules };
        prop_assert_eq!(Config::from_json(&config.to_json()).unwrap(), config);
    }

    #[test]
    fn targets_round_trip_through_csv(rules in rules_strategy(3, 8), seed in any::<u64>(), pattern in 1u8..=2) {
        let params = params_from_seed(seed, &rules);
        let schema = PatternRegistry::default().get(&pattern.to_string()).unwrap();
        let targets = generate_targets(&params, &rules, &*schema, 0.1, seed).unwrap();
        let mut csv = Vec::new();
        write_targets(&targets, &mut csv).unwrap();
        prop_assert_eq!(parse_targets(csv.as_slice()).unwrap(), targets);
    }
}

#[test]
fn example_configurations_load_and_grow() {
    for file in ["tree1.json", "tree2.json"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(file);
        let (params, rules) = crate::load_config(&path).unwrap();
        let trace = simulate(&params, &rules).unwrap();
        assert_eq!(trace.cycles.len(), rules.horizon);
        assert!(trace.cycles.iter().all(|c| c.production > 0.0), "{file}");
        let stem = trace.stem();
        assert!(
            stem.metamers.windows(2).all(|w| w[0].radius >= w[1].radius),
            "{file}: stem tapers upward"
        );
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the criteria execute
//! one after another and timings are not disturbed by parallel tests.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fstm_core::bench::{horizon_sweep, BenchSettings};
use fstm_core::calibration::{
    fit, jacobian, Difference, FitOptions, FitProblem, FitResult, FreeParameter, ParamId, Weighting,
};
use fstm_core::config::{EnvironmentSeries, FoliageMeasure};
use fstm_core::engine::explicit::simulate_explicit;
use fstm_core::engine::{partition_rings, solve_ring_demand, GrowthState, RingSite};
use fstm_core::patterns::{fit_allometry, PatternRegistry};
use fstm_core::synthetic::generate_targets;
use fstm_core::{load_config, simulate, ModelParameters, OrganogenesisRules};

type Verdict = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_rules(rng: &mut ChaCha8Rng, max_pa: usize, max_horizon: usize, max_nb: u32) -> OrganogenesisRules {
    let pa_max = rng.gen_range(1..=max_pa);
    OrganogenesisRules {
        pa_max,
        branches_per_cycle: (1..pa_max).map(|_| rng.gen_range(1..=max_nb)).collect(),
        horizon: rng.gen_range(1..=max_horizon),
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn random_params(rng: &mut ChaCha8Rng, rules: &OrganogenesisRules) -> ModelParameters {
    let n = rules.pa_max;
    let mut per_pa = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let sink_needle = per_pa(0.2, 1.5);
    let sink_internode = per_pa(0.2, 1.5);
    let ring_density = per_pa(0.5, 1.2);
    let allometry_b = per_pa(2.0, 8.0);
    let allometry_beta = per_pa(0.3, 0.7);
    let env = if rng.gen_bool(0.5) {
        EnvironmentSeries::Constant(rng.gen_range(0.5..1.5))
    } else {
        EnvironmentSeries::Series((0..rules.horizon).map(|_| rng.gen_range(0.5..1.5)).collect())
    };
    ModelParameters {
        r: rng.gen_range(1.0..8.0),
        k_beer: rng.gen_range(0.4..1.0),
        s_p: log_uniform(rng, 1.0, 100.0),
        env,
        sink_needle,
        sink_internode,
        ring_sink_const: rng.gen_range(0.0..1.0),
        ring_sink_slope: log_uniform(rng, 1e-3, 1.0),
        lambda_pressler: rng.gen_range(0.0..1.0),
        ring_density,
        allometry_b,
        allometry_beta,
        slw: log_uniform(rng, 0.02, 1.0),
        needle_lifespan: rng.gen_range(1..=4),
        wood_density: rng.gen_range(0.3..0.8),
        seed_biomass: log_uniform(rng, 0.1, 10.0),
        foliage_includes_own: rng.gen_bool(0.5),
        foliage_measure: if rng.gen_bool(0.5) {
            FoliageMeasure::Count
        } else {
            FoliageMeasure::Mass
        },
    }
}

/// Per-cycle mass balance and ring partition on 50 random configurations.
fn conservation() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut balance, mut partition) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let rules = random_rules(&mut rng, 4, 25, 3);
        let params = random_params(&mut rng, &rules);
        let trace = simulate(&params, &rules).map_err(|e| format!("{rules:?}: {e}"))?;
        for c in &trace.cycles {
            // new organs are read back from the metamers born this cycle
            let organs: f64 = trace
                .classes
                .iter()
                .map(|class| {
                    let born: f64 = class
                        .metamers
                        .iter()
                        .filter(|m| m.birth_cycle == c.cycle)
                        .map(|m| m.internode_mass + m.needle_mass)
                        .sum();
                    class.multiplicity as f64 * born
                })
                .sum();
            balance = balance.max(rel(c.available, organs + c.ring_allocation));
            let rings: f64 = trace
                .ledger
                .iter()
                .filter(|e| e.cycle == c.cycle)
                .map(|e| e.multiplicity as f64 * e.ring)
                .sum();
            partition = partition.max(rel(rings, c.ring_allocation));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        balance <= 1e-9 && partition <= 1e-9 && secs < 60.0,
        format!("50 configs, max mass-balance error {balance:.1e}, max ring-partition error {partition:.1e} (≤ 1e-9), {secs:.2} s (< 60 s)"),
    )
}

/// Every rule set with PA ≤ 3, horizon ≤ 8 and n_b ≤ 3 against the explicit
/// tree, with the generic parameters and one random set per rule set.
fn factorization_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut branchings: Vec<Vec<u32>> = vec![vec![]];
    for a in 1..=3 {
        branchings.push(vec![a]);
        branchings.extend((1..=3).map(|b| vec![a, b]));
    }
    let mut runs = 0;
    let mut worst = 0.0f64;
    let mut counts_ok = true;
    for horizon in 1..=8 {
        for nb in &branchings {
            let rules = OrganogenesisRules {
                pa_max: nb.len() + 1,
                branches_per_cycle: nb.clone(),
                horizon,
            };
            for params in [ModelParameters::generic(rules.pa_max), random_params(&mut rng, &rules)] {
                let trace = simulate(&params, &rules).map_err(|e| e.to_string())?;
                let reference = simulate_explicit(&params, &rules, u64::MAX).map_err(|e| e.to_string())?;
                let report = reference.compare(&trace);
                counts_ok &= report.counts_equal;
                worst = worst.max(report.max_relative_difference);
                runs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        counts_ok && worst <= 1e-9 && secs < 120.0,
        format!(
            "{runs} runs over {} rule sets, counts {}, max relative biomass difference {worst:.1e} (≤ 1e-9), {secs:.2} s (< 120 s)",
            8 * branchings.len(),
            if counts_ok { "identical" } else { "DIFFER" }
        ),
    )
}

/// λ = 0 and λ = 1 limits on random sites and inside a full simulation, and
/// the two-internode example at λ = 0.4.
fn lambda_limits() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let sites: Vec<RingSite> = (0..rng.gen_range(1..30))
            .map(|_| RingSite {
                weight: rng.gen_range(1..20) as f64,
                sink: rng.gen_range(0.1..3.0),
                foliage: rng.gen_range(0.01..50.0),
            })
            .collect();
        let q = rng.gen_range(0.1..10.0);
        let uniform = partition_rings(&sites, 0.0, q, 1).map_err(|e| e.to_string())?;
        let pool: f64 = sites.iter().map(|s| s.weight * s.sink).sum();
        let pressler = partition_rings(&sites, 1.0, q, 1).map_err(|e| e.to_string())?;
        let weighted: f64 = sites.iter().map(|s| s.weight * s.sink * s.foliage).sum();
        for (i, s) in sites.iter().enumerate() {
            worst = worst.max(rel(uniform.increments[i] / s.sink, q / pool));
            worst = worst.max(rel(pressler.increments[i] / (s.foliage * s.sink), q / weighted));
        }
    }

    // the same limits inside the growth loop, per cycle; increments are
    // differences of cumulative ring masses, hence the looser bound
    let (mut params, rules) = tree("tree1.json");
    let mut in_model = 0.0f64;
    for lambda in [0.0, 1.0] {
        params.lambda_pressler = lambda;
        let mut state = GrowthState::new(&params, &rules).map_err(|e| e.to_string())?;
        for _ in 0..rules.horizon {
            let before: Vec<Vec<f64>> = state
                .classes()
                .iter()
                .map(|c| c.metamers.iter().map(|m| m.ring_mass).collect())
                .collect();
            state.step(&params).map_err(|e| e.to_string())?;
            let foliage = state.foliage(&params);
            let mut ratios = Vec::new();
            for (class, old) in state.classes().iter().zip(&before) {
                let Some(above) = foliage.class(class.key) else {
                    continue;
                };
                let density = params.ring_density_at(class.key.pa);
                for (rank, m) in class.metamers.iter().enumerate() {
                    let increment = m.ring_mass - old.get(rank).copied().unwrap_or(0.0);
                    let mut per = density * m.length;
                    if lambda == 1.0 {
                        per *= above.above[rank];
                    }
                    if per > 0.0 {
                        ratios.push(increment / per);
                    }
                }
            }
            let first = ratios[0];
            in_model = in_model.max(ratios.iter().map(|&r| rel(r, first)).fold(0.0, f64::max));
        }
    }

    let site = |foliage| RingSite {
        weight: 1.0,
        sink: 1.0,
        foliage,
    };
    let example = partition_rings(&[site(2.0), site(0.0)], 0.4, 1.0, 1).map_err(|e| e.to_string())?;
    let (a, b) = (example.increments[0], example.increments[1]);
    check(
        worst <= 1e-12 && in_model <= 1e-9 && a == 0.7 && b == 0.3 && a + b == 1.0,
        format!("limit deviation {worst:.1e} on 200 random site sets (≤ 1e-12), {in_model:.1e} in the growth loop (≤ 1e-9); λ = 0.4 example A = {a}, B = {b}"),
    )
}

/// Back-substitution of the ring demand on 10³ random inputs and the √2 case.
fn ring_demand() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = log_uniform(&mut rng, 1e-3, 1e4);
        let q = log_uniform(&mut rng, 1e-3, 1e4);
        let p0 = if rng.gen_bool(0.1) {
            0.0
        } else {
            log_uniform(&mut rng, 1e-3, 1e2)
        };
        let p1 = log_uniform(&mut rng, 1e-4, 1e2);
        let x = solve_ring_demand(d, q, p0, p1);
        worst = worst.max(rel(x.ring, p0 + p1 * q / (d + x.ring)));
        if x.ring < 0.0 {
            worst = f64::INFINITY;
        }
    }
    let root2 = solve_ring_demand(1.0, 1.0, 1.0, 1.0).ring;
    let sqrt2 = rel(root2, std::f64::consts::SQRT_2);
    check(
        worst <= 1e-12 && sqrt2 <= 1e-12,
        format!(
            "max back-substitution error {worst:.1e} on 10³ inputs, √2 case {root2:.15} (error {sqrt2:.1e}, ≤ 1e-12)"
        ),
    )
}

fn tree(file: &str) -> (ModelParameters, OrganogenesisRules) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
    let (mut params, rules) = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    params.normalize();
    (params, rules)
}

const FREE: [ParamId; 5] = [
    ParamId::R,
    ParamId::RingSinkSlope,
    ParamId::Lambda,
    ParamId::RingDensity(2),
    ParamId::Sp,
];
const STARTS: usize = 5;

/// Fit problems for one tree and pattern: the truth followed by `STARTS`
/// starts drawn log-uniformly within ×[0.5, 2] of it.
fn problems(file: &str, pattern: u8, seed: u64) -> Vec<FitProblem> {
    let (params, rules) = tree(file);
    let schema = PatternRegistry::default().get(&pattern.to_string()).unwrap();
    let targets = generate_targets(&params, &rules, &*schema, 0.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..=STARTS)
        .map(|s| {
            let free = FREE
                .iter()
                .map(|&id| {
                    let truth = id.get(&params);
                    let mut p = FreeParameter::new(id, truth);
                    if s > 0 {
                        p.initial = truth * log_uniform(&mut rng, 0.5, 2.0);
                        if p.initial >= p.upper {
                            p.initial = 0.5 * (truth + p.upper);
                        }
                    }
                    p
                })
                .collect();
            FitProblem::new(
                free,
                params.clone(),
                rules.clone(),
                targets.clone(),
                Weighting::Relative,
            )
            .unwrap()
        })
        .collect()
}

struct Recovery {
    tree: &'static str,
    pattern: u8,
    results: Vec<FitResult>,
}

const SETUPS: [(&str, &str, u8); 4] = [
    ("Tree 1", "tree1.json", 1),
    ("Tree 1", "tree1.json", 2),
    ("Tree 2", "tree2.json", 1),
    ("Tree 2", "tree2.json", 2),
];

fn run_recoveries() -> Vec<Recovery> {
    SETUPS
        .iter()
        .enumerate()
        .map(|(i, &(tree, file, pattern))| {
            // both patterns of a tree share their starting points
            let seed = 50 + (i / 2) as u64;
            let results = problems(file, pattern, seed)[1..]
                .iter()
                .map(|problem| fit(problem, &FitOptions::default()).expect("fit runs"))
                .collect();
            Recovery { tree, pattern, results }
        })
        .collect()
}

fn recovery(runs: &[Recovery]) -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for run in runs {
        let (params, _) = tree(if run.tree == "Tree 1" {
            "tree1.json"
        } else {
            "tree2.json"
        });
        let mut worst = 0.0f64;
        let mut slowest = 0.0f64;
        let mut converged = true;
        for result in &run.results {
            for (id, estimate) in FREE.iter().zip(&result.estimates) {
                worst = worst.max(rel(*estimate, id.get(&params)));
            }
            slowest = slowest.max(result.wall_time_s);
            converged &= result.converged;
        }
        ok &= worst <= 0.01 && slowest < 300.0 && converged;
        lines.push(format!(
            "{} pattern {}: worst parameter error {:.1e}, slowest fit {:.2} s{}",
            run.tree,
            run.pattern,
            worst,
            slowest,
            if converged { "" } else { ", NOT converged" }
        ));
    }
    check(
        ok,
        format!(
            "{STARTS} perturbed starts each, tolerance 1%, < 300 s per fit; {}",
            lines.join("; ")
        ),
    )
}

fn pattern_speed(runs: &[Recovery]) -> Verdict {
    let total = |pattern: u8| -> (f64, usize) {
        let run = runs
            .iter()
            .find(|r| r.tree == "Tree 2" && r.pattern == pattern)
            .unwrap();
        (
            run.results.iter().map(|r| r.wall_time_s).sum(),
            run.results.iter().map(|r| r.evaluations).sum(),
        )
    };
    let ((t1, e1), (t2, e2)) = (total(1), total(2));
    let ratio = t1 / t2;
    check(
        ratio >= 2.0,
        format!(
            "Tree 2 over {STARTS} starts: pattern 1 {t1:.3} s / {e1} simulations, pattern 2 {t2:.3} s / {e2} simulations; ratio {ratio:.2} (≥ 2 required)"
        ),
    )
}

fn speedup() -> Verdict {
    let start = Instant::now();
    let settings = BenchSettings {
        node_cap: u64::MAX,
        ..BenchSettings::default()
    };
    let points = horizon_sweep(4, 2, &[5, 10, 15, 20], &settings).map_err(|e| e.to_string())?;
    let speedups: Vec<f64> = points.iter().map(|p| p.speedup.unwrap_or(0.0)).collect();
    let monotone = speedups.windows(2).all(|w| w[1] > w[0]);
    let at_20 = speedups[3];
    let secs = start.elapsed().as_secs_f64();
    let listed: Vec<String> = points
        .iter()
        .zip(&speedups)
        .map(|(p, s)| format!("h{} {s:.1}×", p.horizon))
        .collect();
    check(
        at_20 >= 10.0 && monotone && secs < 300.0,
        format!(
            "PA 4, n_b 2: {} ({} metamers at horizon 20), ≥ 10× at horizon 20 and monotone: {}, {secs:.1} s (< 300 s)",
            listed.join(", "),
            points[3].explicit_nodes,
            if monotone { "yes" } else { "NO" }
        ),
    )
}

fn allometry() -> Verdict {
    let exact: Vec<(f64, f64)> = (1..=25)
        .map(|i| {
            let q = 0.05 * 1.3f64.powi(i);
            (q, 6.0 * q.powf(0.45))
        })
        .collect();
    let fit_exact = fit_allometry(&exact).map_err(|e| e.to_string())?;
    let exact_ok = (fit_exact.b - 6.0).abs() <= 1e-10
        && (fit_exact.beta - 0.45).abs() <= 1e-10
        && (fit_exact.r_squared - 1.0).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::<f64>::new(0.0, 0.2).unwrap();
    let (mut worst_beta, mut r2_min, mut r2_max) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let records: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                let q = log_uniform(&mut rng, 0.01, 10.0);
                (q, 6.0 * q.powf(0.45) * noise.sample(&mut rng).exp())
            })
            .collect();
        let f = fit_allometry(&records).map_err(|e| e.to_string())?;
        worst_beta = worst_beta.max((f.beta - 0.45).abs());
        r2_min = r2_min.min(f.r_squared);
        r2_max = r2_max.max(f.r_squared);
    }
    check(
        exact_ok && worst_beta <= 0.1 && r2_min > 0.6 && r2_max < 1.0,
        format!(
            "exact: b {:.12}, β {:.12}, R² {:.12}; 20% noise over 20 data sets: max |β − 0.45| {worst_beta:.3} (≤ 0.1), R² in [{r2_min:.3}, {r2_max:.3}] ⊂ (0.6, 1)",
            fit_exact.b, fit_exact.beta, fit_exact.r_squared
        ),
    )
}

/// Forward against central differences at every starting point of the
/// recovery problems, compared column by column:
/// ‖J_fwd − J_central‖ ≤ 1e-3·‖J_central‖ for each parameter.
fn jacobian_sanity() -> Verdict {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, &(_, file, pattern)) in SETUPS.iter().enumerate() {
        for problem in problems(file, pattern, 50 + (i / 2) as u64) {
            let theta = problem.initial();
            let forward = jacobian(&problem, &theta, Difference::Forward).map_err(|e| e.to_string())?;
            let central = jacobian(&problem, &theta, Difference::Central).map_err(|e| e.to_string())?;
            for j in 0..theta.len() {
                let scale = central.column(j).norm();
                let diff = (forward.column(j) - central.column(j)).norm();
                worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
            }
            checked += 1;
        }
    }
    check(
        worst <= 1e-3,
        format!("{checked} starting points, max column-relative difference {worst:.1e} (≤ 1e-3)"),
    )
}

fn run(number: u32, name: &str, criterion: impl FnOnce() -> Verdict) -> bool {
    let verdict = panic::catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|e| {
        Err(format!(
            "panicked: {}",
            e.downcast_ref::<String>().cloned().unwrap_or_default()
        ))
    });
    match verdict {
        Ok(detail) => {
            println!("criterion {number} [{name}]: PASS - {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {number} [{name}]: FAIL - {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    // --list and filters are passed by `cargo test`; the suite always runs whole
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut passed = vec![
        run(1, "conservation", conservation),
        run(2, "factorization oracle", factorization_oracle),
        run(3, "lambda limits", lambda_limits),
        run(4, "ring demand", ring_demand),
    ];
    let runs = run_recoveries();
    passed.extend([
        run(5, "parameter recovery", || recovery(&runs)),
        run(6, "pattern comparison", || pattern_speed(&runs)),
        run(7, "factorization speedup", speedup),
        run(8, "allometry fit", allometry),
        run(9, "jacobian sanity", jacobian_sanity),
    ]);
    let failed = passed.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

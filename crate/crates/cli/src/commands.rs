use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::Value;

use fstm_core::bench::{horizon_sweep, write_benchmark_csv, BenchSettings};
use fstm_core::calibration::{
    compare_patterns, fit as run_fit, multi_start, write_iteration_log, FitOptions, FitProblem, FreeParameter, ParamId,
    Weighting,
};
use fstm_core::engine::explicit::{simulate_explicit, OracleReport};
use fstm_core::patterns::{
    fit_allometry, parse_target_file, read_allometry_csv, write_targets, ObservationPattern, PatternRegistry,
    TargetDataset,
};
use fstm_core::simulator::SimulatorRegistry;
use fstm_core::structure::{build_counts, node_cap_from_env};
use fstm_core::synthetic::generate_targets;
use fstm_core::{load_config, CalibrationError, ModelParameters, OrganogenesisRules, SimulationTrace};

use crate::output::{write_atomic, write_json};
use crate::ProblemArgs;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome = Result<(), Failure>;

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn calibration_failure(error: CalibrationError) -> Failure {
    match error {
        CalibrationError::Problem(_) | CalibrationError::Alignment { .. } => invalid(error),
        _ => runtime(error),
    }
}

fn config(path: &Path) -> Result<(ModelParameters, OrganogenesisRules), Failure> {
    load_config(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(invalid)
}

fn pattern(name: &str, per_whorl: bool) -> Result<std::sync::Arc<dyn ObservationPattern>, Failure> {
    let registry = PatternRegistry::default();
    let resolved = registry.get(name).map_err(invalid)?;
    if per_whorl {
        if resolved.id() != 2 {
            return Err(invalid(anyhow!("--per-whorl only applies to pattern 2")));
        }
        return registry.get("compartment-whorl").map_err(invalid);
    }
    Ok(resolved)
}

#[derive(Serialize)]
struct SimulationSummary {
    backend: String,
    pa_max: usize,
    horizon: usize,
    axis_classes: usize,
    explicit_metamers: u64,
    stem_length_cm: f64,
    stem_base_radius_cm: f64,
    total_wood_g: f64,
    total_needles_g: f64,
    final_production_g: f64,
    oracle: Option<OracleReport>,
}

pub fn simulate(config_path: &Path, out: &Path, backend: &str, explicit_oracle: bool) -> Outcome {
    let (params, rules) = config(config_path)?;
    let simulator = SimulatorRegistry::default().get(backend).ok_or_else(|| {
        invalid(anyhow!(
            "unknown backend `{backend}` (available: {})",
            SimulatorRegistry::default().names().join(", ")
        ))
    })?;
    let trace = simulator.simulate(&params, &rules).map_err(runtime)?;
    let oracle = if explicit_oracle {
        let reference = simulate_explicit(&params, &rules, node_cap_from_env()).map_err(runtime)?;
        Some(reference.compare(&trace))
    } else {
        None
    };

    let (wood, needles) = trace.total_biomass();
    let stem = trace.stem();
    let summary = SimulationSummary {
        backend: simulator.name().to_string(),
        pa_max: rules.pa_max,
        horizon: rules.horizon,
        axis_classes: trace.classes.len(),
        explicit_metamers: build_counts(&rules).total_internodes(),
        stem_length_cm: stem.metamers.iter().map(|m| m.length).sum(),
        stem_base_radius_cm: stem.metamers.first().map_or(0.0, |m| m.radius),
        total_wood_g: wood,
        total_needles_g: needles,
        final_production_g: trace.cycles.last().map_or(0.0, |c| c.production),
        oracle,
    };

    write_atomic(&out.join("cycles.csv"), |w| Ok(trace.write_cycles_csv(w)?)).map_err(runtime)?;
    write_atomic(&out.join("classes.csv"), |w| Ok(trace.write_classes_csv(w)?)).map_err(runtime)?;
    write_json(&out.join("trace.json"), &trace).map_err(runtime)?;
    write_json(&out.join("summary.json"), &summary).map_err(runtime)?;
    println!(
        "{} cycles, {} axis classes ({} metamers); wood {:.4} g, needles {:.4} g -> {}",
        rules.horizon,
        summary.axis_classes,
        summary.explicit_metamers,
        wood,
        needles,
        out.display()
    );
    if let Some(report) = &summary.oracle {
        println!(
            "explicit oracle: counts {}, {} nodes, max relative difference {:.3e}",
            if report.counts_equal { "equal" } else { "DIFFER" },
            report.nodes_checked,
            report.max_relative_difference
        );
    }
    Ok(())
}

pub fn extract(trace_path: &Path, pattern_name: &str, per_whorl: bool, out: &Path) -> Outcome {
    let file: PathBuf = if trace_path.is_dir() {
        trace_path.join("trace.json")
    } else {
        trace_path.to_path_buf()
    };
    let pattern = pattern(pattern_name, per_whorl)?;
    let text = fs::read_to_string(&file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(invalid)?;
    let trace: SimulationTrace = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a trace written by `simulate`", file.display()))
        .map_err(invalid)?;
    let targets = pattern.extract(&trace).to_targets();
    write_atomic(out, |w| Ok(write_targets(&targets, w)?)).map_err(runtime)?;
    println!("{} pattern-{} rows -> {}", targets.len(), pattern.id(), out.display());
    Ok(())
}

fn targets(path: &Path) -> Result<TargetDataset, Failure> {
    parse_target_file(path)
        .with_context(|| format!("reading targets {}", path.display()))
        .map_err(invalid)
}

/// Rows of `targets` that `expected` does not accept, as line diagnostics.
fn schema_mismatch(targets: &TargetDataset, expected: u8) -> Option<anyhow::Error> {
    if targets.pattern == Some(expected) {
        return None;
    }
    let registry = PatternRegistry::default();
    let schema = registry.get(&expected.to_string()).ok()?;
    let mut lines: Vec<String> = targets
        .rows
        .iter()
        .enumerate()
        .filter(|(_, row)| !schema.accepts(row.key.kind))
        .map(|(i, row)| {
            format!(
                "  line {}: kind `{}` is not part of pattern {expected}",
                i + 2,
                row.key.kind
            )
        })
        .collect();
    let total = lines.len();
    if total > 10 {
        lines.truncate(10);
        lines.push(format!("  ... and {} more", total - 10));
    }
    let found = targets.pattern.map_or("empty".to_string(), |p| format!("pattern {p}"));
    Some(anyhow!(
        "targets are {found} but pattern {expected} was requested\n{}",
        lines.join("\n")
    ))
}

fn default_free(rules: &OrganogenesisRules) -> Vec<ParamId> {
    let mut ids = vec![ParamId::R, ParamId::RingSinkSlope, ParamId::Lambda];
    if rules.pa_max >= 2 {
        ids.push(ParamId::RingDensity(2));
    }
    ids.push(ParamId::Sp);
    ids
}

/// (initial, lower, upper), each optional.
type Overrides = (Option<f64>, Option<f64>, Option<f64>);

/// `--init` as per-parameter overrides.
fn initial_values(init: Option<&str>) -> Result<BTreeMap<ParamId, Overrides>, Failure> {
    let Some(init) = init else {
        return Ok(BTreeMap::new());
    };
    let text = if init.trim_start().starts_with('{') {
        init.to_string()
    } else {
        fs::read_to_string(init)
            .with_context(|| format!("reading --init {init}"))
            .map_err(invalid)?
    };
    let value: Value = serde_json::from_str(&text)
        .context("--init is not valid JSON")
        .map_err(invalid)?;
    let object = value
        .as_object()
        .ok_or_else(|| invalid(anyhow!("--init must be a JSON object")))?;
    let mut out = BTreeMap::new();
    for (name, entry) in object {
        let id: ParamId = name.parse().map_err(|e: String| invalid(anyhow!("--init: {e}")))?;
        let number = |v: Option<&Value>, what: &str| -> Result<Option<f64>, Failure> {
            match v {
                None => Ok(None),
                Some(v) => v
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| invalid(anyhow!("--init: {name}.{what} must be a number"))),
            }
        };
        let parsed = match entry {
            Value::Number(n) => (n.as_f64(), None, None),
            Value::Object(fields) => {
                if let Some(unknown) = fields
                    .keys()
                    .find(|k| !["initial", "lower", "upper"].contains(&k.as_str()))
                {
                    return Err(invalid(anyhow!("--init: {name}: unknown field `{unknown}`")));
                }
                (
                    number(fields.get("initial"), "initial")?,
                    number(fields.get("lower"), "lower")?,
                    number(fields.get("upper"), "upper")?,
                )
            }
            _ => return Err(invalid(anyhow!("--init: {name} must be a number or an object"))),
        };
        out.insert(id, parsed);
    }
    Ok(out)
}

fn options(args: &ProblemArgs) -> Result<FitOptions, Failure> {
    if !(args.tol > 0.0 && args.tol < 1.0) {
        return Err(invalid(anyhow!("--tol must lie in (0, 1)")));
    }
    Ok(FitOptions {
        max_iterations: args.max_iter,
        tolerance: args.tol,
        ..FitOptions::default()
    })
}

fn problem(args: &ProblemArgs, targets: TargetDataset) -> Result<FitProblem, Failure> {
    let (mut params, rules) = config(&args.config)?;
    params.normalize();
    let weighting: Weighting = args.weighting.parse().map_err(|e: String| invalid(anyhow!(e)))?;
    let ids: Vec<ParamId> = if args.free.is_empty() {
        default_free(&rules)
    } else {
        args.free
            .iter()
            .map(|s| s.parse().map_err(|e: String| invalid(anyhow!("--free: {e}"))))
            .collect::<Result<_, _>>()?
    };
    let mut init = initial_values(args.init.as_deref())?;
    let mut free = Vec::with_capacity(ids.len());
    for id in ids {
        if id.pa().is_some_and(|k| k > rules.pa_max) {
            return Err(invalid(anyhow!(
                "--free: {id} refers to a PA beyond pa_max = {}",
                rules.pa_max
            )));
        }
        let mut p = FreeParameter::new(id, id.get(&params));
        if let Some((initial, lower, upper)) = init.remove(&id) {
            p.initial = initial.unwrap_or(p.initial);
            p.lower = lower.unwrap_or(p.lower);
            p.upper = upper.unwrap_or(p.upper);
        }
        free.push(p);
    }
    if let Some(id) = init.keys().next() {
        return Err(invalid(anyhow!("--init gives a value for {id}, which is not free")));
    }
    FitProblem::new(free, params, rules, targets, weighting).map_err(calibration_failure)
}

pub fn fit(
    args: &ProblemArgs,
    targets_path: &Path,
    expected: u8,
    out: &Path,
    iter_log: Option<&Path>,
    starts: usize,
    seed: u64,
) -> Outcome {
    if !(expected == 1 || expected == 2) {
        return Err(invalid(anyhow!("--pattern must be 1 or 2")));
    }
    let targets = targets(targets_path)?;
    if let Some(mismatch) = schema_mismatch(&targets, expected) {
        return Err(invalid(mismatch));
    }
    let problem = problem(args, targets)?;
    let options = options(args)?;
    let result = if starts > 1 {
        multi_start(&problem, &options, starts, seed)
    } else {
        run_fit(&problem, &options)
    }
    .map_err(calibration_failure)?;

    write_json(out, &result).map_err(runtime)?;
    if let Some(path) = iter_log {
        write_atomic(path, |w| Ok(write_iteration_log(&result, w)?)).map_err(runtime)?;
    }
    for ((name, value), cv) in result.names.iter().zip(&result.estimates).zip(&result.cv_percent) {
        println!("{name:>18} = {value:<14.6e} CV {cv:.3}%");
    }
    println!(
        "error {:.6e} (initial {:.6e}), {} iterations, {:.3} s",
        result.error, result.initial_error, result.iterations, result.wall_time_s
    );
    if !result.converged {
        return Err(Failure {
            code: 3,
            error: anyhow!(
                "no convergence within {} iterations; best estimates written to {}",
                options.max_iterations,
                out.display()
            ),
        });
    }
    Ok(())
}

pub fn compare(args: &ProblemArgs, targets1: &Path, targets2: &Path, out: Option<&Path>) -> Outcome {
    let (t1, t2) = (targets(targets1)?, targets(targets2)?);
    for (t, expected) in [(&t1, 1), (&t2, 2)] {
        if let Some(mismatch) = schema_mismatch(t, expected) {
            return Err(invalid(mismatch));
        }
    }
    let p1 = problem(args, t1)?;
    let p2 = problem(args, t2)?;
    let options = options(args)?;
    let report = compare_patterns(&p1, &p2, &options).map_err(calibration_failure)?;

    match out {
        Some(path) => write_json(path, &report).map_err(runtime)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?),
    }
    for outcome in [&report.pattern1, &report.pattern2] {
        match (&outcome.result, &outcome.failure) {
            (Some(r), _) => eprintln!(
                "pattern {}: error {:.6e}, {} iterations, {:.3} s{}",
                outcome.pattern,
                r.error,
                r.iterations,
                r.wall_time_s,
                if r.converged { "" } else { " (not converged)" }
            ),
            (None, Some(e)) => eprintln!("pattern {}: failed: {e}", outcome.pattern),
            (None, None) => {}
        }
    }
    if let Some(ratio) = report.time_ratio {
        eprintln!("time ratio pattern 1 / pattern 2: {ratio:.2}");
    }
    let outcomes = [&report.pattern1, &report.pattern2];
    if let Some(failed) = outcomes.iter().find(|o| o.failure.is_some()) {
        return Err(runtime(anyhow!(
            "pattern {} fit failed: {}",
            failed.pattern,
            failed.failure.as_deref().unwrap_or_default()
        )));
    }
    if outcomes.iter().any(|o| o.result.as_ref().is_some_and(|r| !r.converged)) {
        return Err(Failure {
            code: 3,
            error: anyhow!("at least one fit did not converge"),
        });
    }
    Ok(())
}

pub fn allometry(input: &Path, out: Option<&Path>) -> Outcome {
    let records = read_allometry_csv(input)
        .with_context(|| format!("reading {}", input.display()))
        .map_err(invalid)?;
    let fit = fit_allometry(&records).map_err(invalid)?;
    match out {
        Some(path) => write_json(path, &fit).map_err(runtime)?,
        None => println!("{}", serde_json::to_string_pretty(&fit).map_err(runtime)?),
    }
    Ok(())
}

pub fn benchmark(pa_max: usize, branching: u32, horizons: &[usize], batches: usize, out: Option<&Path>) -> Outcome {
    if pa_max == 0 || horizons.is_empty() || horizons.contains(&0) {
        return Err(invalid(anyhow!("pa_max and every horizon must be >= 1")));
    }
    let settings = BenchSettings {
        batches,
        ..BenchSettings::default()
    };
    let points = horizon_sweep(pa_max, branching, horizons, &settings).map_err(runtime)?;
    match out {
        Some(path) => {
            write_atomic(path, |w| Ok(write_benchmark_csv(&points, w)?)).map_err(runtime)?;
            for p in &points {
                match p.speedup {
                    Some(s) => eprintln!(
                        "horizon {:>3}: {:>10} metamers, speedup {s:.1}x",
                        p.horizon, p.explicit_nodes
                    ),
                    None => eprintln!(
                        "horizon {:>3}: {:>10} metamers, explicit-infeasible",
                        p.horizon, p.explicit_nodes
                    ),
                }
            }
        }
        None => write_benchmark_csv(&points, std::io::stdout()).map_err(runtime)?,
    }
    Ok(())
}

pub fn gen_synthetic(config_path: &Path, pattern_name: &str, noise: f64, seed: u64, out: &Path) -> Outcome {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(invalid(anyhow!("--noise must be a finite value >= 0")));
    }
    let (params, rules) = config(config_path)?;
    let pattern = pattern(pattern_name, false)?;
    let targets = generate_targets(&params, &rules, &*pattern, noise, seed).map_err(runtime)?;
    write_atomic(out, |w| Ok(write_targets(&targets, w)?)).map_err(runtime)?;
    println!(
        "{} pattern-{} rows (σ = {noise}) -> {}",
        targets.len(),
        pattern.id(),
        out.display()
    );
    Ok(())
}

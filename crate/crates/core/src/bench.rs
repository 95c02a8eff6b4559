//! Wall-time comparison of the factorized and explicit simulators.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::{ModelParameters, OrganogenesisRules};
use crate::engine::{explicit::simulate_explicit, simulate};
use crate::error::{EngineError, StructureError};
use crate::structure::build_counts;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub pa_max: usize,
    pub branching: u32,
    pub horizon: usize,
    /// Metamers of the explicit tree.
    pub explicit_nodes: u64,
    /// Distinct (class, rank) records kept by the factorized simulator.
    pub factorized_nodes: u64,
    pub node_ratio: f64,
    pub factorized_s: f64,
    /// `None` when the explicit tree exceeds the node cap.
    pub explicit_s: Option<f64>,
    pub speedup: Option<f64>,
}

impl BenchPoint {
    pub fn status(&self) -> &'static str {
        if self.explicit_s.is_some() {
            "ok"
        } else {
            "explicit-infeasible"
        }
    }
}

/// Seconds per call of `f`: the fastest of `batches` batches, each long
/// enough to last at least `min_batch`.
pub fn time_per_call<F: FnMut()>(mut f: F, batches: usize, min_batch: Duration) -> f64 {
    let start = Instant::now();
    f();
    let first = start.elapsed();
    let reps = if first.is_zero() {
        1000
    } else {
        (min_batch.as_secs_f64() / first.as_secs_f64()).ceil().clamp(1.0, 1e6) as usize
    };
    let mut best = f64::INFINITY;
    for _ in 0..batches.max(1) {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        best = best.min(start.elapsed().as_secs_f64() / reps as f64);
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct BenchSettings {
    pub node_cap: u64,
    pub batches: usize,
    pub min_batch: Duration,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            node_cap: crate::structure::node_cap_from_env(),
            batches: 5,
            min_batch: Duration::from_millis(20),
        }
    }
}

/// Times both simulators on `rules` with [`ModelParameters::generic`].
pub fn bench_point(rules: &OrganogenesisRules, settings: &BenchSettings) -> Result<BenchPoint, EngineError> {
    let params = ModelParameters::generic(rules.pa_max);
    let counts = build_counts(rules);
    let explicit_nodes = counts.total_internodes();
    let factorized_nodes = counts.class_metamers();
    simulate(&params, rules)?;
    let factorized_s = time_per_call(
        || {
            std::hint::black_box(simulate(&params, rules).expect("validated"));
        },
        settings.batches,
        settings.min_batch,
    );
    let explicit_s = match simulate_explicit(&params, rules, settings.node_cap) {
        Ok(_) => Some(time_per_call(
            || {
                std::hint::black_box(simulate_explicit(&params, rules, settings.node_cap).expect("fits the cap"));
            },
            settings.batches,
            settings.min_batch,
        )),
        Err(EngineError::Structure(StructureError::CapExceeded { .. })) => None,
        Err(e) => return Err(e),
    };
    Ok(BenchPoint {
        pa_max: rules.pa_max,
        branching: rules.branches_per_cycle.first().copied().unwrap_or(0),
        horizon: rules.horizon,
        explicit_nodes,
        factorized_nodes,
        node_ratio: explicit_nodes as f64 / factorized_nodes.max(1) as f64,
        factorized_s,
        explicit_s,
        speedup: explicit_s.map(|e| e / factorized_s),
    })
}

/// One point per horizon, all PAs branching `branching` times per cycle.
pub fn horizon_sweep(
    pa_max: usize,
    branching: u32,
    horizons: &[usize],
    settings: &BenchSettings,
) -> Result<Vec<BenchPoint>, EngineError> {
    horizons
        .iter()
        .map(|&horizon| {
            let rules = OrganogenesisRules {
                pa_max,
                branches_per_cycle: vec![branching; pa_max.saturating_sub(1)],
                horizon,
            };
            bench_point(&rules, settings)
        })
        .collect()
}

pub fn write_benchmark_csv<W: Write>(points: &[BenchPoint], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "pa_max",
        "branching",
        "horizon",
        "explicit_nodes",
        "factorized_nodes",
        "node_ratio",
        "factorized_s",
        "explicit_s",
        "speedup",
        "status",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for p in points {
        writer.write_record([
            p.pa_max.to_string(),
            p.branching.to_string(),
            p.horizon.to_string(),
            p.explicit_nodes.to_string(),
            p.factorized_nodes.to_string(),
            format!("{:.3}", p.node_ratio),
            format!("{:e}", p.factorized_s),
            opt(p.explicit_s),
            opt(p.speedup),
            p.status().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finite_jacobian, Difference, FitProblem};
use crate::error::CalibrationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingPolicy {
    /// μ·diag(JᵀJ): invariant to parameter scaling.
    #[default]
    Marquardt,
    /// μ·I
    Levenberg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when both the actual and the predicted relative decrease of the
    /// error fall below this.
    pub tolerance: f64,
    /// Stop when the step in internal coordinates is shorter than this
    /// (relative to the parameter vector).
    pub step_tolerance: f64,
    pub damping: DampingPolicy,
    pub initial_damping: f64,
    /// Largest change of any internal coordinate in one step; longer steps
    /// are re-solved with more damping. Internal coordinates are log or
    /// logit, so 1 limits a positive parameter to a factor e per step.
    pub max_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            tolerance: 1e-8,
            step_tolerance: 1e-10,
            damping: DampingPolicy::Marquardt,
            initial_damping: 1e-3,
            max_step: 1.0,
        }
    }
}

/// One trial step. Estimates are on the natural scale and always inside
/// their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub error: f64,
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// 100 × standard error / |estimate|; `null` in JSON when the normal
    /// matrix at the optimum cannot be inverted.
    pub cv_percent: Vec<f64>,
    /// Weighted residual sum of squares at the estimates.
    pub error: f64,
    pub initial_error: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub pattern: u8,
    pub n_observations: usize,
    #[serde(skip_serializing, default)]
    pub log: Vec<IterationRecord>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }
}

fn internal_jacobian(problem: &FitProblem, z: &[f64], r: &DVector<f64>) -> Result<DMatrix<f64>, CalibrationError> {
    finite_jacobian(
        |x| problem.residuals_internal(x),
        z,
        r,
        Difference::Forward,
        |j| 1e-7 * z[j].abs().max(1.0),
    )
}

/// Fails when JᵀJ is singular, naming the direction that leaves the
/// residuals unchanged.
fn check_identifiable(problem: &FitProblem, j: &DMatrix<f64>) -> Result<(), CalibrationError> {
    let names = problem.names();
    let direction = |v: DVector<f64>| {
        let v = v.normalize();
        names.iter().cloned().zip(v.iter().copied()).collect::<Vec<_>>()
    };
    let a = j.transpose() * j;
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let max_diag = diag.iter().fold(0.0f64, |m, &d| m.max(d));
    if let Some(i) = diag.iter().position(|&d| !(d > 1e-300 && d > 1e-24 * max_diag)) {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        return Err(CalibrationError::NonIdentifiable {
            direction: direction(v),
        });
    }
    let scale = DVector::from_iterator(n, diag.iter().map(|d| 1.0 / d.sqrt()));
    let correlation = DMatrix::from_fn(n, n, |r, c| a[(r, c)] * scale[r] * scale[c]);
    let eigen = SymmetricEigen::new(correlation);
    let (imin, &lmin) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one parameter");
    if lmin < 1e-12 {
        let v = eigen.eigenvectors.column(imin).component_mul(&scale);
        return Err(CalibrationError::NonIdentifiable {
            direction: direction(v),
        });
    }
    Ok(())
}

/// Natural-scale coefficient of variation from σ²(JᵀJ)⁻¹ with σ² the
/// residual variance.
fn coefficients_of_variation(
    problem: &FitProblem,
    z: &[f64],
    j: &DMatrix<f64>,
    error: f64,
    estimates: &[f64],
) -> Vec<f64> {
    let (m, n) = j.shape();
    let mut jx = j.clone();
    for (c, p) in problem.free.iter().enumerate() {
        let slope = p.natural_slope(z[c]);
        jx.column_mut(c).unscale_mut(slope);
    }
    let sigma2 = error / (m.saturating_sub(n).max(1)) as f64;
    match (jx.transpose() * &jx).try_inverse() {
        Some(cov) => (0..n)
            .map(|i| {
                let var = (sigma2 * cov[(i, i)]).max(0.0);
                100.0 * var.sqrt() / estimates[i].abs()
            })
            .collect(),
        None => vec![f64::INFINITY; n],
    }
}

/// Bound-constrained Levenberg–Marquardt on the weighted residuals.
pub fn fit(problem: &FitProblem, options: &FitOptions) -> Result<FitResult, CalibrationError> {
    let start = Instant::now();
    let n = problem.free.len();
    let initial = problem.initial();
    let mut z = problem.to_internal(&initial);
    let mut r = problem.residuals_internal(&z)?;
    let mut evaluations = 1;
    let mut cost = r.norm_squared();
    let initial_error = cost;
    let mut log = vec![IterationRecord {
        iteration: 0,
        error: cost,
        damping: 0.0,
        step_norm: 0.0,
        accepted: true,
        estimates: initial.clone(),
    }];

    let finish = |z: &[f64], cost: f64, j: Option<&DMatrix<f64>>, iterations, evaluations, converged, log| {
        let estimates = problem.to_natural(z);
        let cv_percent = match j {
            Some(j) => coefficients_of_variation(problem, z, j, cost, &estimates),
            None => Vec::new(),
        };
        FitResult {
            names: problem.names(),
            estimates,
            cv_percent,
            error: cost,
            initial_error,
            iterations,
            evaluations,
            wall_time_s: start.elapsed().as_secs_f64(),
            converged,
            pattern: problem.pattern().id(),
            n_observations: problem.n_residuals(),
            log,
        }
    };

    if n == 0 {
        return Ok(finish(&z, cost, None, 0, evaluations, true, log));
    }

    let mut j = internal_jacobian(problem, &z, &r)?;
    evaluations += n;
    check_identifiable(problem, &j)?;

    let mut mu = f64::NAN;
    let mut scale = DVector::zeros(n);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < options.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        let d: DVector<f64> = match options.damping {
            DampingPolicy::Marquardt => {
                // largest curvature seen so far, so that a parameter whose
                // sensitivity fades keeps its damping
                scale = scale.zip_map(&a.diagonal(), f64::max);
                let max = scale.amax();
                scale.map(|v| v.max(1e-12 * max))
            }
            DampingPolicy::Levenberg => DVector::from_element(n, 1.0),
        };
        if mu.is_nan() {
            mu = options.initial_damping * a.diagonal().component_div(&d).amax();
        }
        let z_norm = DVector::from_column_slice(&z).norm();

        // retry with more damping until the error decreases
        for _ in 0..64 {
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += mu * d[i];
            }
            let Some(chol) = m.cholesky() else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            if delta.amax() > options.max_step {
                // outside the trust region: damp harder instead of
                // shortening, which keeps the step's direction sensible
                mu *= nu;
                nu *= 2.0;
                continue;
            }
            let step_norm = delta.norm();
            if step_norm <= options.step_tolerance * (z_norm + options.step_tolerance) {
                converged = true;
                break 'outer;
            }
            let z_new: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            evaluations += 1;
            let (r_new, cost_new) = match problem.residuals_internal(&z_new) {
                Ok(r_new) => {
                    let c = r_new.norm_squared();
                    (Some(r_new), if c.is_finite() { c } else { f64::INFINITY })
                }
                Err(CalibrationError::Simulation(e)) => {
                    log::debug!("trial step rejected: {e}");
                    (None, f64::INFINITY)
                }
                Err(e) => return Err(e),
            };
            let predicted = cost - (&r + &j * &delta).norm_squared();
            let actual = cost - cost_new;
            let accepted = actual > 0.0 && predicted > 0.0;
            log.push(IterationRecord {
                iteration: iterations,
                error: if accepted { cost_new } else { cost },
                damping: mu,
                step_norm,
                accepted,
                estimates: problem.to_natural(if accepted { &z_new } else { &z }),
            });
            if !accepted {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
            let rho = actual / predicted;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            let previous = cost;
            z = z_new;
            r = r_new.expect("accepted steps have residuals");
            cost = cost_new;
            j = internal_jacobian(problem, &z, &r)?;
            evaluations += n;
            if actual <= options.tolerance * previous && predicted <= options.tolerance * previous && rho <= 2.0 {
                converged = true;
                break 'outer;
            }
            continue 'outer;
        }
        log::debug!("damping exhausted at iteration {iterations}");
        break;
    }
    if !converged {
        log::warn!("fit stopped after {iterations} iterations without converging");
    }
    Ok(finish(&z, cost, Some(&j), iterations, evaluations, converged, log))
}

/// Best of `starts` fits: the problem's own initial values, then starts
/// drawn log-uniformly within ×[0.5, 2] of them (kept inside the bounds).
pub fn multi_start(
    problem: &FitProblem,
    options: &FitOptions,
    starts: usize,
    seed: u64,
) -> Result<FitResult, CalibrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<FitResult> = None;
    let mut last_error = None;
    for s in 0..starts.max(1) {
        let mut trial = problem.clone();
        if s > 0 {
            for p in &mut trial.free {
                let factor = rng.gen_range(0.5f64.ln()..2f64.ln()).exp();
                let mut x = p.initial * factor;
                if !(x > p.lower && x < p.upper) {
                    let bound = if x >= p.upper { p.upper } else { p.lower };
                    x = 0.5 * (p.initial + bound);
                }
                p.initial = x;
            }
        }
        match fit(&trial, options) {
            Ok(result) => {
                if best.as_ref().is_none_or(|b| result.error < b.error) {
                    best = Some(result);
                }
            }
            Err(e) => {
                log::warn!("start {s} failed: {e}");
                last_error = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_error.expect("at least one start"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternOutcome {
    pub pattern: u8,
    pub result: Option<FitResult>,
    pub failure: Option<String>,
}

impl PatternOutcome {
    fn from(pattern: u8, outcome: Result<FitResult, CalibrationError>) -> Self {
        match outcome {
            Ok(result) => PatternOutcome {
                pattern,
                result: Some(result),
                failure: None,
            },
            Err(e) => PatternOutcome {
                pattern,
                result: None,
                failure: Some(e.to_string()),
            },
        }
    }
}

/// Side-by-side fits of one tree against its pattern-1 and pattern-2 data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pattern1: PatternOutcome,
    pub pattern2: PatternOutcome,
    /// Pattern-1 wall time over pattern-2 wall time.
    pub time_ratio: Option<f64>,
}

pub fn compare_patterns(
    pattern1: &FitProblem,
    pattern2: &FitProblem,
    options: &FitOptions,
) -> Result<ComparisonReport, CalibrationError> {
    if pattern1.rules != pattern2.rules || pattern1.fixed != pattern2.fixed {
        return Err(CalibrationError::Problem(
            "compared problems must share fixed parameters and rules".into(),
        ));
    }
    let one = PatternOutcome::from(pattern1.pattern().id(), fit(pattern1, options));
    let two = PatternOutcome::from(pattern2.pattern().id(), fit(pattern2, options));
    let time_ratio = match (&one.result, &two.result) {
        (Some(a), Some(b)) if b.wall_time_s > 0.0 => Some(a.wall_time_s / b.wall_time_s),
        _ => None,
    };
    Ok(ComparisonReport {
        pattern1: one,
        pattern2: two,
        time_ratio,
    })
}

/// `iteration,error,damping,step_norm,accepted,<parameter names>`
pub fn write_iteration_log<W: Write>(result: &FitResult, out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["iteration", "error", "damping", "step_norm", "accepted"];
    header.extend(result.names.iter().map(String::as_str));
    writer.write_record(&header)?;
    for rec in &result.log {
        let mut row = vec![
            rec.iteration.to_string(),
            format!("{:?}", rec.error),
            format!("{:?}", rec.damping),
            format!("{:?}", rec.step_norm),
            rec.accepted.to_string(),
        ];
        row.extend(rec.estimates.iter().map(|v| format!("{v:?}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

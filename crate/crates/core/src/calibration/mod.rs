//! Least-squares estimation of hidden model parameters from target data.
//!
//! Residuals are `√w · (simulated − observed)` with a diagonal weight per
//! target row. The optimizer is a bound-constrained Levenberg–Marquardt
//! working in unconstrained coordinates (logit for boxed parameters, log for
//! positive ones) with a forward-difference Jacobian.

mod fit;
mod params;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fit::{
    compare_patterns, fit, multi_start, write_iteration_log, ComparisonReport, DampingPolicy, FitOptions, FitResult,
    IterationRecord, PatternOutcome,
};
pub use params::{FreeParameter, ParamId};

use crate::config::{self, ModelParameters, OrganogenesisRules};
use crate::engine::simulate;
use crate::error::CalibrationError;
use crate::patterns::{ObservableKind, ObservationPattern, PatternRegistry, PatternVector, TargetDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// The file weight of each row (1 when absent).
    #[default]
    Unit,
    /// File weight divided by the squared target value, so every row counts
    /// by its relative error. Zero targets use a floor of 1e-3 × the largest
    /// target of the same kind.
    Relative,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(Weighting::Unit),
            "relative" => Ok(Weighting::Relative),
            other => Err(format!("unknown weighting `{other}` (expected unit or relative)")),
        }
    }
}

/// A calibration problem: which parameters are free, everything else fixed,
/// and the data to match.
#[derive(Clone)]
pub struct FitProblem {
    pub free: Vec<FreeParameter>,
    pub fixed: ModelParameters,
    pub rules: OrganogenesisRules,
    pub targets: TargetDataset,
    pub weighting: Weighting,
    pattern: Arc<dyn ObservationPattern>,
    /// Residual row → position in the simulated pattern vector.
    alignment: Vec<usize>,
    observed: DVector<f64>,
    sqrt_weights: DVector<f64>,
}

impl std::fmt::Debug for FitProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FitProblem")
            .field("free", &self.free)
            .field("pattern", &self.pattern.name())
            .field("rows", &self.alignment.len())
            .field("weighting", &self.weighting)
            .finish()
    }
}

fn problem(message: impl Into<String>) -> CalibrationError {
    CalibrationError::Problem(message.into())
}

impl FitProblem {
    /// Validates the problem and aligns every target row with its simulated
    /// counterpart. `fixed` is normalized first.
    pub fn new(
        free: Vec<FreeParameter>,
        mut fixed: ModelParameters,
        rules: OrganogenesisRules,
        targets: TargetDataset,
        weighting: Weighting,
    ) -> Result<Self, CalibrationError> {
        fixed.normalize();
        for (i, p) in free.iter().enumerate() {
            if free[..i].iter().any(|q| q.id == p.id) {
                return Err(problem(format!("{} is listed twice", p.id)));
            }
            if let Some(k) = p.id.pa() {
                if k > rules.pa_max {
                    return Err(problem(format!("{}: pa_max is {}", p.id, rules.pa_max)));
                }
            }
            let (lo, hi) = p.id.default_bounds();
            if !(p.lower >= lo && p.upper <= hi && p.lower < p.upper) {
                return Err(problem(format!(
                    "{}: bounds [{}, {}] must lie within [{lo}, {hi}] and be non-empty",
                    p.id, p.lower, p.upper
                )));
            }
            if !(p.initial > p.lower && p.initial < p.upper) {
                return Err(problem(format!(
                    "{}: initial value {} must lie strictly inside ({}, {})",
                    p.id, p.initial, p.lower, p.upper
                )));
            }
        }
        if targets.is_empty() {
            return Err(problem("target dataset is empty"));
        }
        let pattern = PatternRegistry::default()
            .for_targets(&targets)
            .map_err(|e| problem(e.to_string()))?;

        let mut start = fixed.clone();
        for p in &free {
            p.id.set(&mut start, p.initial);
        }
        config::validate(&start, &rules)
            .map_err(|issues| problem(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")))?;

        // The layout of a pattern vector depends only on the rules.
        let layout = pattern.extract(&simulate(&start, &rules)?);
        let position: HashMap<_, usize> = layout.rows.iter().enumerate().map(|(i, o)| (o.key, i)).collect();
        let mut unmatched = Vec::new();
        let mut rows = Vec::with_capacity(targets.len());
        for row in &targets.rows {
            match position.get(&row.key) {
                Some(&i) => rows.push((i, row)),
                None => unmatched.push(row.key.to_string()),
            }
        }
        if !unmatched.is_empty() {
            return Err(CalibrationError::Alignment { unmatched });
        }
        // canonical order makes the fit independent of the file's row order
        rows.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.value.total_cmp(&b.1.value))
                .then(a.1.weight_or_default().total_cmp(&b.1.weight_or_default()))
        });

        let mut kind_scale: HashMap<ObservableKind, f64> = HashMap::new();
        for row in &targets.rows {
            let s = kind_scale.entry(row.key.kind).or_insert(0.0);
            *s = s.max(row.value.abs());
        }
        let sqrt_weights = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|(_, row)| {
                let w = row.weight_or_default();
                match weighting {
                    Weighting::Unit => w.sqrt(),
                    Weighting::Relative => {
                        let scale = kind_scale[&row.key.kind];
                        let floor = if scale > 0.0 { 1e-3 * scale } else { 1.0 };
                        w.sqrt() / row.value.abs().max(floor)
                    }
                }
            }),
        );
        let observed = DVector::from_iterator(rows.len(), rows.iter().map(|(_, row)| row.value));
        let alignment = rows.iter().map(|(i, _)| *i).collect();

        Ok(FitProblem {
            free,
            fixed,
            rules,
            targets,
            weighting,
            pattern,
            alignment,
            observed,
            sqrt_weights,
        })
    }

    pub fn pattern(&self) -> &dyn ObservationPattern {
        &*self.pattern
    }

    pub fn names(&self) -> Vec<String> {
        self.free.iter().map(|p| p.id.to_string()).collect()
    }

    pub fn initial(&self) -> Vec<f64> {
        self.free.iter().map(|p| p.initial).collect()
    }

    pub fn n_residuals(&self) -> usize {
        self.alignment.len()
    }

    /// The fixed parameters with `theta` substituted for the free ones.
    pub fn parameters(&self, theta: &[f64]) -> ModelParameters {
        assert_eq!(theta.len(), self.free.len(), "one value per free parameter");
        let mut p = self.fixed.clone();
        for (free, &v) in self.free.iter().zip(theta) {
            free.id.set(&mut p, v);
        }
        p
    }

    pub fn simulate_pattern(&self, theta: &[f64]) -> Result<PatternVector, CalibrationError> {
        Ok(self.pattern.extract(&simulate(&self.parameters(theta), &self.rules)?))
    }

    /// Weighted residuals, one per target row in canonical order.
    pub fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>, CalibrationError> {
        if let Some(p) = self.free.iter().zip(theta).find(|(p, &v)| !p.contains(v)) {
            return Err(problem(format!("{} = {} is outside its bounds", p.0.id, p.1)));
        }
        let simulated = self.simulate_pattern(theta)?;
        Ok(DVector::from_iterator(
            self.alignment.len(),
            self.alignment
                .iter()
                .enumerate()
                .map(|(row, &i)| self.sqrt_weights[row] * (simulated.rows[i].value - self.observed[row])),
        ))
    }

    /// Weighted residual sum of squares.
    pub fn error(&self, theta: &[f64]) -> Result<f64, CalibrationError> {
        Ok(self.residuals(theta)?.norm_squared())
    }

    pub(crate) fn to_internal(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().zip(theta).map(|(p, &x)| p.to_internal(x)).collect()
    }

    pub(crate) fn to_natural(&self, z: &[f64]) -> Vec<f64> {
        self.free.iter().zip(z).map(|(p, &v)| p.to_natural(v)).collect()
    }

    pub(crate) fn residuals_internal(&self, z: &[f64]) -> Result<DVector<f64>, CalibrationError> {
        self.residuals(&self.to_natural(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difference {
    Forward,
    Central,
}

/// Finite-difference Jacobian of a vector function at `x`, columns evaluated
/// concurrently and assembled in parameter order. `step(j)` gives the
/// increment for column j (negative steps are allowed for forward
/// differences near an upper bound).
pub(crate) fn finite_jacobian<F>(
    f: F,
    x: &[f64],
    f0: &DVector<f64>,
    difference: Difference,
    step: impl Fn(usize) -> f64 + Sync,
) -> Result<DMatrix<f64>, CalibrationError>
where
    F: Fn(&[f64]) -> Result<DVector<f64>, CalibrationError> + Sync,
{
    let columns: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = step(j);
            let mut xp = x.to_vec();
            xp[j] += h;
            match difference {
                Difference::Forward => {
                    let fp = f(&xp)?;
                    Ok((fp - f0) / (xp[j] - x[j]))
                }
                Difference::Central => {
                    let mut xm = x.to_vec();
                    xm[j] -= h;
                    let (fp, fm) = (f(&xp)?, f(&xm)?);
                    Ok((fp - fm) / (xp[j] - xm[j]))
                }
            }
        })
        .collect::<Result<_, CalibrationError>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// Jacobian of the weighted residuals with respect to the natural-scale
/// parameters. Steps are 1e-7 (forward) or 1e-5 (central) of the parameter
/// magnitude, turned around when they would cross an upper bound.
pub fn jacobian(problem: &FitProblem, theta: &[f64], difference: Difference) -> Result<DMatrix<f64>, CalibrationError> {
    let f0 = problem.residuals(theta)?;
    let relative = match difference {
        Difference::Forward => 1e-7,
        Difference::Central => 1e-5,
    };
    let step = |j: usize| {
        let p = &problem.free[j];
        let h = relative * theta[j].abs().max(1e-3);
        let room_up = p.upper - theta[j];
        let room_down = theta[j] - p.lower;
        match difference {
            Difference::Forward if room_up < h => -h,
            Difference::Central => h.min(0.5 * room_up).min(0.5 * room_down),
            Difference::Forward => h,
        }
    };
    finite_jacobian(|x| problem.residuals(x), theta, &f0, difference, step)
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::SimulationTrace;
use crate::error::{AllometryError, PatternError};

/// Power law `length = b · mass^β` fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllometryFit {
    pub b: f64,
    pub beta: f64,
    /// R² of the log-log regression; 0 when log-length has no variance.
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares of ln(length) on ln(mass).
pub fn fit_allometry(records: &[(f64, f64)]) -> Result<AllometryFit, AllometryError> {
    if records.len() < 3 {
        return Err(AllometryError::TooFewRecords(records.len()));
    }
    if let Some(i) = records.iter().position(|&(q, l)| !(q > 0.0 && l > 0.0)) {
        return Err(AllometryError::NonPositive(i));
    }
    let n = records.len() as f64;
    let xs: Vec<f64> = records.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * n * (1.0 + mx * mx) {
        return Err(AllometryError::ZeroVariance);
    }
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - beta * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).max(0.0) } else { 0.0 };
    Ok(AllometryFit {
        b: intercept.exp(),
        beta,
        r_squared,
        n: records.len(),
    })
}

/// (internode biomass, length) of every simulated internode position with a
/// positive biomass.
pub fn allometry_records(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    trace
        .classes
        .iter()
        .flat_map(|c| c.metamers.iter())
        .filter(|m| m.internode_mass > 0.0 && m.length > 0.0)
        .map(|m| (m.internode_mass, m.length))
        .collect()
}

#[derive(Deserialize)]
struct AllometryRow {
    biomass: f64,
    length: f64,
}

/// Reads a `biomass,length` CSV file.
pub fn read_allometry_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>, PatternError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PatternError::Format(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<AllometryRow>().enumerate() {
        let row = row.map_err(|e| PatternError::Row {
            line: i + 2,
            message: e.to_string(),
        })?;
        records.push((row.biomass, row.length));
    }
    Ok(records)
}

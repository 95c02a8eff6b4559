//! Target CSV files.
//!
//! Header: `pattern,kind,pa,birth_cycle,rank,value,unit,weight`. The weight
//! column may be left empty, meaning 1.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObservableKind, ObservationKey, PatternRegistry, Unit};
use crate::error::PatternError;

pub const TARGET_HEADER: [&str; 8] = [
    "pattern",
    "kind",
    "pa",
    "birth_cycle",
    "rank",
    "value",
    "unit",
    "weight",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub key: ObservationKey,
    pub value: f64,
    pub unit: Unit,
    pub weight: Option<f64>,
}

impl TargetRow {
    pub fn weight_or_default(&self) -> f64 {
        self.weight.unwrap_or(1.0)
    }
}

/// Measured observables for one pattern. `pattern` is `None` only for an
/// empty dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetDataset {
    pub pattern: Option<u8>,
    pub rows: Vec<TargetRow>,
}

impl TargetDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn row_error(line: usize, message: impl Into<String>) -> PatternError {
    PatternError::Row {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, line: usize) -> Result<T, PatternError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| row_error(line, format!("column `{}`: cannot parse `{raw}`", TARGET_HEADER[idx])))
}

/// Parses target CSV text, validating every row against its pattern's schema.
pub fn parse_targets<R: Read>(input: R) -> Result<TargetDataset, PatternError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(PatternError::Format(e.to_string())),
    };
    if headers.is_empty() || (headers.len() == 1 && headers.get(0) == Some("")) {
        log::warn!("target file is empty");
        return Ok(TargetDataset::default());
    }
    let found: Vec<&str> = headers.iter().collect();
    if found != TARGET_HEADER {
        return Err(PatternError::Format(format!(
            "expected header `{}`, found `{}`",
            TARGET_HEADER.join(","),
            found.join(",")
        )));
    }

    let registry = PatternRegistry::default();
    let mut dataset = TargetDataset::default();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| row_error(line, e.to_string()))?;
        let pattern: u8 = parse_field(&record, 0, line)?;
        let kind: ObservableKind = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e: String| row_error(line, e))?;
        let key = ObservationKey {
            kind,
            pa: parse_field(&record, 2, line)?,
            birth_cycle: parse_field(&record, 3, line)?,
            rank: parse_field(&record, 4, line)?,
        };
        let value: f64 = parse_field(&record, 5, line)?;
        let unit: Unit = record
            .get(6)
            .unwrap_or("")
            .parse()
            .map_err(|e: String| row_error(line, e))?;
        let weight = match record.get(7).unwrap_or("") {
            "" => None,
            _ => Some(parse_field::<f64>(&record, 7, line)?),
        };

        match dataset.pattern {
            None => dataset.pattern = Some(pattern),
            Some(p) if p != pattern => {
                return Err(row_error(line, format!("pattern {pattern} in a pattern-{p} file")));
            }
            Some(_) => {}
        }
        let schema = registry
            .get(&pattern.to_string())
            .map_err(|_| row_error(line, format!("unknown pattern {pattern}")))?;
        if !schema.accepts(kind) {
            return Err(row_error(
                line,
                format!("kind `{kind}` is not part of pattern {pattern}"),
            ));
        }
        if unit != kind.unit() {
            return Err(row_error(
                line,
                format!(
                    "kind `{kind}` is measured in {}, not {}",
                    kind.unit().as_str(),
                    unit.as_str()
                ),
            ));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(row_error(line, format!("value must be >= 0 (got {value})")));
        }
        if let Some(w) = weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(row_error(line, format!("weight must be > 0 (got {w})")));
            }
        }
        dataset.rows.push(TargetRow {
            key,
            value,
            unit,
            weight,
        });
    }
    if dataset.rows.is_empty() {
        log::warn!("target file has no rows");
    }
    Ok(dataset)
}

pub fn write_targets<W: Write>(dataset: &TargetDataset, out: W) -> Result<(), PatternError> {
    let to_format = |e: csv::Error| PatternError::Format(e.to_string());
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(TARGET_HEADER).map_err(to_format)?;
    let pattern = dataset.pattern.unwrap_or(0).to_string();
    for row in &dataset.rows {
        writer
            .write_record([
                pattern.clone(),
                row.key.kind.as_str().to_string(),
                row.key.pa.to_string(),
                row.key.birth_cycle.to_string(),
                row.key.rank.to_string(),
                // shortest representation that parses back to the same f64
                format!("{:?}", row.value),
                row.unit.as_str().to_string(),
                row.weight.map(|w| format!("{w:?}")).unwrap_or_default(),
            ])
            .map_err(to_format)?;
    }
    writer.flush().map_err(|e| PatternError::Format(e.to_string()))?;
    Ok(())
}

pub fn parse_target_file(path: impl AsRef<Path>) -> Result<TargetDataset, PatternError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| PatternError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_targets(file)
}

pub fn write_target_file(dataset: &TargetDataset, path: impl AsRef<Path>) -> Result<(), PatternError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|source| PatternError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_targets(dataset, std::io::BufWriter::new(file))
}

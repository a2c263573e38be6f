//! CSV ingestion.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use panda_core::{Dataset, NodeFamily};

use crate::config::Schema;
use crate::error::CliError;

enum Column {
    Numeric {
        name: String,
        family: NodeFamily,
        values: Vec<f64>,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
    },
}

/// Reads a headed CSV. Categorical columns become k-1 Bernoulli indicators
/// named `column=level`, the first level in sorted order being the
/// baseline. Gaussian columns are standardized when `standardize` is set.
pub fn ingest_csv(path: &Path, schema: &Schema, standardize: bool) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(CliError::parse(path, "header has an empty column name"));
    }
    let mut seen = BTreeSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(CliError::parse(path, format!("duplicate column '{h}'")));
        }
    }
    for c in &schema.categorical {
        if !header.contains(c) {
            return Err(CliError::parse(
                path,
                format!("categorical column '{c}' not in header"),
            ));
        }
    }
    for c in schema.families.keys() {
        if !header.contains(c) {
            return Err(CliError::parse(
                path,
                format!("declared column '{c}' not in header"),
            ));
        }
    }

    let mut columns: Vec<Column> = header
        .iter()
        .map(|h| {
            if schema.categorical.contains(h) {
                Column::Categorical {
                    name: h.clone(),
                    levels: Vec::new(),
                }
            } else {
                Column::Numeric {
                    name: h.clone(),
                    family: schema.family(h),
                    values: Vec::new(),
                }
            }
        })
        .collect();

    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths {
                pos,
                expected_len,
                len,
            } => CliError::parse(
                path,
                format!(
                    "line {}: expected {expected_len} fields, found {len}",
                    pos.as_ref().map_or(0, |p| p.line())
                ),
            ),
            _ => CliError::parse(path, e.to_string()),
        })?;
        let line = rec.position().map_or(rows as u64 + 2, |p| p.line());
        rows += 1;
        for (cell, col) in rec.iter().zip(columns.iter_mut()) {
            match col {
                Column::Numeric {
                    name,
                    family,
                    values,
                } => {
                    if cell.is_empty() {
                        return Err(CliError::parse(
                            path,
                            format!("line {line}, column '{name}': missing value"),
                        ));
                    }
                    let v: f64 = cell.parse().map_err(|_| {
                        CliError::parse(
                            path,
                            format!(
                                "line {line}, column '{name}': cannot parse '{cell}' as a number"
                            ),
                        )
                    })?;
                    if !family.valid_response(v) {
                        return Err(CliError::parse(
                            path,
                            format!(
                                "line {line}, column '{name}': value {v} invalid for the {} family",
                                family.name()
                            ),
                        ));
                    }
                    values.push(v);
                }
                Column::Categorical { name, levels } => {
                    if cell.is_empty() {
                        return Err(CliError::parse(
                            path,
                            format!("line {line}, column '{name}': missing value"),
                        ));
                    }
                    levels.push(cell.to_string());
                }
            }
        }
    }
    if rows == 0 {
        return Err(CliError::parse(path, "no data rows"));
    }

    let mut names = Vec::new();
    let mut families = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for col in columns {
        match col {
            Column::Numeric {
                name,
                family,
                values,
            } => {
                names.push(name);
                families.push(family);
                data.extend(values);
            }
            Column::Categorical { name, levels } => {
                let distinct: BTreeSet<&String> = levels.iter().collect();
                for lvl in distinct.iter().skip(1) {
                    names.push(format!("{name}={lvl}"));
                    families.push(NodeFamily::Bernoulli);
                    data.extend(levels.iter().map(|v| f64::from(u8::from(v == *lvl))));
                }
            }
        }
    }
    let x = DMatrix::from_vec(rows, names.len(), data);
    let ds = Dataset::with_names(x, families, names)?;
    Ok(if standardize { ds.standardized() } else { ds })
}

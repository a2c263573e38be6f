//! Artifact writers and the readers that parse them back.
//!
//! Floats are written with 17 significant digits so a value read back is
//! bit-identical. Tables may end in `# key=value` footer lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use panda_core::{FitTrace, TraceRecord};
use serde::Serialize;

use crate::error::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: BTreeMap<String, f64>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            ..Table::default()
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as floats.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let j = self
            .column(name)
            .ok_or_else(|| CliError::Validation(format!("table has no column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                r[j].parse::<f64>().map_err(|_| {
                    CliError::Validation(format!("column '{name}': cannot parse '{}'", r[j]))
                })
            })
            .collect()
    }
}

pub fn write_table(path: &Path, table: &Table, delimiter: u8) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::parse(path, e.to_string());
    w.write_record(&table.header).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    drop(w);
    if !table.footer.is_empty() {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        for (k, v) in &table.footer {
            writeln!(f, "# {k}={}", num(*v)).map_err(|e| CliError::io(path, e))?;
        }
    }
    Ok(())
}

pub fn read_table(path: &Path, delimiter: u8) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut footer = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, format!("bad footer line '# {line}'")))?;
        let v = v
            .parse::<f64>()
            .map_err(|_| CliError::parse(path, format!("bad footer value '{v}'")))?;
        footer.insert(k.to_string(), v);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| CliError::parse(path, e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Table {
        header,
        rows,
        footer,
    })
}

/// Dense matrix with the node names as header.
pub fn write_matrix(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut t = Table {
        header: names.to_vec(),
        ..Table::default()
    };
    t.rows = m
        .row_iter()
        .map(|r| r.iter().map(|&v| num(v)).collect())
        .collect();
    write_table(path, &t, b',')
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let t = read_table(path, b',')?;
    let (n, p) = (t.rows.len(), t.header.len());
    let mut m = DMatrix::zeros(n, p);
    for (i, r) in t.rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = v.parse().map_err(|_| {
                CliError::parse(path, format!("row {}, column {}: '{v}'", i + 1, j + 1))
            })?;
        }
    }
    Ok((t.header, m))
}

pub type Edge = (String, String, f64);

pub fn write_edges(path: &Path, edges: &[Edge]) -> Result<(), CliError> {
    let mut t = Table::new(&["node_i", "node_j", "weight"]);
    t.rows = edges
        .iter()
        .map(|(a, b, w)| vec![a.clone(), b.clone(), num(*w)])
        .collect();
    write_table(path, &t, b'\t')
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>, CliError> {
    let t = read_table(path, b'\t')?;
    if t.header != ["node_i", "node_j", "weight"] {
        return Err(CliError::parse(
            path,
            "expected header node_i, node_j, weight",
        ));
    }
    let w = t
        .floats("weight")
        .map_err(|e| CliError::parse(path, e.to_string()))?;
    Ok(t.rows
        .into_iter()
        .zip(w)
        .map(|(r, w)| (r[0].clone(), r[1].clone(), w))
        .collect())
}

pub fn write_trace(path: &Path, trace: &FitTrace) -> Result<(), CliError> {
    let mut out = String::new();
    for r in &trace.records {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::parse(path, e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::parse(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use panda_core::engine::Phase;
    use panda_core::ConvergenceStatus;

    #[test]
    fn floats_survive_the_round_trip() {
        for x in [
            0.1,
            -1.0 / 3.0,
            1e-300,
            6.02e23,
            f64::MIN_POSITIVE,
            0.0,
            -0.0,
        ] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn tables_matrices_edges_traces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(&["lambda", "fpr"]);
        t.rows = vec![vec![num(0.5), num(0.25)], vec![num(1.0), num(0.0)]];
        t.footer.insert("auc".into(), 0.875);
        write_table(&p, &t, b',').unwrap();
        assert_eq!(read_table(&p, b',').unwrap(), t);

        let names: Vec<String> = vec!["a,b".into(), "c".into()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 1.0 / 3.0, 2e-17]);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &names, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), (names, m));

        let edges = vec![("x".to_string(), "y".to_string(), -0.7)];
        let p = dir.path().join("e.tsv");
        write_edges(&p, &edges).unwrap();
        assert_eq!(read_edges(&p).unwrap(), edges);

        let rec = TraceRecord {
            iter: 3,
            phase: Phase::Search,
            loss: 1.0 / 7.0,
            raw_loss: 0.2,
            aug_loss: None,
            c1: None,
            z_stat: Some(-1.5),
            rel_change: None,
            residual: None,
            converged: false,
        };
        let trace = FitTrace {
            records: vec![
                rec.clone(),
                TraceRecord {
                    iter: 4,
                    converged: true,
                    ..rec
                },
            ],
            status: ConvergenceStatus::Converged { iteration: 4 },
        };
        let p = dir.path().join("trace.jsonl");
        write_trace(&p, &trace).unwrap();
        assert_eq!(read_trace(&p).unwrap(), trace.records);
        let first = fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        for key in ["iter", "loss", "z_stat", "converged"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}

//! CSV and JSON files. CSV rows are timesteps and columns are features;
//! in memory everything is `features x timesteps`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use missnet::{PartialSeries, RegimePath};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// A CSV table with optional cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    /// `N x T`, `None` where the cell was empty or `NaN`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn num_features(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_features(), self.len())
    }

    pub fn to_series(&self) -> Result<PartialSeries<f64>> {
        Ok(PartialSeries::from_options(self.num_features(), self.len(), |i, t| self.cells[i][t])?)
    }

    /// Every cell must be present.
    pub fn to_dense(&self, what: &str) -> Result<DMatrix<f64>> {
        let (n, len) = self.shape();
        let mut out = DMatrix::zeros(n, len);
        for i in 0..n {
            for t in 0..len {
                out[(i, t)] = self.cells[i][t].ok_or_else(|| {
                    CliError::Input(format!("{what}: missing value at row {} column '{}'", t + 1, self.names[i]))
                })?;
            }
        }
        Ok(out)
    }

    /// Cells read as booleans: nonzero is true.
    pub fn to_mask(&self, what: &str) -> Result<DMatrix<bool>> {
        Ok(self.to_dense(what)?.map(|v| v != 0.0))
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str) -> Option<f64> {
    match cell {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => cell.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    CliError::Input(format!("{}:{line}: {e}", path.display()))
}

/// Reads a header row of names followed by one row per timestep. Empty
/// cells and `NaN` are missing.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_table_from(file, path)
}

pub fn read_table_from(reader: impl std::io::Read, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(CliError::Input(format!("{}: line 1: missing header row", path.display())));
    }
    let mut cells = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, cell) in rec.iter().enumerate() {
            let v = if is_missing(cell) {
                None
            } else {
                Some(parse_cell(cell).ok_or_else(|| {
                    CliError::Input(format!(
                        "{}: line {line}: column '{}': cannot parse '{cell}' as a finite number",
                        path.display(),
                        names[j]
                    ))
                })?)
            };
            cells[j].push(v);
        }
    }
    if cells[0].is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Table { names, cells })
}

/// Reads a `timestep,regime` file.
pub fn read_regimes(path: &Path) -> Result<Vec<usize>> {
    let table = read_table(path)?;
    let col = table
        .names
        .iter()
        .position(|n| n == "regime")
        .ok_or_else(|| CliError::Input(format!("{}: no 'regime' column", path.display())))?;
    table.cells[col]
        .iter()
        .enumerate()
        .map(|(t, v)| match v {
            Some(r) if *r >= 0.0 && r.fract() == 0.0 => Ok(*r as usize),
            _ => Err(CliError::Input(format!(
                "{}: line {}: regime must be a non-negative integer",
                path.display(),
                t + 2
            ))),
        })
        .collect()
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes an `N x T` matrix with one row per timestep; `None` cells are
/// left empty. Numbers use the shortest representation that reads back
/// to the same value.
pub fn write_matrix(path: &Path, names: &[String], value: impl Fn(usize, usize) -> Option<f64>, len: usize) -> Result<()> {
    let n = names.len();
    write_rows(
        path,
        names,
        (0..len).map(|t| (0..n).map(|i| value(i, t).map(|v| v.to_string()).unwrap_or_default()).collect()),
    )
}

pub fn write_regimes(path: &Path, regimes: &RegimePath) -> Result<()> {
    let header = ["timestep".to_string(), "regime".to_string()];
    write_rows(
        path,
        &header,
        regimes.assignments().iter().enumerate().map(|(t, k)| vec![t.to_string(), k.to_string()]),
    )
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    writeln!(f).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Table> {
        read_table_from(text.as_bytes(), Path::new("test.csv"))
    }

    #[test]
    fn reads_missing_cells() {
        let t = parse("a,b\n1,\n NaN ,2.5\n").unwrap();
        assert_eq!(t.names, vec!["a", "b"]);
        assert_eq!(t.cells, vec![vec![Some(1.0), None], vec![None, Some(2.5)]]);
        assert_eq!(t.shape(), (2, 2));
    }

    #[test]
    fn reports_line_of_bad_cell() {
        let err = parse("a,b\n1,2\n3,x\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("'b'"), "{err}");
    }

    #[test]
    fn reports_ragged_rows() {
        let err = parse("a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, CliError::Input(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn rejects_empty_body_and_infinities() {
        assert!(parse("a,b\n").is_err());
        assert!(parse("a\ninf\n").is_err());
    }

    #[test]
    fn dense_requires_every_cell() {
        let t = parse("a\n1\n\n2\n").unwrap();
        assert_eq!(t.len(), 2, "blank lines are skipped");
        let t = parse("a,b\n1,\n").unwrap();
        assert!(t.to_dense("x").is_err());
    }

    #[test]
    fn written_matrix_reads_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.csv");
        let names = vec!["a".to_string(), "b".to_string()];
        let vals = [[0.1 + 0.2, -1.0 / 3.0], [6.02214076e23, f64::MIN_POSITIVE]];
        write_matrix(&file, &names, |i, t| (i + t != 2).then(|| vals[i][t]), 2).unwrap();
        let back = read_table(&file).unwrap();
        assert_eq!(back.cells, vec![vec![Some(vals[0][0]), Some(vals[0][1])], vec![Some(vals[1][0]), None]]);
    }

    #[test]
    fn single_column_missing_cell_survives() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.csv");
        write_matrix(&file, &["a".to_string()], |_, t| (t != 1).then_some(t as f64), 3).unwrap();
        assert_eq!(read_table(&file).unwrap().cells, vec![vec![Some(0.0), None, Some(2.0)]]);
    }
}

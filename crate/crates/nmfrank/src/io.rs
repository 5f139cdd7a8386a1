//! Delimited-text matrices.
//!
//! Input files are CSV or TSV (by extension, else by the first line). A first
//! row containing any non-numeric cell is a header; a first column with any
//! non-numeric cell holds row labels. Positions in parse errors are 1-based
//! data coordinates, matching the core's validation errors.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nmfrank_core::{DataMatrix, Matrix};

use crate::CliError;

fn delimiter_for(path: &Path, first_line: &str) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("tab") => b'\t',
        Some(e) if e.eq_ignore_ascii_case("csv") => b',',
        _ if first_line.contains('\t') => b'\t',
        _ => b',',
    }
}

fn numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Reads a non-negative data matrix. All-zero rows are kept; callers decide
/// whether to drop them.
pub fn read_matrix(path: &Path) -> Result<DataMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first_line = text.lines().next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path, first_line))
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no data", path.display())));
    }

    let has_header = records[0].iter().skip(1).any(|c| numeric(c).is_none())
        || (records[0].len() == 1 && numeric(&records[0][0]).is_none());
    let body = if has_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(CliError::Data(format!("{}: header but no data rows", path.display())));
    }
    let has_labels = body.iter().any(|r| r.get(0).is_some_and(|c| numeric(c).is_none()));
    let skip = usize::from(has_labels);
    let width = body[0].len();
    let cols = width.saturating_sub(skip);
    if cols == 0 {
        return Err(CliError::Data(format!("{}: no numeric columns", path.display())));
    }

    let mut values = Vec::with_capacity(body.len() * cols);
    let mut row_labels = Vec::new();
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(CliError::Data(format!(
                "{}: data row {} has {} fields, expected {width}",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        if has_labels {
            row_labels.push(rec[0].to_string());
        }
        for (j, cell) in rec.iter().skip(skip).enumerate() {
            let v = numeric(cell).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: cannot parse {cell:?} at ({},{})",
                    path.display(),
                    i + 1,
                    j + 1
                ))
            })?;
            values.push(v);
        }
    }
    let col_labels = has_header.then(|| records[0].iter().skip(records[0].len() - cols).map(String::from).collect());
    let data = DataMatrix::new(Matrix::from_vec(body.len(), cols, values))?;
    Ok(data.with_labels(has_labels.then_some(row_labels), col_labels)?)
}

/// Writes a matrix as CSV with optional row and column labels.
pub fn write_matrix(
    path: &Path,
    m: &Matrix,
    row_labels: Option<&[String]>,
    col_labels: Option<&[String]>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    if let Some(cols) = col_labels {
        let mut header: Vec<&str> = Vec::new();
        if row_labels.is_some() {
            header.push("");
        }
        header.extend(cols.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_err)?;
    }
    for i in 0..m.rows() {
        let mut rec: Vec<String> = Vec::with_capacity(m.cols() + 1);
        if let Some(labels) = row_labels {
            rec.push(labels[i].clone());
        }
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes named columns of equal length as CSV.
pub fn write_columns(path: &Path, names: &[&str], columns: &[&[f64]]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(names).map_err(csv_err)?;
    let len = columns.first().map_or(0, |c| c.len());
    for i in 0..len {
        w.write_record(columns.iter().map(|c| c[i].to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `contents` and a trailing newline.
pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(contents.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_str(name: &str, body: &str) -> Result<DataMatrix, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        read_matrix(&path)
    }

    #[test]
    fn plain_csv() {
        let x = read_str("a.csv", "1,2,3\n4,5,6\n").unwrap();
        assert_eq!(x.values(), &Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        assert!(x.row_labels().is_none() && x.col_labels().is_none());
    }

    #[test]
    fn labelled_tsv() {
        let x = read_str("a.tsv", "otu\ts1\ts2\ntaxonA\t1\t0\ntaxonB\t3\t4\n").unwrap();
        assert_eq!(x.row_labels().unwrap(), ["taxonA", "taxonB"]);
        assert_eq!(x.col_labels().unwrap(), ["s1", "s2"]);
        assert_eq!(x.values()[(1, 1)], 4.0);
    }

    #[test]
    fn header_without_corner_cell() {
        let x = read_str("a.csv", "s1,s2\nA,1,2\nB,3,4\n").unwrap();
        assert_eq!(x.col_labels().unwrap(), ["s1", "s2"]);
        assert_eq!(x.p(), 2);
    }

    #[test]
    fn negative_cell_position() {
        let err = read_str("a.csv", "1,2\n-1,3\n").unwrap_err();
        assert!(err.to_string().contains("(2,1)"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn unparsable_cell() {
        let err = read_str("a.csv", "a,b\n1,x\n").unwrap_err();
        assert!(err.to_string().contains("(1,2)"), "{err}");
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Matrix::from_rows(&[[0.1, 2.0], [3.5, 1e-20]]);
        let rows = vec![String::from("r1"), String::from("r2")];
        let cols = vec![String::from("c1"), String::from("c2")];
        write_matrix(&path, &m, Some(&rows), Some(&cols)).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.values(), &m);
        assert_eq!(back.row_labels().unwrap(), rows.as_slice());
    }
}

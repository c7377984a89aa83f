//! CSV output helpers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dates::Quarter;
use crate::error::{GapError, Result};

/// Formats a number for CSV output; missing values become empty cells.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Table with a date column followed by named numeric columns.
pub fn dated_columns_csv(dates: &[Quarter], columns: &[(&str, &[f64])]) -> Result<String> {
    for (name, col) in columns {
        if col.len() != dates.len() {
            return Err(GapError::invalid(format!("column '{name}' has {} rows, expected {}", col.len(), dates.len())));
        }
    }
    let mut out = String::from("date");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, d) in dates.iter().enumerate() {
        let _ = write!(out, "{d}");
        for (_, col) in columns {
            out.push(',');
            out.push_str(&fmt_num(col[t]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Table of a dated matrix with the given column headers.
pub fn dated_matrix_csv(dates: &[Quarter], headers: &[String], m: &DMatrix<f64>) -> Result<String> {
    if m.nrows() != dates.len() || m.ncols() != headers.len() {
        return Err(GapError::invalid("matrix shape does not match dates and headers"));
    }
    let cols: Vec<Vec<f64>> = (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect();
    let named: Vec<(&str, &[f64])> = headers.iter().zip(&cols).map(|(h, c)| (h.as_str(), c.as_slice())).collect();
    dated_columns_csv(dates, &named)
}

/// Generic table with an arbitrary first column.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a single numeric column (by header name, or the last column when
/// `column` is `None`) from a dated CSV file.
pub fn read_dated_column(text: &str, column: Option<&str>) -> Result<(Vec<Quarter>, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| GapError::data("empty CSV file"))?
        .split(',')
        .map(str::trim)
        .collect();
    let idx = match column {
        Some(c) => header
            .iter()
            .position(|h| *h == c)
            .ok_or_else(|| GapError::data(format!("column '{c}' not found")))?,
        None => header.len() - 1,
    };
    if idx == 0 {
        return Err(GapError::data("the first column must hold dates"));
    }
    let mut dates = Vec::new();
    let mut vals = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(GapError::data(format!("row {} has {} cells, expected {}", k + 2, cells.len(), header.len())));
        }
        dates.push(cells[0].parse::<Quarter>()?);
        let c = cells[idx];
        vals.push(if c.is_empty() || c.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            c.parse().map_err(|_| GapError::data(format!("cannot parse '{c}' on row {}", k + 2)))?
        });
    }
    Ok((dates, vals))
}

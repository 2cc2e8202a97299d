//! Minimal CSV reading/writing for numeric curves and histories.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a file back yields bit-identical values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lpn_core::error::{LpnError, Result};

/// Write a table whose cells are already rendered to strings.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write numeric columns of equal length.
pub fn write_columns(
    path: impl AsRef<Path>,
    header: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    assert_eq!(header.len(), columns.len(), "header/column count mismatch");
    let nrows = columns.first().map(|c| c.len()).unwrap_or(0);
    assert!(
        columns.iter().all(|c| c.len() == nrows),
        "ragged columns"
    );
    let rows: Vec<Vec<String>> = (0..nrows)
        .map(|i| columns.iter().map(|c| fmt_f64(c[i])).collect())
        .collect();
    write_table(path, header, &rows)
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Read a numeric CSV produced by [`write_columns`]; returns the header and
/// row-major cells.
pub fn read_numeric(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| LpnError::InvalidConfig("empty CSV".into()))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            LpnError::InvalidConfig(format!("bad CSV value on data row {}: {e}", i + 1))
        })?);
    }
    Ok((header, rows))
}

//! Delimited input: one header row, comma separated, empty cells missing.

use std::io::Read;

use clusterjack_core::{Column, ColumnData, ColumnTable};

use crate::error::{CliError, Result};

/// Reads a CSV file. A column is numeric when every non-empty cell parses
/// as a number, otherwise it is kept as text.
pub fn read_table(path: &str) -> Result<ColumnTable> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    parse_table(file)
}

pub fn parse_table<R: Read>(reader: R) -> Result<ColumnTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim_matches('"').to_string()).collect();
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    for record in rdr.records() {
        let record = record?;
        for (col, cell) in cells.iter_mut().zip(record.iter()) {
            col.push(if cell.is_empty() { None } else { Some(cell.to_string()) });
        }
    }
    let columns = header
        .into_iter()
        .zip(cells)
        .map(|(name, raw)| {
            let parsed: Option<Vec<Option<f64>>> =
                raw.iter().map(|c| c.as_ref().map_or(Some(None), |s| s.parse::<f64>().ok().map(Some))).collect();
            let data = match parsed {
                Some(v) => ColumnData::Numeric(v),
                None => ColumnData::Text(raw),
            };
            Column { name, data }
        })
        .collect();
    Ok(ColumnTable::new(columns)?)
}

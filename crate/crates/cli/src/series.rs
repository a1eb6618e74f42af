// SPDX-License-Identifier: MIT OR Apache-2.0

//! Series files: an index column (integer or ISO date) followed by `d`
//! numeric cells per row. An empty cell marks an unobserved component. A
//! header row is optional and detected by an unparseable first index.

use crate::error::{CliError, CliResult};
use chrono::NaiveDate;
use renewcp::masked_linalg::ObservationMask;
use std::fmt;
use std::path::Path;

/// Row label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Index {
    Integer(i64),
    Date(NaiveDate),
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Index::Integer(i) => write!(f, "{i}"),
            Index::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

impl Index {
    fn parse(cell: &str) -> Option<Self> {
        let cell = cell.trim();
        if let Ok(i) = cell.parse::<i64>() {
            return Some(Index::Integer(i));
        }
        NaiveDate::parse_from_str(cell, "%Y-%m-%d").ok().map(Index::Date)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFile {
    pub header: Option<Vec<String>>,
    pub index: Vec<Index>,
    /// Unobserved cells are NaN.
    pub values: Vec<Vec<f64>>,
    pub masks: Vec<ObservationMask>,
}

impl SeriesFile {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn read(path: &Path, d: usize) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, d)
    }

    /// Parses `text`, expecting `d` value columns.
    pub fn parse(text: &str, d: usize) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut out = SeriesFile {
            header: None,
            index: Vec::new(),
            values: Vec::new(),
            masks: Vec::new(),
        };
        for (k, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::Input(format!("malformed CSV: {e}")))?;
            let line = record.position().map_or(k as u64 + 1, |p| p.line());
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            let Some(index) = Index::parse(&record[0]) else {
                if out.header.is_none() && out.index.is_empty() {
                    out.header = Some(record.iter().map(str::to_string).collect());
                    if record.len() != d + 1 {
                        return Err(CliError::Input(format!(
                            "line {line}: header has {} columns, expected {}",
                            record.len(),
                            d + 1
                        )));
                    }
                    continue;
                }
                return Err(CliError::Input(format!(
                    "line {line}: index `{}` is neither an integer nor a YYYY-MM-DD date",
                    &record[0]
                )));
            };
            if record.len() != d + 1 {
                return Err(CliError::Input(format!(
                    "line {line}: expected {} columns (index + {d} values), got {}",
                    d + 1,
                    record.len()
                )));
            }
            if let Some(prev) = out.index.last() {
                let comparable = matches!(
                    (prev, &index),
                    (Index::Integer(_), Index::Integer(_)) | (Index::Date(_), Index::Date(_))
                );
                if !comparable {
                    return Err(CliError::Input(format!("line {line}: index mixes integers and dates")));
                }
                if &index <= prev {
                    return Err(CliError::Input(format!(
                        "line {line}: index {index} does not increase (previous {prev})"
                    )));
                }
            }
            let mut row = Vec::with_capacity(d);
            let mut flags = Vec::with_capacity(d);
            for (c, cell) in record.iter().skip(1).enumerate() {
                if cell.is_empty() {
                    row.push(f64::NAN);
                    flags.push(false);
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::Input(format!("line {line}, column {}: `{cell}` is not a number", c + 2))
                })?;
                if !v.is_finite() {
                    return Err(CliError::Input(format!(
                        "line {line}, column {}: value must be finite",
                        c + 2
                    )));
                }
                row.push(v);
                flags.push(true);
            }
            out.index.push(index);
            out.values.push(row);
            out.masks.push(ObservationMask::new(flags));
        }
        Ok(out)
    }

    /// Writes with an integer index `1..=n` and a `t,y1,..,yd` header.
    pub fn write_simulated(path: &Path, ys: &[Vec<f64>]) -> CliResult<()> {
        let d = ys.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        w.write_record(&header).map_err(|e| CliError::Input(e.to_string()))?;
        for (t, row) in ys.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            w.write_record(&rec).map_err(|e| CliError::Input(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_index_with_header_and_blanks() {
        let s = SeriesFile::parse("t,a,b\n1,0.5,\n2,,\n3,1e-3,-2\n", 2).unwrap();
        assert_eq!(s.header.as_deref(), Some(&["t".to_string(), "a".into(), "b".into()][..]));
        assert_eq!(s.len(), 3);
        assert_eq!(s.masks[0].flags(), &[true, false]);
        assert!(s.masks[1].is_empty());
        assert_eq!(s.values[2], vec![1e-3, -2.0]);
    }

    #[test]
    fn date_index_without_header() {
        let s = SeriesFile::parse("2024-01-02,1\n2024-01-05,2\n", 1).unwrap();
        assert_eq!(s.index[1].to_string(), "2024-01-05");
        assert!(s.header.is_none());
    }

    fn message(text: &str, d: usize) -> String {
        let e = SeriesFile::parse(text, d).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        e.to_string()
    }

    #[test]
    fn errors_name_the_line() {
        assert!(message("1,1\n2,x\n", 1).contains("line 2"));
        assert!(message("t,y\n1,1\n2,1,3\n", 1).contains("line 3"));
        assert!(message("1,1\n1,2\n", 1).contains("does not increase"));
        assert!(message("1,1\n2024-01-01,2\n", 1).contains("mixes"));
        assert!(message("1,1\nfoo,2\n", 1).contains("line 2"));
        assert!(message("1,inf\n", 1).contains("finite"));
    }
}

//! Header-first CSV logs with nine-significant-digit floats.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::fmt_sig9;

#[derive(Clone, Debug, PartialEq)]
pub struct CsvLog {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvLog {
    pub fn new(header: &[&str]) -> Self {
        CsvLog {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// A row keyed by an integer step followed by float columns.
    pub fn push_step(&mut self, step: u64, values: &[f64]) {
        let mut row = vec![step.to_string()];
        row.extend(values.iter().map(|&v| fmt_sig9(v)));
        self.push_raw(row);
    }

    pub fn push_raw(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "CSV row width");
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    /// Reads a log written by [`CsvLog::write`], checking the header.
    pub fn read(path: &Path, header: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let head = lines.next().unwrap_or_default();
        if head != header.join(",") {
            return Err(Error::format(path.display(), format!("unexpected header {head:?}")));
        }
        let mut log = CsvLog::new(header);
        for line in lines.filter(|l| !l.is_empty()) {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::format(path.display(), format!("row {line:?} has the wrong width")));
            }
            log.rows.push(row);
        }
        Ok(log)
    }
}

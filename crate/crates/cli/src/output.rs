//! Comma-separated tables and the plain-text summary.

use std::fs;
use std::path::Path;

use crate::error::CliError;

/// Named table with a one-line header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Failed(format!("table {}: {e}", self.name));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Failed(e.to_string()))
    }
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "0/0".into(), num)
}

/// Everything a command produces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportBundle {
    pub command: String,
    pub summary: Vec<(String, String)>,
    pub tables: Vec<Table>,
    /// Effective configuration text.
    pub config: String,
    pub passed: bool,
}

impl ReportBundle {
    pub fn new(command: &str, config: String) -> Self {
        Self {
            command: command.into(),
            config,
            passed: true,
            ..Self::default()
        }
    }

    pub fn scalar(&mut self, key: &str, value: impl Into<String>) {
        self.summary.push((key.into(), value.into()));
    }

    pub fn summary_text(&self) -> String {
        let mut out = format!("command = {}\n", self.command);
        for (k, v) in &self.summary {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("status = {}\n", if self.passed { "pass" } else { "fail" }));
        out
    }

    /// Write `summary.txt`, `config.txt` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CliError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |name: &str, text: &str| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))
        };
        put("summary.txt", &self.summary_text())?;
        put("config.txt", &self.config)?;
        for table in &self.tables {
            put(&format!("{}.csv", table.name), &table.to_csv()?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("terms", &["name", "value"]);
        t.push(vec!["a".into(), num(0.5)]);
        t.push(vec!["b,c".into(), opt(None)]);
        assert_eq!(t.to_csv().unwrap(), "name,value\na,5e-1\n\"b,c\",0/0\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}

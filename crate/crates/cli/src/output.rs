//! CSV tables and key=value summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// Round-trip formatting: 17 significant digits, '.' separator.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    R: IntoIterator<Item = String>,
    I: IntoIterator<Item = R>,
{
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Rows of reals.
pub fn write_real_csv<const N: usize>(
    path: &Path,
    header: &[&str; N],
    rows: impl IntoIterator<Item = [f64; N]>,
) -> Result<(), CliError> {
    write_csv(path, header, rows.into_iter().map(|r| r.map(real)))
}

/// Ordered `key=value` lines.
#[derive(Debug, Default, Clone)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn real(&mut self, key: &str, value: f64) -> &mut Self {
        self.text(key, real(value))
    }

    /// `key` and `key_se`.
    pub fn estimate(&mut self, key: &str, e: &mfpa_core::stats::MCEstimate) -> &mut Self {
        self.real(key, e.mean).real(&format!("{key}_se"), e.std_error)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Parses a `key=value` file back into a summary.
pub fn parse_summary(text: &str) -> Summary {
    let mut s = Summary::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            s.text(k, v);
        }
    }
    s
}

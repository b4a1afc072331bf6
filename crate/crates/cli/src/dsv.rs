//! Delimiter-separated artifacts: comma delimiter, `.` decimal point, LF
//! line endings, one header line.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_text(self) -> String {
        self.text
    }

    pub fn write_to(self, path: &Path) -> io::Result<()> {
        fs::write(path, self.text)
    }
}

/// Shortest round-trip decimal text for a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Run metadata. The wall time is informational; every result table is
/// byte-stable for a fixed seed and configuration.
pub struct Manifest {
    pub command: &'static str,
    pub config_hash: u64,
    pub seed: u64,
    pub version: &'static str,
    pub wall_ms: u128,
}

impl Manifest {
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        let mut t = Table::new(&["key", "value"]);
        t.row(&["command".into(), self.command.into()]);
        t.row(&["config_hash".into(), format!("{:016x}", self.config_hash)]);
        t.row(&["seed".into(), self.seed.to_string()]);
        t.row(&["version".into(), self.version.into()]);
        t.row(&["wall_ms".into(), self.wall_ms.to_string()]);
        let path = dir.join("manifest.csv");
        t.write_to(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_text_is_lf_terminated_csv() {
        let mut t = Table::new(&["a", "b"]);
        t.row(&[num(1.5), num(-0.25)]);
        assert_eq!(t.into_text(), "a,b\n1.5,-0.25\n");
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1e-9, 12345.6789, -3.0e22] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}

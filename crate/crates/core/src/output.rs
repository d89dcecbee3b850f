//! Output helpers: float formatting, CSV tables and `summary.json`.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::error::Result;

/// Full-precision float text: `{:.16e}`, or `inf`, `-inf`, `nan`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Parse text produced by [`fmt_f64`].
pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

/// Write a CSV with a header row; each row is already rendered to text.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<C: Serialize, R: Serialize> {
    pub version: &'static str,
    pub command: String,
    pub config: C,
    pub results: R,
    pub timings_s: Vec<(String, f64)>,
    pub checks_passed: bool,
}

impl<C: Serialize, R: Serialize> Summary<C, R> {
    pub fn new(command: &str, config: C, results: R, checks_passed: bool) -> Self {
        Self {
            version: env!("BRWRE_VERSION"),
            command: command.to_string(),
            config,
            results,
            timings_s: Vec::new(),
            checks_passed,
        }
    }

    pub fn timing(mut self, label: &str, d: Duration) -> Self {
        self.timings_s.push((label.to_string(), d.as_secs_f64()));
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for x in [0.1, -3.5e-300, 1.0 / 3.0, f64::INFINITY, f64::NEG_INFINITY, 6.02e23] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap(), x);
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }
}

//! Output artifacts shared by the commands: full-precision CSV files, a
//! sidecar status record per run, and plain stdout tables.

use std::path::{Path, PathBuf};

use fuelcell_core::C64;

use crate::config::SCHEMA_VERSION;
use crate::error::CliError;

/// Formats a float with 17 significant digits, enough to round-trip `f64`
/// exactly; every numeric CSV cell goes through this.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON form of a complex number, `[re, im]`.
pub fn complex_json(z: C64) -> serde_json::Value {
    serde_json::json!([z.re, z.im])
}

/// Creates the output directory if needed.
pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes a CSV file with a mandatory header row; returns the path.
pub fn write_csv<I>(dir: &Path, name: &str, header: &[&str], rows: I) -> Result<PathBuf, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let path = dir.join(name);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    writer.write_record(header).map_err(|e| csv_err(&path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

/// Writes a JSON artifact (pretty-printed, trailing newline); returns the path.
pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Machine-readable record of how a run ended, written next to its outputs.
pub struct Sidecar {
    pub command: &'static str,
    /// `"completed"`, `"leakage_aborted"`, or `"check_failed"`.
    pub status: String,
    /// Command-specific details (abort point, disagreement size, ...).
    pub detail: serde_json::Value,
    /// File names written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Sidecar {
    pub fn completed(command: &'static str) -> Self {
        Self {
            command,
            status: "completed".to_owned(),
            detail: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }
}

/// Writes `status.json` into the output directory.
pub fn write_sidecar(dir: &Path, sidecar: &Sidecar) -> Result<PathBuf, CliError> {
    let value = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "command": sidecar.command,
        "status": sidecar.status,
        "detail": sidecar.detail,
        "outputs": sidecar.outputs,
    });
    write_json(dir, "status.json", &value)
}

/// Prints an aligned two-space-separated table to stdout.
pub fn print_table(headers: &[&str], rows: &[Vec<String>]) {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate().take(cols) {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (c, cell) in cells.iter().enumerate().take(cols) {
            if c > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            for _ in cell.len()..widths[c] {
                out.push(' ');
            }
        }
        println!("{}", out.trim_end());
    };
    line(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        line(row);
    }
}

/// Short human-readable complex form for tables.
pub fn show_complex(z: C64) -> String {
    format!("{:+.6}{:+.6}i", z.re, z.im)
}

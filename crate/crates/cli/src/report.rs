use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const TOOL: &str = "gncount";

/// Recorded in every report so a run can be repeated from its output alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Fully resolved parameters, defaults included.
    pub params: Value,
    pub seeds: Vec<u64>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, params: &impl Serialize, seeds: Vec<u64>) -> Self {
        RunManifest {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            params: serde_json::to_value(params).expect("parameters serialize"),
            seeds,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// The `# manifest: {...}` line that opens every CSV report.
    pub fn csv_comment(&self) -> String {
        format!("# manifest: {}\n", serde_json::to_string(self).expect("manifest serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Report format written to --out, or to standard output without it.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the machine-readable report here (JSON unless --format csv)
    /// and keep the human table on standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A finished report in all three renderings.
pub struct Report {
    pub manifest: RunManifest,
    /// Top-level JSON fields besides `manifest`.
    pub body: Map<String, Value>,
    pub csv_header: Vec<&'static str>,
    pub csv_rows: Vec<Vec<String>>,
    pub table: String,
}

impl Report {
    pub fn json(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("manifest".into(), serde_json::to_value(&self.manifest).expect("manifest serializes"));
        doc.extend(self.body.clone());
        Value::Object(doc)
    }

    pub fn csv(&self) -> Result<String, CliError> {
        csv_document(&self.manifest, &self.csv_header, &self.csv_rows)
    }

    /// Writes the report according to `--format`/`--out`.
    pub fn emit(&self, output: &OutputArgs) -> Result<(), CliError> {
        let machine = |format: Format| -> Result<String, CliError> {
            Ok(match format {
                Format::Csv => self.csv()?,
                _ => serde_json::to_string_pretty(&self.json()).expect("report serializes") + "\n",
            })
        };
        match &output.out {
            Some(path) => {
                write_file(path, &machine(output.format)?)?;
                print_stdout(&self.table)
            }
            None => match output.format {
                Format::Table => print_stdout(&self.table),
                f => print_stdout(&machine(f)?),
            },
        }
    }
}

pub fn csv_document(manifest: &RunManifest, header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("utf-8 csv");
    Ok(manifest.csv_comment() + &body)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn print_stdout(s: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    out.write_all(s.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

/// Left-aligned text columns separated by two spaces.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut s = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut l = String::new();
        for (cell, w) in cells.zip(&widths) {
            let _ = write!(l, "{cell:<w$}  ");
        }
        s.push_str(l.trim_end());
        s.push('\n');
    };
    line(&mut header.iter().copied());
    for r in rows {
        line(&mut r.iter().map(String::as_str));
    }
    s
}

pub fn fmt_f(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

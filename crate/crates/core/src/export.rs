//! Plain-text artifact formats: PGM heatmaps, CSV grids and metric logs.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{contract_err, Result};
use crate::mission::MeasurementSet;
use crate::rf_env::{SnrClamp, SnrMap};

/// Writes via a sibling temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Quantises `snr` onto 0..=255 over the clamp range, rounding half up.
pub fn quantize(snr: f64, clamp: &SnrClamp) -> u8 {
    let v = clamp.clamp(snr);
    (255.0 * (v - clamp.lo_db) / clamp.span() + 0.5).floor() as u8
}

/// Plain ("P2") PGM, one row of pixels per line.
pub fn pgm_string(map: &SnrMap, clamp: &SnrClamp) -> String {
    let mut out = format!("P2\n{} {}\n255\n", map.width, map.height);
    for row in map.values.chunks(map.width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| quantize(v, clamp).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn export_pgm(map: &SnrMap, clamp: &SnrClamp, path: &Path) -> Result<()> {
    write_atomic(path, pgm_string(map, clamp).as_bytes())
}

/// Row-major grid CSV: one line per map row, six decimals per cell.
pub fn map_csv_string(map: &SnrMap) -> String {
    let mut out = String::new();
    for row in map.values.chunks(map.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn export_map_csv(map: &SnrMap, path: &Path) -> Result<()> {
    write_atomic(path, map_csv_string(map).as_bytes())
}

pub fn measurements_csv_string(ms: &MeasurementSet) -> String {
    let mut out = String::from("cell_x,cell_y,order_index,value_db\n");
    for (k, (cell, v)) in ms.observations().enumerate() {
        writeln!(
            out,
            "{},{},{},{:.6}",
            cell % ms.width,
            cell / ms.width,
            k,
            v
        )
        .unwrap();
    }
    out
}

pub fn export_measurements_csv(ms: &MeasurementSet, path: &Path) -> Result<()> {
    write_atomic(path, measurements_csv_string(ms).as_bytes())
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v as i64)
    }
}

impl From<i64> for Field {
    fn from(v: i64) -> Self {
        Field::Int(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl Field {
    pub fn render(&self) -> String {
        match self {
            Field::Float(v) => format!("{v:.6}"),
            Field::Int(v) => v.to_string(),
            Field::Text(s) => csv_quote(s),
        }
    }
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_line(fields: &[Field]) -> String {
    let mut line = fields
        .iter()
        .map(Field::render)
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

pub fn csv_header(columns: &[&str]) -> String {
    let mut line = columns
        .iter()
        .map(|c| csv_quote(c))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// Append-only metrics CSV; the header goes in with the first row.
#[derive(Debug, Clone)]
pub struct MetricsCsv {
    path: PathBuf,
    columns: Vec<String>,
}

impl MetricsCsv {
    pub fn new(path: impl Into<PathBuf>, columns: &[&str]) -> Self {
        Self {
            path: path.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, row: &[Field]) -> Result<()> {
        append_metrics(
            &self.path,
            &self.columns.iter().map(String::as_str).collect::<Vec<_>>(),
            row,
        )
    }
}

/// Appends `row` to the CSV at `path`, writing `columns` first if the file is new or empty.
pub fn append_metrics(path: &Path, columns: &[&str], row: &[Field]) -> Result<()> {
    if columns.len() != row.len() {
        return Err(contract_err(format!(
            "row has {} fields, header has {}",
            row.len(),
            columns.len()
        )));
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(&csv_header(columns));
    }
    buf.push_str(&csv_line(row));
    f.write_all(buf.as_bytes())?;
    Ok(())
}

//! CSV ingestion and export: `cell_id,timestamp,<channel>...`, hourly ISO-8601 timestamps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{Channel, TimeSeries};
use crate::error::{Error, Result};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Name of the prediction target column.
    pub output_channel: String,
    /// Gaps of up to this many missing hours are linearly interpolated.
    /// Longer gaps split the series.
    pub max_impute_gap: usize,
    pub impute: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            output_channel: "dl_volume".into(),
            max_impute_gap: 2,
            impute: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub cells: usize,
    pub series: usize,
    pub imputed_rows: usize,
    pub dropped_rows: usize,
    /// Gaps too long to impute; each one starts a new series for its cell.
    pub splits: usize,
}

fn parse_hour(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| {
            // Hour-only form, e.g. 2024-01-01T05.
            NaiveDateTime::parse_from_str(&format!("{raw}:00"), "%Y-%m-%dT%H:%M").ok()
        })
}

/// Formats an absolute hour index as an ISO-8601 timestamp.
pub fn format_hour(hour: i64) -> String {
    DateTime::from_timestamp(hour * 3600, 0)
        .map(|dt| dt.naive_utc().format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_default()
}

struct Row {
    line: u64,
    hour: i64,
    values: Vec<f64>,
}

/// Reads a CSV into one [`TimeSeries`] per cell (more if long gaps split a
/// cell). `schema` restricts the loaded channels; `None` loads all.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: Option<&[String]>,
    options: &IngestOptions,
) -> Result<(Vec<TimeSeries>, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 3 || &header[0] != "cell_id" || &header[1] != "timestamp" {
        return Err(Error::Csv {
            line: 1,
            message: "header must be `cell_id,timestamp,<channel>...`".into(),
        });
    }
    let available: Vec<&str> = header.iter().skip(2).collect();
    let wanted: Vec<String> = match schema {
        Some(s) => s.to_vec(),
        None => available.iter().map(|s| s.to_string()).collect(),
    };
    let columns: Vec<usize> = wanted
        .iter()
        .map(|w| {
            available
                .iter()
                .position(|a| a == w)
                .map(|p| p + 2)
                .ok_or_else(|| Error::MissingChannel(format!("column `{w}` absent from {}", path.display())))
        })
        .collect::<Result<_>>()?;
    if !wanted.contains(&options.output_channel) {
        return Err(Error::MissingChannel(format!(
            "output channel `{}` absent",
            options.output_channel
        )));
    }

    let mut by_cell: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut report = IngestReport::default();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::Csv { line, message };
        if record.len() != header.len() {
            return Err(malformed(format!(
                "expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let ts = parse_hour(&record[1])
            .ok_or_else(|| malformed(format!("unparseable timestamp `{}`", &record[1])))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(Error::Cadence {
                cell: record[0].to_string(),
                message: format!("line {line}: timestamp `{}` is not on the hour", &record[1]),
            });
        }
        let values = columns
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(format!("bad value `{}` in column `{}`", &record[c], &header[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        report.rows += 1;
        by_cell.entry(record[0].to_string()).or_default().push(Row {
            line,
            hour: ts.and_utc().timestamp().div_euclid(3600),
            values,
        });
    }

    let mut out = Vec::new();
    report.cells = by_cell.len();
    for (cell, mut rows) in by_cell {
        rows.sort_by_key(|r| (r.hour, r.line));
        if let Some(w) = rows.windows(2).find(|w| w[0].hour == w[1].hour) {
            return Err(Error::Csv {
                line: w[1].line,
                message: format!(
                    "duplicate timestamp for cell `{cell}` (first seen on line {})",
                    w[0].line
                ),
            });
        }
        let mut pieces: Vec<(i64, Vec<Vec<f64>>)> = Vec::new();
        let mut current: Vec<Vec<f64>> = Vec::new();
        let mut start = rows[0].hour;
        let mut prev: Option<&Row> = None;
        for row in &rows {
            if let Some(p) = prev {
                let missing = (row.hour - p.hour - 1) as usize;
                if missing > 0 && options.impute && missing <= options.max_impute_gap {
                    for k in 1..=missing {
                        let frac = k as f64 / (missing + 1) as f64;
                        current.push(
                            p.values
                                .iter()
                                .zip(&row.values)
                                .map(|(a, b)| a + (b - a) * frac)
                                .collect(),
                        );
                    }
                    report.imputed_rows += missing;
                } else if missing > 0 {
                    warn!(cell = %cell, missing, "gap too long to impute; splitting series");
                    report.splits += 1;
                    pieces.push((start, std::mem::take(&mut current)));
                    start = row.hour;
                }
            }
            current.push(row.values.clone());
            prev = Some(row);
        }
        pieces.push((start, current));

        for (start, rows) in pieces {
            let channels = wanted
                .iter()
                .enumerate()
                .map(|(k, name)| Channel {
                    name: name.clone(),
                    values: rows.iter().map(|r| r[k]).collect(),
                })
                .collect();
            out.push(TimeSeries::new(
                cell.clone(),
                start,
                channels,
                options.output_channel.clone(),
            )?);
        }
    }
    report.series = out.len();
    info!(
        rows = report.rows,
        cells = report.cells,
        imputed = report.imputed_rows,
        splits = report.splits,
        "ingested {}",
        path.display()
    );
    Ok((out, report))
}

/// Writes series in the ingestion schema. All series must share channel names.
pub fn write_csv(path: impl AsRef<Path>, series: &[TimeSeries]) -> Result<()> {
    let path = path.as_ref();
    let Some(first) = series.first() else {
        return Err(Error::EmptyInput("series to write"));
    };
    let names: Vec<&str> = first.channel_names().collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "cell_id,timestamp,{}", names.join(",")).map_err(io)?;
    for s in series {
        let cols = names
            .iter()
            .map(|n| {
                s.channel(n)
                    .ok_or_else(|| Error::MissingChannel(format!("channel `{n}` absent in cell {}", s.cell_id())))
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..s.len() {
            write!(w, "{},{}", s.cell_id(), format_hour(s.time_at(i))).map_err(io)?;
            for c in &cols {
                write!(w, ",{}", c[i]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, StudyReport, Summary, SummaryRow};
use crate::grid::Cell;
use crate::sim::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!(
                "unknown report format '{other}', expected json or csv"
            )),
        }
    }
}

pub const CSV_COLUMNS: [&str; 18] = [
    "cell_x",
    "cell_y",
    "mode",
    "n",
    "response_mean",
    "response_median",
    "response_q1",
    "response_q3",
    "response_min",
    "response_max",
    "grab_mean",
    "grab_median",
    "grab_q1",
    "grab_q3",
    "grab_min",
    "grab_max",
    "error_grids_mean",
    "preempts_mean",
];

/// One summary row as read back from CSV.
pub type CsvRow = SummaryRow;

fn push_summary(out: &mut String, s: &Summary) {
    for v in [s.mean, s.median, s.q1, s.q3, s.min, s.max] {
        write!(out, ",{v}").expect("string write");
    }
}

/// Per-cell, per-mode summary table. Floats use the shortest representation
/// that parses back to the same value.
pub fn report_csv(report: &StudyReport) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in &report.rows {
        write!(
            out,
            "{},{},{},{}",
            r.cell.x,
            r.cell.y,
            r.mode.as_str(),
            r.response_time.n
        )
        .expect("string write");
        push_summary(&mut out, &r.response_time);
        push_summary(&mut out, &r.start_to_grab);
        match r.mean_error_grids {
            Some(e) => write!(out, ",{e}"),
            None => write!(out, ","),
        }
        .expect("string write");
        writeln!(out, ",{}", r.mean_preempts).expect("string write");
    }
    out
}

pub fn read_report_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Csv("missing header".into()))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(HarnessError::Csv(format!("unexpected header '{header}'")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| HarnessError::Csv(format!("row {}: {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != CSV_COLUMNS.len() {
                return Err(bad("wrong field count"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[k]));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(CSV_COLUMNS[k]));
            let n = int(3)?;
            let summary = |o: usize| -> Result<Summary, HarnessError> {
                Ok(Summary {
                    n,
                    mean: num(o)?,
                    median: num(o + 1)?,
                    q1: num(o + 2)?,
                    q3: num(o + 3)?,
                    min: num(o + 4)?,
                    max: num(o + 5)?,
                })
            };
            Ok(SummaryRow {
                cell: Cell::new(int(0)?, int(1)?),
                mode: f[2].parse::<Mode>().map_err(|_| bad("mode"))?,
                response_time: summary(4)?,
                start_to_grab: summary(10)?,
                mean_error_grids: if f[16].is_empty() {
                    None
                } else {
                    Some(num(16)?)
                },
                mean_preempts: num(17)?,
            })
        })
        .collect()
}

pub fn export_report(
    report: &StudyReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("reports serialize") + "\n"
        }
        ReportFormat::Csv => report_csv(report),
    };
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

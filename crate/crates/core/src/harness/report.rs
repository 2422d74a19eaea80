//! Report tables: one row per method and masking kind.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{MaskingKind, Method};
use super::HarnessError;
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub masking: MaskingKind,
    pub metrics: MetricsReport,
}

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "masking",
    "mae_bps",
    "rmse_bps",
    "mae_pct",
    "rmse_pct",
    "mono_violation_pct",
    "n_surfaces",
    "n_cells",
];

fn two(v: f64) -> String {
    format!("{v:.2}")
}

fn opt_two(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), two)
}

/// Sorts rows by method, then masking kind.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by_key(|r| (r.method, r.masking));
}

pub fn write_report_csv(rows: &[ReportRow], writer: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.method.name().to_string(),
            r.masking.name().to_string(),
            two(m.mae_bps),
            two(m.rmse_bps),
            opt_two(m.mae_pct),
            opt_two(m.rmse_pct),
            two(m.mono_violation_pct),
            m.n_surfaces.to_string(),
            m.n_cells.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn report_csv_string(rows: &[ReportRow]) -> String {
    let mut buf = Vec::new();
    write_report_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}

/// Markdown tables in the layout of the published comparison: errors per
/// masking kind, then monotonicity violations.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut kinds: Vec<MaskingKind> = rows.iter().map(|r| r.masking).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = String::new();
    for kind in &kinds {
        out.push_str(&format!("## Test set performance, {kind} masking\n\n"));
        out.push_str(
            "| Method | MAE (bps) | RMSE (bps) | MAE (%) | RMSE (%) |\n|---|---:|---:|---:|---:|\n",
        );
        for r in rows.iter().filter(|r| r.masking == *kind) {
            let m = &r.metrics;
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.method,
                two(m.mae_bps),
                two(m.rmse_bps),
                opt_two(m.mae_pct),
                opt_two(m.rmse_pct)
            ));
        }
        out.push('\n');
    }
    out.push_str("## Monotonicity violations along rating (%)\n\n| Method |");
    for kind in &kinds {
        out.push_str(&format!(" {kind} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(kinds.len()));
    out.push('\n');
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    for m in methods {
        out.push_str(&format!("| {m} |"));
        for kind in &kinds {
            let cell = rows
                .iter()
                .find(|r| r.method == m && r.masking == *kind)
                .map_or_else(|| "".to_string(), |r| two(r.metrics.mono_violation_pct));
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

/// Parses a report CSV back into `(method, masking, values)` records.
pub fn read_report_csv(text: &str) -> Result<Vec<(String, String, Vec<String>)>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        if cells.len() != CSV_HEADER.len() {
            return Err(HarnessError::Config(format!(
                "report row has {} fields",
                cells.len()
            )));
        }
        out.push((cells[0].clone(), cells[1].clone(), cells[2..].to_vec()));
    }
    Ok(out)
}

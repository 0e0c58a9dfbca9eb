use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One target variable's scores in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Display label, e.g. `Z500`.
    pub variable: String,
    pub units: String,
    pub acc: f64,
    pub rmse: f64,
}

/// Per-target scores of one evaluation run, rows in display order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lead_time_hours: i64,
    pub split: usize,
    pub samples: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn row(&self, variable: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.variable.eq_ignore_ascii_case(variable))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `variable,acc,rmse,rmse_units` with one row per target.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,acc,rmse,rmse_units\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.variable, r.acc, r.rmse, r.units).expect("string write");
        }
        out
    }
}

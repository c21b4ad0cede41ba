//! CSV and manifest outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{inverse_m_fit, ComparisonRun, ComparisonSeries, TrajectoryTable};
use crate::error::{Error, Result};

pub const SERIES_COLUMNS: [&str; 9] = [
    "t",
    "mean_diff_norm",
    "mean_diff_stderr",
    "opt_cov_trace",
    "opt_cov_stderr",
    "emp_cov_trace",
    "emp_cov_stderr",
    "cov_gap",
    "cov_gap_stderr",
];
pub const THEORY_COLUMNS: [&str; 4] = ["theory_P", "theory_QM", "theory_gap", "theory_bound"];
/// Written in `theory_bound` when the sampling rate is infeasible.
pub const INFEASIBLE_MARKER: &str = "infeasible";

/// 17 significant digits.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Numerical(format!("writing {}: {other:?}", path.display())),
    }
}

fn write_records(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn series_file_name(s: &ComparisonSeries) -> String {
    format!("compare_lambda{}_M{}.csv", s.lambda, s.m)
}

pub fn write_series_csv(path: &Path, s: &ComparisonSeries) -> Result<()> {
    let mut header: Vec<String> = SERIES_COLUMNS.iter().map(|c| c.to_string()).collect();
    if s.theory.is_some() {
        header.extend(THEORY_COLUMNS.iter().map(|c| c.to_string()));
    }
    let rows = (0..s.grid.len()).map(|k| {
        let mut row: Vec<String> = [
            s.grid[k],
            s.mean_diff_norm[k],
            s.mean_diff_stderr[k],
            s.opt_cov_trace[k],
            s.opt_cov_stderr[k],
            s.emp_cov_trace[k],
            s.emp_cov_stderr[k],
            s.cov_gap[k],
            s.cov_gap_stderr[k],
        ]
        .into_iter()
        .map(format_number)
        .collect();
        if let Some(th) = &s.theory {
            row.extend([th.p_cal[k], th.q_cal[k], th.gap[k]].into_iter().map(format_number));
            row.push(th.bound.map_or_else(|| INFEASIBLE_MARKER.to_string(), format_number));
        }
        row
    });
    write_records(path, &header, rows)
}

/// Writes one CSV per series into `dir`; returns the paths in run order.
pub fn write_comparison(dir: &Path, run: &ComparisonRun) -> Result<Vec<PathBuf>> {
    run.series
        .iter()
        .map(|s| {
            let path = dir.join(series_file_name(s));
            write_series_csv(&path, s).map(|_| path)
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, table: &TrajectoryTable) -> Result<()> {
    write_records(path, &table.columns, table.rows.iter().map(|r| r.iter().copied().map(format_number).collect()))
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "lambda",
    "M",
    "terminal_cov_gap",
    "terminal_cov_gap_stderr",
    "inverse_m_fit",
    "fit_zscore",
    "time_avg_mean_diff",
    "time_avg_mean_diff_stderr",
    "theory_gap",
    "theory_bound",
];

/// One row per `(lambda, M)` with terminal gaps and a per-`lambda` `c/M` fit.
pub fn write_sweep_summary(path: &Path, run: &ComparisonRun) -> Result<()> {
    let mut rows = Vec::new();
    let mut lambdas: Vec<f64> = run.series.iter().map(|s| s.lambda).collect();
    lambdas.dedup();
    for lambda in lambdas {
        let group: Vec<&ComparisonSeries> = run.series.iter().filter(|s| s.lambda == lambda).collect();
        let last = |v: &[f64]| *v.last().expect("nonempty series");
        let ms: Vec<usize> = group.iter().map(|s| s.m).collect();
        let gaps: Vec<f64> = group.iter().map(|s| last(&s.cov_gap)).collect();
        let ses: Vec<f64> = group.iter().map(|s| last(&s.cov_gap_stderr)).collect();
        let (c, z) = inverse_m_fit(&ms, &gaps, &ses);
        for (i, s) in group.iter().enumerate() {
            let (gap, bound) = match &s.theory {
                Some(th) => (format_number(last(&th.gap)), th.bound.map_or_else(|| INFEASIBLE_MARKER.to_string(), format_number)),
                None => (String::new(), String::new()),
            };
            rows.push(vec![
                format_number(lambda),
                s.m.to_string(),
                format_number(gaps[i]),
                format_number(ses[i]),
                format_number(c / s.m as f64),
                format_number(z[i]),
                format_number(s.time_avg_mean_diff),
                format_number(s.time_avg_mean_diff_stderr),
                gap,
                bound,
            ]);
        }
    }
    write_records(path, &SWEEP_COLUMNS.map(String::from), rows.into_iter())
}

/// A harness CSV read back into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub columns: Vec<String>,
    /// Column-major numeric values; the infeasible marker reads as `NaN`.
    pub values: Vec<Vec<f64>>,
    pub bound_infeasible: bool,
}

impl SeriesTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.values[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_series_csv(path: &Path) -> Result<SeriesTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(&bytes, &path.display().to_string())
}

/// Parses and validates a comparison CSV: exact header, equal row lengths,
/// finite numbers, increasing `t`.
pub fn parse_series_csv(bytes: &[u8], origin: &str) -> Result<SeriesTable> {
    let err = |line: usize, message: String| Error::Parse { path: origin.to_string(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let base: Vec<&str> = SERIES_COLUMNS.to_vec();
    let full: Vec<&str> = SERIES_COLUMNS.iter().chain(&THEORY_COLUMNS).copied().collect();
    if header != base && header != full {
        return Err(err(1, format!("unexpected header `{}`", header.join(","))));
    }
    let mut values = vec![Vec::new(); header.len()];
    let mut infeasible = None;
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let x = if header[j] == "theory_bound" && field == INFEASIBLE_MARKER {
                if infeasible == Some(false) {
                    return Err(err(line, "theory_bound mixes numbers and the infeasible marker".into()));
                }
                infeasible = Some(true);
                f64::NAN
            } else {
                let x: f64 = field.parse().map_err(|_| err(line, format!("column `{}`: `{field}` is not a number", header[j])))?;
                if !x.is_finite() {
                    return Err(err(line, format!("column `{}` is not finite", header[j])));
                }
                if header[j] == "theory_bound" {
                    if infeasible == Some(true) {
                        return Err(err(line, "theory_bound mixes numbers and the infeasible marker".into()));
                    }
                    infeasible = Some(false);
                }
                x
            };
            values[j].push(x);
        }
        let t = &values[0];
        if t.len() >= 2 && t[t.len() - 1] <= t[t.len() - 2] {
            return Err(err(line, "t must be strictly increasing".into()));
        }
    }
    Ok(SeriesTable { columns: header, values, bound_infeasible: infeasible == Some(true) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lambda: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub successes: usize,
    pub failures: usize,
}

/// Structured record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub code_version: String,
    /// The fully explicit config text.
    pub config: String,
    pub master_seed: u64,
    pub n_realizations: usize,
    pub aggregate: bool,
    pub bessel_correction: bool,
    pub runs: Vec<RunRecord>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, cfg: &ExperimentConfig, run: Option<&ComparisonRun>, outputs: &[PathBuf], wall: f64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.to_toml(),
            master_seed: cfg.master_seed,
            n_realizations: cfg.n_realizations,
            aggregate: cfg.aggregate,
            bessel_correction: cfg.bessel_correction,
            runs: run
                .map(|r| {
                    r.series
                        .iter()
                        .map(|s| RunRecord { lambda: s.lambda, m: s.m, successes: s.successes, failures: s.failures })
                        .collect()
                })
                .unwrap_or_default(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_time_seconds: wall,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), message: e.to_string() })
    }
}

//! Run artifacts: comma-separated time series, the comparison report, and
//! the machine-readable manifest.
//!
//! Everything written here is a pure function of the resolved
//! configuration — no wall-clock times, no environment — which is what
//! makes a re-run byte-identical and lets the series files double as
//! regression fixtures.

use crate::config::{Pipeline, ResolvedConfig};
use macrostate::Trajectory;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// One row per grid time: the time, the multipliers, the expectations, and
/// the macrostate entropy, at full double precision (17 significant
/// digits) for lossless round-trips.
pub fn write_series(path: &Path, traj: &Trajectory) -> Result<(), String> {
    let mut out = String::new();
    out.push_str("time");
    for label in &traj.labels {
        out.push_str(",zeta_");
        out.push_str(label);
    }
    for label in &traj.labels {
        out.push_str(",expect_");
        out.push_str(label);
    }
    out.push_str(",entropy\n");
    let n_ops = traj.labels.len();
    for (k, &t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for j in 0..n_ops {
            out.push_str(&format!(",{:.16e}", traj.zeta[[k, j]]));
        }
        for j in 0..n_ops {
            out.push_str(&format!(",{:.16e}", traj.expectations[[k, j]]));
        }
        out.push_str(&format!(",{:.16e}\n", traj.entropy[k]));
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    file.write_all(bytes)
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// A parsed series file: the header labels and one column of values per
/// label.
pub struct Series {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Series {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_series(path: &Path) -> Result<Series, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read series {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(format!(
                "{} line {}: {} fields, header has {}",
                path.display(),
                lineno + 2,
                fields.len(),
                header.len()
            ));
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                format!(
                    "{} line {}: `{field}` is not a number",
                    path.display(),
                    lineno + 2
                )
            })?;
            columns[j].push(v);
        }
    }
    Ok(Series { header, columns })
}

/// Largest and mean absolute difference of one shared column.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnDeviation {
    pub column: String,
    pub max: f64,
    pub mean: f64,
}

/// Column-wise deviations between two series with identical shape.
pub fn compare_series(a: &Series, b: &Series) -> Result<Vec<ColumnDeviation>, String> {
    if a.header != b.header {
        let difference = a
            .header
            .iter()
            .zip(&b.header)
            .find(|(x, y)| x != y)
            .map(|(x, y)| format!("`{x}` vs `{y}`"))
            .unwrap_or_else(|| format!("{} vs {} columns", a.header.len(), b.header.len()));
        return Err(format!("headers differ: {difference}"));
    }
    if a.rows() != b.rows() {
        return Err(format!("row counts differ: {} vs {}", a.rows(), b.rows()));
    }
    Ok(a.header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut worst, mut total) = (0.0f64, 0.0f64);
            for (x, y) in a.columns[j].iter().zip(&b.columns[j]) {
                let d = (x - y).abs();
                worst = worst.max(d);
                total += d;
            }
            ColumnDeviation {
                column: name.clone(),
                max: worst,
                mean: total / a.rows().max(1) as f64,
            }
        })
        .collect())
}

/// Expectation deviations between two pipelines over the whole grid.
#[derive(Debug, Clone, Serialize)]
pub struct PairDeviation {
    pub a: String,
    pub b: String,
    /// Largest deviation over all expectation columns and grid times.
    pub max: f64,
    pub per_column: Vec<ColumnDeviation>,
}

/// Expectation-only deviation table for two trajectories on one grid.
pub fn pair_deviation(pa: Pipeline, ta: &Trajectory, pb: Pipeline, tb: &Trajectory) -> PairDeviation {
    let mut per_column = Vec::with_capacity(ta.labels.len());
    let mut overall = 0.0f64;
    let rows = ta.times.len();
    for (j, label) in ta.labels.iter().enumerate() {
        let (mut worst, mut total) = (0.0f64, 0.0f64);
        for k in 0..rows {
            let d = (ta.expectations[[k, j]] - tb.expectations[[k, j]]).abs();
            worst = worst.max(d);
            total += d;
        }
        overall = overall.max(worst);
        per_column.push(ColumnDeviation {
            column: label.clone(),
            max: worst,
            mean: total / rows as f64,
        });
    }
    PairDeviation {
        a: pa.name().to_string(),
        b: pb.name().to_string(),
        max: overall,
        per_column,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySummary {
    /// Pipeline whose trajectory the summary tabulates.
    pub source: String,
    /// Requested comparison lag.
    pub tau: f64,
    /// Lag actually used, in grid steps and in time.
    pub stride: usize,
    pub effective_tau: f64,
    /// `S(t0 + tau) - S(t0)`; non-negative for projections of one exact
    /// evolution from a Gibbs start.
    pub first_step: f64,
    pub min_step: f64,
    /// Steps more negative than the drift tolerance.
    pub negative_steps: usize,
    /// Entropy of the conserved-totals equilibrium.
    pub equilibrium_entropy: f64,
    /// Smallest `S_eq - S(t)` over the grid.
    pub min_equilibrium_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauModeSummary {
    pub label: String,
    /// First lag where the normalized autocorrelation drops below `1/e`.
    pub crossing: Option<f64>,
    /// First later lag where it climbs back above 0.9.
    pub recurrence: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauSummary {
    pub no_driven_modes: bool,
    pub per_mode: Vec<TauModeSummary>,
    /// Slowest crossing over the driven modes, when all of them crossed.
    pub tau_est: Option<f64>,
    pub recurrence: Option<f64>,
    /// A crossing exists and no recurrence undercuts it.
    pub certified: bool,
}

impl From<&macrostate::TauEstimate> for TauSummary {
    fn from(est: &macrostate::TauEstimate) -> Self {
        TauSummary {
            no_driven_modes: est.no_driven_modes(),
            per_mode: est
                .per_mode
                .iter()
                .map(|m| TauModeSummary {
                    label: m.label.clone(),
                    crossing: m.crossing,
                    recurrence: m.recurrence,
                })
                .collect(),
            tau_est: est.tau_est,
            recurrence: est.recurrence,
            certified: est.certified,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
}

/// The cross-pipeline comparison written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub grid: GridSummary,
    pub pipelines: Vec<String>,
    pub deviations: Vec<PairDeviation>,
    /// Absent when the grid is too short for even one entropy stride.
    pub entropy: Option<EntropySummary>,
    pub correlation_time: TauSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesEntry {
    pub pipeline: String,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStatus {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_pipeline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Trajectory time at the failure, when the error reports one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_time: Option<f64>,
}

impl RunStatus {
    pub fn ok() -> Self {
        RunStatus {
            ok: true,
            failed_pipeline: None,
            error: None,
            failed_time: None,
        }
    }
}

/// The machine-readable record of what this run actually did: the fully
/// resolved configuration, which values came from defaults, the overrides
/// applied on top, the files written, and how the run ended.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_path: String,
    pub resolved: ResolvedConfig,
    pub defaults_applied: Vec<String>,
    pub overrides: Vec<String>,
    pub series: Vec<SeriesEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_file: Option<String>,
    pub status: RunStatus,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

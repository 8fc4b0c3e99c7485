//! File formats: long-format CSV inputs, the JSON model document, simulation
//! reports, and plot-data CSVs.
//!
//! Curves: header `i,t,s,x`, one row per unit, period and grid point.
//! Scalars: header `i,t,y,z1,...,zP`, one row per unit and period.
//! Unit and period labels are 1-based and must be dense.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierMethod, RegimePartition};
use crate::error::{Error, Result};
use crate::fpca::Grid;
use crate::panel::Panel;
use crate::pipeline::{fit_pipeline, EstimatorConfig, PipelineFit};
use crate::sim::{dgp_scenario, run_monte_carlo, SimConfig, SimReport};

/// Version written into every JSON document; readers accept the same major.
pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: u32 = 1;

fn data_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_index(path: &Path, record: &csv::StringRecord, col: usize, name: &str) -> Result<usize> {
    let raw = record.get(col).unwrap_or("");
    match raw.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(data_error(
            path,
            line_of(record),
            format!("column '{name}': expected a positive integer, got '{raw}'"),
        )),
    }
}

fn parse_value(path: &Path, record: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
    let raw = record.get(col).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(data_error(
            path,
            line_of(record),
            format!("column '{name}': expected a finite number, got '{raw}'"),
        )),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    data_error(path, line, err.to_string())
}

/// Curve panel read from a long-format CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub grid: Grid,
    /// One `n × L` block per period.
    pub curves: Vec<DMatrix<f64>>,
}

impl CurveData {
    pub fn n_units(&self) -> usize {
        self.curves.first().map_or(0, DMatrix::nrows)
    }

    pub fn n_periods(&self) -> usize {
        self.curves.len()
    }
}

/// Reads curves in `i,t,s,x` format. Every `(i, t)` must supply the same
/// set of grid points.
pub fn load_curves_csv(path: &Path) -> Result<CurveData> {
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["i", "t", "s", "x"] {
        return Err(data_error(path, 1, format!("expected header i,t,s,x, got {}", header.join(","))));
    }
    // (i, t) -> (first line, [(s, x)])
    let mut cells: BTreeMap<(usize, usize), (usize, Vec<(f64, f64)>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let i = parse_index(path, &record, 0, "i")?;
        let t = parse_index(path, &record, 1, "t")?;
        let s = parse_value(path, &record, 2, "s")?;
        let x = parse_value(path, &record, 3, "x")?;
        let line = line_of(&record);
        cells.entry((i, t)).or_insert_with(|| (line, Vec::new())).1.push((s, x));
    }
    if cells.is_empty() {
        return Err(data_error(path, 1, "no data rows"));
    }
    let n = cells.keys().map(|k| k.0).max().unwrap_or(0);
    let periods = cells.keys().map(|k| k.1).max().unwrap_or(0);
    for t in 1..=periods {
        for i in 1..=n {
            if !cells.contains_key(&(i, t)) {
                return Err(data_error(path, 0, format!("missing cell (i={i}, t={t})")));
            }
        }
    }
    for ((i, t), (line, values)) in cells.iter_mut() {
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        if values.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(data_error(path, *line, format!("duplicate grid point for (i={i}, t={t})")));
        }
    }
    let (first_line, reference) = &cells[&(1, 1)];
    let points: Vec<f64> = reference.iter().map(|v| v.0).collect();
    for ((i, t), (line, values)) in &cells {
        let same = values.len() == points.len() && values.iter().zip(&points).all(|(v, p)| v.0 == *p);
        if !same {
            return Err(data_error(
                path,
                *line,
                format!("grid of (i={i}, t={t}) differs from the grid of (i=1, t=1)"),
            ));
        }
    }
    let grid = Grid::new(points).map_err(|e| data_error(path, *first_line, e.to_string()))?;
    let l = grid.len();
    let curves = (1..=periods)
        .map(|t| DMatrix::from_fn(n, l, |row, col| cells[&(row + 1, t)].1[col].1))
        .collect();
    Ok(CurveData { grid, curves })
}

/// Responses and covariates read from `i,t,y,z1,...,zP`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarData {
    pub y: Vec<DVector<f64>>,
    /// One `n × P` block per period.
    pub z: Vec<DMatrix<f64>>,
}

impl ScalarData {
    pub fn n_units(&self) -> usize {
        self.y.first().map_or(0, DVector::len)
    }

    pub fn n_periods(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.z.first().map_or(0, DMatrix::ncols)
    }
}

pub fn load_scalars_csv(path: &Path) -> Result<ScalarData> {
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = header.len().saturating_sub(3);
    let expected: Vec<String> = ["i", "t", "y"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=p).map(|k| format!("z{k}")))
        .collect();
    if header.len() < 3 || header != expected {
        return Err(data_error(
            path,
            1,
            format!("expected header {}, got {}", expected.join(","), header.join(",")),
        ));
    }
    let mut cells: BTreeMap<(usize, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let i = parse_index(path, &record, 0, "i")?;
        let t = parse_index(path, &record, 1, "t")?;
        let y = parse_value(path, &record, 2, "y")?;
        let z = (0..p)
            .map(|k| parse_value(path, &record, 3 + k, &expected[3 + k]))
            .collect::<Result<Vec<_>>>()?;
        if cells.insert((i, t), (y, z)).is_some() {
            return Err(data_error(path, line_of(&record), format!("duplicate row for (i={i}, t={t})")));
        }
    }
    if cells.is_empty() {
        return Err(data_error(path, 1, "no data rows"));
    }
    let n = cells.keys().map(|k| k.0).max().unwrap_or(0);
    let periods = cells.keys().map(|k| k.1).max().unwrap_or(0);
    for t in 1..=periods {
        for i in 1..=n {
            if !cells.contains_key(&(i, t)) {
                return Err(data_error(path, 0, format!("missing cell (i={i}, t={t})")));
            }
        }
    }
    let y = (1..=periods)
        .map(|t| DVector::from_fn(n, |row, _| cells[&(row + 1, t)].0))
        .collect();
    let z = (1..=periods)
        .map(|t| DMatrix::from_fn(n, p, |row, k| cells[&(row + 1, t)].1[k]))
        .collect();
    Ok(ScalarData { y, z })
}

/// Loads and cross-checks both files.
pub fn load_panel(curves_path: &Path, scalars_path: &Path) -> Result<Panel> {
    let curves = load_curves_csv(curves_path)?;
    let scalars = load_scalars_csv(scalars_path)?;
    if curves.n_units() != scalars.n_units() || curves.n_periods() != scalars.n_periods() {
        return Err(data_error(
            scalars_path,
            0,
            format!(
                "dimension mismatch: curves have n={} T={}, scalars have n={} T={}",
                curves.n_units(),
                curves.n_periods(),
                scalars.n_units(),
                scalars.n_periods()
            ),
        ));
    }
    Panel::new(curves.grid, curves.curves, scalars.y, scalars.z)
}

/// Writes the panel's curves in `i,t,s,x` format.
pub fn write_curves_csv(panel: &Panel, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "i,t,s,x")?;
    let points = panel.grid().points();
    for t in 0..panel.n_periods() {
        let x = panel.curves(t);
        for i in 0..panel.n_units() {
            for (l, s) in points.iter().enumerate() {
                writeln!(out, "{},{},{},{}", i + 1, t + 1, s, x[(i, l)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes responses and covariates in `i,t,y,z1,...,zP` format.
pub fn write_scalars_csv(panel: &Panel, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let p = panel.n_covariates();
    let mut header = String::from("i,t,y");
    for k in 1..=p {
        header.push_str(&format!(",z{k}"));
    }
    writeln!(out, "{header}")?;
    for t in 0..panel.n_periods() {
        let (y, z) = (panel.response(t), panel.covariates(t));
        for i in 0..panel.n_units() {
            write!(out, "{},{},{}", i + 1, t + 1, y[i])?;
            for k in 0..p {
                write!(out, ",{}", z[(i, k)])?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    /// 1-based period label.
    pub t: usize,
    pub m: usize,
    pub beta_hat: Vec<f64>,
    pub sigma_eps: f64,
    pub alpha_hat: Vec<f64>,
    pub alpha_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub method: ClassifierMethod,
    pub tau: Option<f64>,
    pub k_max: usize,
    /// 1-based period labels per regime.
    pub regimes: Vec<Vec<usize>>,
}

impl PartitionRecord {
    pub fn from_partition(p: &RegimePartition) -> PartitionRecord {
        PartitionRecord {
            method: p.method,
            tau: p.tau,
            k_max: p.k_max,
            regimes: p.regimes.iter().map(|r| r.iter().map(|t| t + 1).collect()).collect(),
        }
    }

    pub fn to_partition(&self) -> Result<RegimePartition> {
        let periods = self.regimes.iter().map(Vec::len).sum();
        let regimes = self
            .regimes
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&t| {
                        t.checked_sub(1)
                            .ok_or_else(|| Error::InvalidArgument("period labels are 1-based".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        RegimePartition::new(regimes, periods, self.method, self.tau, self.k_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecord {
    /// 1-based regime label.
    pub k: usize,
    pub members: Vec<usize>,
    pub m: usize,
    pub slope: Vec<f64>,
}

/// Persisted result of a full fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: String,
    pub library_version: String,
    pub config: EstimatorConfig,
    pub grid: Vec<f64>,
    pub m_lower: usize,
    pub periods: Vec<PeriodRecord>,
    pub partition: PartitionRecord,
    pub regimes: Vec<RegimeRecord>,
}

impl ModelDocument {
    pub fn from_fit(fit: &PipelineFit, grid: &Grid, config: &EstimatorConfig) -> ModelDocument {
        ModelDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            grid: grid.points().to_vec(),
            m_lower: fit.step1.m_lower,
            periods: fit
                .step1
                .fits
                .iter()
                .map(|f| PeriodRecord {
                    t: f.t + 1,
                    m: f.m,
                    beta_hat: f.beta_hat.clone(),
                    sigma_eps: f.sigma_eps,
                    alpha_hat: f.alpha_hat.clone(),
                    alpha_delta: f.alpha_delta.clone(),
                })
                .collect(),
            partition: PartitionRecord::from_partition(&fit.partition),
            regimes: fit
                .regimes
                .regimes
                .iter()
                .enumerate()
                .map(|(k, r)| RegimeRecord {
                    k: k + 1,
                    members: r.members.iter().map(|t| t + 1).collect(),
                    m: r.m,
                    slope: r.slope.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<ModelDocument> {
        from_json(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<ModelDocument> {
        ModelDocument::from_json(&fs::read_to_string(path)?)
    }

    /// Writes `u,value` CSVs for every scaled period slope and pooled regime
    /// slope into `dir`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write_curve = |name: String, values: &[f64]| -> Result<()> {
            let mut out = BufWriter::new(File::create(dir.join(name))?);
            writeln!(out, "u,value")?;
            for (u, v) in self.grid.iter().zip(values) {
                writeln!(out, "{u},{v}")?;
            }
            out.flush()?;
            Ok(())
        };
        for p in &self.periods {
            write_curve(format!("alpha_delta_t{:04}.csv", p.t), &p.alpha_delta)?;
        }
        for r in &self.regimes {
            write_curve(format!("regime_slope_k{:02}.csv", r.k), &r.slope)?;
        }
        Ok(())
    }
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<SimReport> {
        from_json(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<SimReport> {
        SimReport::from_json(&fs::read_to_string(path)?)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::SchemaVersion {
            found: "<missing>".into(),
            supported: SCHEMA_MAJOR,
        })?;
    let major = version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(SCHEMA_MAJOR) {
        return Err(Error::SchemaVersion {
            found: version.to_string(),
            supported: SCHEMA_MAJOR,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Fits the full model to panel files, writes the model document and,
/// optionally, plot data.
pub fn fit_files(
    curves: &Path,
    scalars: &Path,
    config: &EstimatorConfig,
    out: &Path,
    plot_dir: Option<&Path>,
) -> Result<ModelDocument> {
    let panel = load_panel(curves, scalars)?;
    let fit = fit_pipeline(&panel, config)?;
    let doc = ModelDocument::from_fit(&fit, panel.grid(), config);
    doc.write(out)?;
    if let Some(dir) = plot_dir {
        doc.write_plot_data(dir)?;
    }
    Ok(doc)
}

/// File names used when dumping replication `rep`.
pub fn dump_file_names(rep: usize) -> (String, String) {
    (format!("rep{rep:04}_curves.csv"), format!("rep{rep:04}_scalars.csv"))
}

/// Runs a Monte Carlo study, writes the report and, optionally, every
/// replication's panel as CSV files.
pub fn simulate_to_file(config: &SimConfig, out: &Path, dump_dir: Option<&Path>) -> Result<SimReport> {
    let report = run_monte_carlo(config)?;
    report.write(out)?;
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir)?;
        for rep in 0..config.reps {
            let (panel, _) = dgp_scenario(config, rep)?;
            let (c, s) = dump_file_names(rep);
            write_curves_csv(&panel, &dir.join(c))?;
            write_scalars_csv(&panel, &dir.join(s))?;
        }
    }
    Ok(report)
}

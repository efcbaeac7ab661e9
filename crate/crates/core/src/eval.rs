//! Forecast evaluation: RMSFE ratios against a benchmark, Diebold-Mariano
//! tests with the small-sample correction, box-plot summaries across
//! variables, persistence groupings and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{TimeSeriesPanel, YearMonth};
use crate::error::{Error, Result};
use crate::harness::{group_records, ForecastRecord};
use crate::numerics::{partial_autocorr_lag1, quantile_sorted, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionKey {
    Origin,
    Target,
}

/// Target-date window `[start, end]` with optionally excluded months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub label: String,
    pub start: YearMonth,
    pub end: YearMonth,
    pub excluded: Vec<YearMonth>,
    pub exclusion_key: ExclusionKey,
}

fn ym(y: i32, m: u32) -> YearMonth {
    YearMonth::new(y, m).expect("valid month")
}

fn covid_onset() -> Vec<YearMonth> {
    (3..=6).map(|m| ym(2020, m)).collect()
}

impl EvalWindow {
    pub fn new(
        label: impl Into<String>,
        start: YearMonth,
        end: YearMonth,
        excluded: Vec<YearMonth>,
        exclusion_key: ExclusionKey,
    ) -> Result<Self> {
        let label = label.into();
        if start >= end {
            return Err(Error::Config(format!("window '{label}' starts at {start}, not before its end {end}")));
        }
        // origin-keyed exclusions may precede the first target by up to a year
        let floor = match exclusion_key {
            ExclusionKey::Origin => start.add_months(-12),
            ExclusionKey::Target => start,
        };
        if let Some(m) = excluded.iter().find(|m| **m < floor || **m > end) {
            return Err(Error::Config(format!("excluded month {m} outside window '{label}'")));
        }
        Ok(EvalWindow {
            label,
            start,
            end,
            excluded,
            exclusion_key,
        })
    }

    /// Targets 1985-01 through 2019-12.
    pub fn pre_covid() -> Self {
        EvalWindow::new("pre_covid", ym(1985, 1), ym(2019, 12), Vec::new(), ExclusionKey::Origin).expect("valid")
    }

    /// Targets 2020-01 through 2022-12; optionally drops forecasts made
    /// March to June 2020.
    pub fn covid(exclude_onset: bool) -> Self {
        let ex = if exclude_onset { covid_onset() } else { Vec::new() };
        EvalWindow::new("covid", ym(2020, 1), ym(2022, 12), ex, ExclusionKey::Origin).expect("valid")
    }

    /// Targets 1985-01 through 2022-12.
    pub fn full_sample(exclude_onset: bool) -> Self {
        let ex = if exclude_onset { covid_onset() } else { Vec::new() };
        EvalWindow::new("full", ym(1985, 1), ym(2022, 12), ex, ExclusionKey::Origin).expect("valid")
    }

    pub fn with_key(mut self, key: ExclusionKey) -> Self {
        self.exclusion_key = key;
        self
    }

    pub fn admits(&self, origin: YearMonth, horizon: u32) -> bool {
        let target = origin.add_months(horizon as i64);
        if target < self.start || target > self.end {
            return false;
        }
        let keyed = match self.exclusion_key {
            ExclusionKey::Origin => origin,
            ExclusionKey::Target => target,
        };
        !self.excluded.contains(&keyed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub variable: String,
    pub horizon: u32,
    pub rmsfe_ratio: f64,
    pub dm_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: u8,
    pub n_obs: usize,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} model errors against {} benchmark errors", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Precondition("no forecast errors to compare".into()));
    }
    Ok(())
}

/// `sqrt(Σ e_model² / Σ e_bmk²)` over aligned errors.
pub fn rmsfe_ratio(e_model: &[f64], e_bmk: &[f64]) -> Result<f64> {
    check_pair(e_model, e_bmk)?;
    let num: f64 = e_model.iter().map(|e| e * e).sum();
    let den: f64 = e_bmk.iter().map(|e| e * e).sum();
    if !(den > 0.0) || !den.is_finite() || !num.is_finite() {
        return Err(Error::Domain("degenerate benchmark: squared errors sum to zero".into()));
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmTest {
    pub stat: f64,
    pub p_value: f64,
}

/// Diebold-Mariano test on squared-error loss. Rectangular kernel with
/// `h-1` lags, autocovariances over `T`, and the Harvey-Leybourne-Newbold
/// correction. Positive statistics mean the model does worse.
pub fn diebold_mariano(e_model: &[f64], e_bmk: &[f64], h: u32) -> Result<DmTest> {
    check_pair(e_model, e_bmk)?;
    if h == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let h = h as usize;
    let t = e_model.len();
    if t < h + 2 {
        return Err(Error::UndefinedStatistic(format!("{t} loss differentials, need at least {}", h + 2)));
    }
    let d: Vec<f64> = e_model.iter().zip(e_bmk).map(|(a, b)| a * a - b * b).collect();
    let tf = t as f64;
    let dbar = d.iter().sum::<f64>() / tf;
    let gamma = |l: usize| (l..t).map(|i| (d[i] - dbar) * (d[i - l] - dbar)).sum::<f64>() / tf;
    let v = gamma(0) + 2.0 * (1..h).map(gamma).sum::<f64>();
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::UndefinedStatistic(format!("long-run variance of the loss differential is {v}")));
    }
    let hf = h as f64;
    let adj = (tf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / tf) / tf;
    if !(adj > 0.0) {
        return Err(Error::UndefinedStatistic(format!("small-sample factor undefined for T = {t}, h = {h}")));
    }
    let stat = adj.sqrt() * dbar / (v / tf).sqrt();
    Ok(DmTest {
        stat,
        p_value: erfc(stat.abs() / std::f64::consts::SQRT_2),
    })
}

/// 3, 2, 1 stars below the 1%, 5%, 10% levels.
pub fn stars(p_value: f64) -> u8 {
    if p_value < 0.01 {
        3
    } else if p_value < 0.05 {
        2
    } else if p_value < 0.10 {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    /// Indices into the input flagged by the 1.5·IQR rule.
    pub outliers: Vec<usize>,
}

/// Box-plot statistics with inclusive quartiles. Min and max include
/// outliers.
pub fn summarize_distribution(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Precondition("no cells to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in distribution".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |v: &f64| *v >= lo && *v <= hi;
    Ok(DistributionSummary {
        n: values.len(),
        median: quantile_sorted(&sorted, 0.5),
        std: sample_std(values),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        q1,
        q3,
        lower_whisker: sorted.iter().cloned().find(inside).unwrap_or(q1),
        upper_whisker: sorted.iter().rev().cloned().find(inside).unwrap_or(q3),
        outliers: (0..values.len()).filter(|&i| !inside(&values[i])).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSplit {
    pub threshold: f64,
    pub low: Vec<String>,
    pub high: Vec<String>,
    /// Lag-one partial autocorrelation per variable; `None` when undefined.
    pub pacf: Vec<(String, Option<f64>)>,
}

/// High persistence means a lag-one partial autocorrelation strictly above
/// the threshold; undefined values go to the low group.
pub fn persistence_split(panel: &TimeSeriesPanel, threshold: f64) -> PersistenceSplit {
    let mut out = PersistenceSplit {
        threshold,
        low: Vec::new(),
        high: Vec::new(),
        pacf: Vec::new(),
    };
    for (j, name) in panel.names().iter().enumerate() {
        let r = match partial_autocorr_lag1(&panel.column(j)) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("persistence of {name} undefined ({e}); placed in the low group");
                None
            }
        };
        match r {
            Some(v) if v > threshold => out.high.push(name.clone()),
            _ => out.low.push(name.clone()),
        }
        out.pacf.push((name.clone(), r));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub window: String,
    pub model: String,
    pub variable: String,
    pub horizon: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub model: String,
    pub variable: String,
    pub horizon: u32,
    pub origin: YearMonth,
    pub forecast: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct WindowEvaluation {
    pub cells: Vec<EvalCell>,
    pub diagnostics: Vec<Diagnostic>,
    pub paths: Vec<PathPoint>,
}

/// Every `(model, variable, horizon)` cell of one window, benchmark
/// included. Cells without overlapping admissible errors are reported as
/// diagnostics rather than errors.
pub fn evaluate_window(
    records: &[ForecastRecord],
    actuals: &TimeSeriesPanel,
    window: &EvalWindow,
    benchmark: &str,
) -> Result<WindowEvaluation> {
    if !records.iter().any(|r| r.model == benchmark) {
        return Err(Error::Config(format!("benchmark model '{benchmark}' has no forecasts")));
    }
    let grouped = group_records(records);
    let mut out = WindowEvaluation::default();
    for ((model, variable, h), series) in &grouped {
        let diag = |message: String| Diagnostic {
            window: window.label.clone(),
            model: model.clone(),
            variable: variable.clone(),
            horizon: *h,
            message,
        };
        let Some(j) = actuals.index_of(variable) else {
            out.diagnostics.push(diag("variable not in the actuals panel".into()));
            continue;
        };
        let Some(bench) = grouped.get(&(benchmark.to_string(), variable.clone(), *h)) else {
            out.diagnostics.push(diag("no benchmark forecasts for this cell".into()));
            continue;
        };
        let mut e_m = Vec::new();
        let mut e_b = Vec::new();
        for (&origin, &f) in series {
            if !window.admits(origin, *h) {
                continue;
            }
            let Some(actual) = actuals.row_of(origin.add_months(*h as i64)).and_then(|t| actuals.get(t, j)) else {
                continue;
            };
            out.paths.push(PathPoint {
                model: model.clone(),
                variable: variable.clone(),
                horizon: *h,
                origin,
                forecast: f,
                actual,
            });
            if let Some(b) = bench.get(&origin) {
                e_m.push(actual - f);
                e_b.push(actual - b);
            }
        }
        if e_m.is_empty() {
            out.diagnostics.push(diag("no admissible forecast errors in the window".into()));
            continue;
        }
        let ratio = match rmsfe_ratio(&e_m, &e_b) {
            Ok(r) => r,
            Err(e) => {
                out.diagnostics.push(diag(e.to_string()));
                continue;
            }
        };
        let (dm_stat, p_value) = match diebold_mariano(&e_m, &e_b, *h) {
            Ok(t) => (Some(t.stat), Some(t.p_value)),
            Err(e) => {
                if model != benchmark {
                    out.diagnostics.push(diag(e.to_string()));
                }
                (None, None)
            }
        };
        out.cells.push(EvalCell {
            model: model.clone(),
            variable: variable.clone(),
            horizon: *h,
            rmsfe_ratio: ratio,
            dm_stat,
            p_value,
            stars: p_value.map_or(0, stars),
            n_obs: e_m.len(),
        });
    }
    Ok(out)
}

/// Summaries by `(model, horizon)` across variables.
pub fn summarize_cells(cells: &[EvalCell]) -> Result<BTreeMap<(String, u32), (DistributionSummary, Vec<String>)>> {
    let mut groups: BTreeMap<(String, u32), Vec<&EvalCell>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.model.clone(), c.horizon)).or_default().push(c);
    }
    let mut out = BTreeMap::new();
    for (key, group) in groups {
        let values: Vec<f64> = group.iter().map(|c| c.rmsfe_ratio).collect();
        let s = summarize_distribution(&values)?;
        let names = s.outliers.iter().map(|&i| group[i].variable.clone()).collect();
        out.insert(key, (s, names));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub benchmark: String,
    pub windows: Vec<EvalWindow>,
    /// Horizons shown in the starred per-variable table.
    pub table_horizons: Vec<u32>,
    /// Row order of the per-variable table; empty means panel order.
    pub table_variables: Vec<String>,
    /// Lag-one partial autocorrelation threshold for grouped summaries.
    pub persistence_threshold: Option<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            benchmark: "ar1".into(),
            windows: vec![EvalWindow::pre_covid(), EvalWindow::covid(true)],
            table_horizons: vec![1, 3],
            table_variables: Vec::new(),
            persistence_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub windows: Vec<(String, WindowEvaluation)>,
    pub files: Vec<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_writer(path: &Path, files: &mut Vec<PathBuf>) -> Result<csv::Writer<BufWriter<File>>> {
    files.push(path.to_path_buf());
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_summary(path: &Path, cells: &[EvalCell], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv_writer(path, files)?;
    w.write_record([
        "model",
        "horizon",
        "n_cells",
        "median",
        "std",
        "min",
        "max",
        "q1",
        "q3",
        "lower_whisker",
        "upper_whisker",
        "n_outliers",
        "has_outliers",
        "outlier_variables",
    ])?;
    for ((model, h), (s, names)) in summarize_cells(cells)? {
        w.write_record([
            model,
            h.to_string(),
            s.n.to_string(),
            format!("{}", s.median),
            format!("{}", s.std),
            format!("{}", s.min),
            format!("{}", s.max),
            format!("{}", s.q1),
            format!("{}", s.q3),
            format!("{}", s.lower_whisker),
            format!("{}", s.upper_whisker),
            s.outliers.len().to_string(),
            (!s.outliers.is_empty()).to_string(),
            names.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluate every configured window and write, per window: `cells.csv`,
/// `summary.csv` (distribution by model and horizon), `table.csv` (ratio
/// with stars per variable), `boxplot.csv`, `paths.csv`, and optionally the
/// persistence-grouped summaries. Diagnostics go to `diagnostics.jsonl`.
pub fn build_report(
    records: &[ForecastRecord],
    actuals: &TimeSeriesPanel,
    cfg: &ReportConfig,
    out_dir: &Path,
) -> Result<EvalReport> {
    if cfg.windows.is_empty() {
        return Err(Error::Config("no evaluation windows".into()));
    }
    if !records.iter().any(|r| r.model == cfg.benchmark) {
        return Err(Error::Config(format!("benchmark model '{}' missing from the store", cfg.benchmark)));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut report = EvalReport::default();
    let mut diag_lines = Vec::new();
    for window in &cfg.windows {
        let ev = evaluate_window(records, actuals, window, &cfg.benchmark)?;
        let prefix = |name: &str| out_dir.join(format!("{}_{name}", window.label));
        let files = &mut report.files;

        let mut w = csv_writer(&prefix("cells.csv"), files)?;
        w.write_record(["model", "variable", "horizon", "n_obs", "rmsfe_ratio", "dm_stat", "p_value", "stars"])?;
        for c in &ev.cells {
            w.write_record([
                c.model.clone(),
                c.variable.clone(),
                c.horizon.to_string(),
                c.n_obs.to_string(),
                format!("{}", c.rmsfe_ratio),
                fmt_opt(c.dm_stat),
                fmt_opt(c.p_value),
                c.stars.to_string(),
            ])?;
        }
        w.flush()?;

        write_summary(&prefix("summary.csv"), &ev.cells, files)?;

        let summaries = summarize_cells(&ev.cells)?;
        let mut w = csv_writer(&prefix("boxplot.csv"), files)?;
        w.write_record(["model", "horizon", "variable", "rmsfe_ratio", "outlier"])?;
        for c in &ev.cells {
            let flagged = summaries
                .get(&(c.model.clone(), c.horizon))
                .is_some_and(|(_, names)| names.contains(&c.variable));
            w.write_record([
                c.model.clone(),
                c.horizon.to_string(),
                c.variable.clone(),
                format!("{}", c.rmsfe_ratio),
                flagged.to_string(),
            ])?;
        }
        w.flush()?;

        write_table(&prefix("table.csv"), &ev.cells, actuals, cfg, files)?;

        let mut w = csv_writer(&prefix("paths.csv"), files)?;
        w.write_record(["model", "variable", "horizon", "origin", "target", "forecast", "actual"])?;
        for p in &ev.paths {
            w.write_record([
                p.model.clone(),
                p.variable.clone(),
                p.horizon.to_string(),
                p.origin.to_iso_date(),
                p.origin.add_months(p.horizon as i64).to_iso_date(),
                format!("{}", p.forecast),
                format!("{}", p.actual),
            ])?;
        }
        w.flush()?;

        if let Some(threshold) = cfg.persistence_threshold {
            let first = actuals.first_date().unwrap_or(window.start).max(window.start);
            let last = actuals.last_date().unwrap_or(window.end).min(window.end);
            let sample = actuals.estimation_window(first, last)?;
            let split = persistence_split(&sample, threshold);
            let mut w = csv_writer(&prefix("persistence.csv"), files)?;
            w.write_record(["variable", "pacf1", "group"])?;
            for (name, r) in &split.pacf {
                let group = if split.high.contains(name) { "high" } else { "low" };
                w.write_record([name.clone(), fmt_opt(*r), group.to_string()])?;
            }
            w.flush()?;
            for (group, members) in [("low", &split.low), ("high", &split.high)] {
                let subset: Vec<EvalCell> = ev.cells.iter().filter(|c| members.contains(&c.variable)).cloned().collect();
                write_summary(&prefix(&format!("summary_{group}.csv")), &subset, files)?;
            }
        }

        for d in &ev.diagnostics {
            diag_lines.push(serde_json::to_string(d).map_err(|e| Error::Validation(e.to_string()))?);
        }
        report.windows.push((window.label.clone(), ev));
    }
    let diag_path = out_dir.join("diagnostics.jsonl");
    let mut f = BufWriter::new(File::create(&diag_path)?);
    for line in &diag_lines {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    report.files.push(diag_path);
    Ok(report)
}

/// One row per variable, one column per non-benchmark model and table
/// horizon, cells like `0.84**`.
fn write_table(
    path: &Path,
    cells: &[EvalCell],
    actuals: &TimeSeriesPanel,
    cfg: &ReportConfig,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let models: BTreeSet<&str> = cells
        .iter()
        .map(|c| c.model.as_str())
        .filter(|m| *m != cfg.benchmark)
        .collect();
    let rows: Vec<String> = if cfg.table_variables.is_empty() {
        actuals.names().to_vec()
    } else {
        cfg.table_variables.clone()
    };
    let lookup: BTreeMap<(&str, &str, u32), &EvalCell> = cells
        .iter()
        .map(|c| ((c.model.as_str(), c.variable.as_str(), c.horizon), c))
        .collect();
    let mut w = csv_writer(path, files)?;
    let mut header = vec!["variable".to_string()];
    for h in &cfg.table_horizons {
        for m in &models {
            header.push(format!("{m}_h{h}"));
        }
    }
    w.write_record(&header)?;
    for v in &rows {
        if !cells.iter().any(|c| &c.variable == v) {
            continue;
        }
        let mut row = vec![v.clone()];
        for h in &cfg.table_horizons {
            for m in &models {
                row.push(match lookup.get(&(*m, v.as_str(), *h)) {
                    Some(c) => format!("{:.2}{}", c.rmsfe_ratio, "*".repeat(c.stars as usize)),
                    None => String::new(),
                });
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

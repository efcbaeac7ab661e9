//! Recursive pseudo out-of-sample experiment: expanding estimation windows,
//! monthly forecast origins, horizons `1..=H`, and an append-only CSV store
//! that makes runs resumable per `(model, origin)`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{ar1_forecast, contiguous_tail};
use crate::bvar::{
    build_design, fit_asymmetric, fit_conjugate, forecast, forecast_asymmetric, optimize_hyperparameters,
    optimize_kappas, residual_scales, unit_root_prior, AsymmetricHyper, ConjugateHyper, ConjugateSearch, KappaSearch,
};
use crate::data::{TimeSeriesPanel, YearMonth};
use crate::error::{Error, Result};
use crate::factor::{extract_factor, fit_direct, forecast_direct, FactorConfig};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Ar1,
    BvarConj,
    BvarAsym,
    Factor,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Ar1, ModelId::BvarConj, ModelId::BvarAsym, ModelId::Factor];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Ar1 => "ar1",
            ModelId::BvarConj => "bvar_conj",
            ModelId::BvarAsym => "bvar_asym",
            ModelId::Factor => "factor",
        }
    }

    fn stream_tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model '{s}' (expected ar1, bvar_conj, bvar_asym, factor)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReoptSchedule {
    EveryOrigin,
    Once,
    Every(usize),
}

impl ReoptSchedule {
    /// Origins per block; hyperparameters are optimized at the first origin
    /// of each block and held within it.
    fn block_len(self, n_origins: usize) -> usize {
        match self {
            ReoptSchedule::EveryOrigin => 1,
            ReoptSchedule::Once => n_origins.max(1),
            ReoptSchedule::Every(n) => n.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub lags: usize,
    pub n_draws: usize,
    pub schedule: ReoptSchedule,
    /// When false the starting hyperparameters are used throughout.
    pub optimize: bool,
    pub lambda0: f64,
    pub conjugate_start: (f64, f64, f64),
    pub conjugate_search: ConjugateSearch,
    pub kappa_start: (f64, f64),
    pub kappa3: f64,
    pub kappa_search: KappaSearch,
    pub factor: FactorConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            lags: 6,
            n_draws: 1000,
            schedule: ReoptSchedule::Every(12),
            optimize: true,
            lambda0: 100.0,
            conjugate_start: (0.2, 1.0, 1.0),
            conjugate_search: ConjugateSearch::default(),
            kappa_start: (0.04, 0.0016),
            kappa3: 100.0,
            kappa_search: KappaSearch::default(),
            factor: FactorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub window_start: YearMonth,
    pub first_origin: YearMonth,
    pub last_origin: YearMonth,
    pub max_horizon: u32,
    pub models: Vec<ModelId>,
    /// Variables to forecast; empty means every panel column.
    pub variables: Vec<String>,
    pub seed: u64,
    pub settings: ModelSettings,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            window_start: YearMonth::new(1960, 1).expect("valid"),
            first_origin: YearMonth::new(1984, 12).expect("valid"),
            last_origin: YearMonth::new(2022, 12).expect("valid"),
            max_horizon: 12,
            models: vec![ModelId::Ar1, ModelId::BvarConj, ModelId::BvarAsym, ModelId::Factor],
            variables: Vec::new(),
            seed: 20240101,
            settings: ModelSettings::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn origins(&self) -> Vec<YearMonth> {
        let n = self.first_origin.months_until(self.last_origin);
        if n < 0 {
            return Vec::new();
        }
        (0..=n).map(|i| self.first_origin.add_months(i)).collect()
    }

    pub fn horizons(&self) -> std::ops::RangeInclusive<u32> {
        1..=self.max_horizon
    }

    pub fn contains(&self, origin: YearMonth, horizon: u32) -> bool {
        origin >= self.first_origin && origin <= self.last_origin && horizon >= 1 && horizon <= self.max_horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_horizon == 0 {
            return Err(Error::Config("max_horizon must be at least 1".into()));
        }
        if self.first_origin > self.last_origin {
            return Err(Error::Config(format!(
                "first origin {} after last origin {}",
                self.first_origin, self.last_origin
            )));
        }
        if self.window_start >= self.first_origin {
            return Err(Error::Config("estimation window must start before the first origin".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        let uniq: BTreeSet<_> = self.models.iter().collect();
        if uniq.len() != self.models.len() {
            return Err(Error::Config("duplicate model in roster".into()));
        }
        if self.settings.lags == 0 || self.settings.n_draws == 0 {
            return Err(Error::Config("lags and n_draws must be positive".into()));
        }
        Ok(())
    }

    /// Check the panel covers the plan and narrow it to the plan's variables.
    pub fn prepare(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        self.validate()?;
        if !panel.is_transformed() {
            return Err(Error::Precondition("the experiment expects a transformed panel".into()));
        }
        let (first, last) = match (panel.first_date(), panel.last_date()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Precondition("empty panel".into())),
        };
        let needed_end = self.last_origin.add_months(self.max_horizon as i64);
        if first > self.window_start || last < needed_end {
            return Err(Error::Precondition(format!(
                "panel spans {first}..{last}; the plan needs {}..{needed_end}",
                self.window_start
            )));
        }
        if self.variables.is_empty() {
            Ok(panel.clone())
        } else {
            panel.select_columns(&self.variables)
        }
    }
}

/// One point forecast, in transformed units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub variable: String,
    pub origin: YearMonth,
    pub horizon: u32,
    pub value: f64,
}

impl ForecastRecord {
    pub fn key(&self) -> (String, String, YearMonth, u32) {
        (self.model.clone(), self.variable.clone(), self.origin, self.horizon)
    }

    pub fn target(&self) -> YearMonth {
        self.origin.add_months(self.horizon as i64)
    }
}

pub const EXCHANGE_HEADER: [&str; 5] = ["model", "variable", "origin", "horizon", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginStatus {
    Ok,
    Partial,
    Failed,
}

impl OriginStatus {
    fn as_str(self) -> &'static str {
        match self {
            OriginStatus::Ok => "ok",
            OriginStatus::Partial => "partial",
            OriginStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(OriginStatus::Ok),
            "partial" => Ok(OriginStatus::Partial),
            "failed" => Ok(OriginStatus::Failed),
            other => Err(Error::Validation(format!("unknown index status '{other}'"))),
        }
    }
}

/// Completion marker for one `(model, origin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub model: String,
    pub origin: YearMonth,
    pub status: OriginStatus,
    /// Digest of the estimation window the model saw.
    pub digest: String,
    pub n_records: usize,
    pub diagnostic: String,
}

const INDEX_HEADER: [&str; 6] = ["model", "origin", "status", "digest", "n_records", "diagnostic"];

/// Append-only forecast store: `forecasts.csv` (exchange layout),
/// `index.csv` (one row per completed `(model, origin)`), and
/// `out_of_plan.csv` for ingested records outside the plan.
#[derive(Debug)]
pub struct ForecastStore {
    dir: PathBuf,
    done: HashSet<(String, YearMonth)>,
    keys: HashSet<(String, String, YearMonth, u32)>,
}

impl ForecastStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut store = ForecastStore {
            dir: dir.to_path_buf(),
            done: HashSet::new(),
            keys: HashSet::new(),
        };
        for e in store.index()? {
            store.done.insert((e.model, e.origin));
        }
        for r in store.records()? {
            store.keys.insert(r.key());
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn forecasts_path(&self) -> PathBuf {
        self.dir.join("forecasts.csv")
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join("index.csv")
    }

    pub fn out_of_plan_path(&self) -> PathBuf {
        self.dir.join("out_of_plan.csv")
    }

    pub fn is_done(&self, model: &str, origin: YearMonth) -> bool {
        self.done.contains(&(model.to_string(), origin))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn records(&self) -> Result<Vec<ForecastRecord>> {
        read_records_file(&self.forecasts_path(), true)
    }

    pub fn out_of_plan_records(&self) -> Result<Vec<ForecastRecord>> {
        read_records_file(&self.out_of_plan_path(), true)
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>> {
        let path = self.index_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut rdr = csv::Reader::from_path(&path)?;
        let mut out = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |msg: &str| Error::Parse {
                row: i + 2,
                msg: msg.to_string(),
            };
            if row.len() != INDEX_HEADER.len() {
                return Err(bad("wrong number of index columns"));
            }
            out.push(IndexEntry {
                model: row[0].to_string(),
                origin: YearMonth::parse(&row[1]).map_err(|_| bad("bad origin"))?,
                status: OriginStatus::parse(&row[2])?,
                digest: row[3].to_string(),
                n_records: row[4].parse().map_err(|_| bad("bad record count"))?,
                diagnostic: row[5].to_string(),
            });
        }
        Ok(out)
    }

    fn append_lines(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        if fresh {
            w.write_record(header)?;
        }
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Append one `(model, origin)` worth of forecasts and its index row.
    pub fn commit(&mut self, records: &[ForecastRecord], entry: &IndexEntry) -> Result<()> {
        if self.is_done(&entry.model, entry.origin) {
            return Err(Error::Conflict(vec![format!("{} at {} already stored", entry.model, entry.origin)]));
        }
        let clashes: Vec<String> = records
            .iter()
            .filter(|r| self.keys.contains(&r.key()))
            .map(describe_key)
            .collect();
        if !clashes.is_empty() {
            return Err(Error::Conflict(clashes));
        }
        Self::append_lines(&self.forecasts_path(), &EXCHANGE_HEADER, &records.iter().map(record_row).collect::<Vec<_>>())?;
        Self::append_lines(
            &self.index_path(),
            &INDEX_HEADER,
            &[vec![
                entry.model.clone(),
                entry.origin.to_iso_date(),
                entry.status.as_str().to_string(),
                entry.digest.clone(),
                entry.n_records.to_string(),
                entry.diagnostic.clone(),
            ]],
        )?;
        self.done.insert((entry.model.clone(), entry.origin));
        self.keys.extend(records.iter().map(ForecastRecord::key));
        Ok(())
    }

    /// Add externally produced forecasts; keys must be new.
    pub fn ingest(&mut self, batch: &IngestOutcome) -> Result<usize> {
        let clashes: Vec<String> = batch
            .records
            .iter()
            .chain(&batch.out_of_plan)
            .filter(|r| self.keys.contains(&r.key()))
            .map(describe_key)
            .collect();
        if !clashes.is_empty() {
            return Err(Error::Conflict(clashes));
        }
        if !batch.records.is_empty() {
            Self::append_lines(&self.forecasts_path(), &EXCHANGE_HEADER, &batch.records.iter().map(record_row).collect::<Vec<_>>())?;
        }
        if !batch.out_of_plan.is_empty() {
            Self::append_lines(&self.out_of_plan_path(), &EXCHANGE_HEADER, &batch.out_of_plan.iter().map(record_row).collect::<Vec<_>>())?;
        }
        self.keys.extend(batch.records.iter().chain(&batch.out_of_plan).map(ForecastRecord::key));
        Ok(batch.records.len() + batch.out_of_plan.len())
    }

    /// Rewrite the forecast and index files in key order so a finished run
    /// has byte-identical files regardless of scheduling.
    pub fn compact(&self) -> Result<()> {
        let mut records = self.records()?;
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        rewrite(&self.forecasts_path(), &EXCHANGE_HEADER, records.iter().map(record_row))?;
        let mut index = self.index()?;
        index.sort_by(|a, b| (&a.model, a.origin).cmp(&(&b.model, b.origin)));
        rewrite(
            &self.index_path(),
            &INDEX_HEADER,
            index.iter().map(|e| {
                vec![
                    e.model.clone(),
                    e.origin.to_iso_date(),
                    e.status.as_str().to_string(),
                    e.digest.clone(),
                    e.n_records.to_string(),
                    e.diagnostic.clone(),
                ]
            }),
        )
    }
}

fn rewrite<I: Iterator<Item = Vec<String>>>(path: &Path, header: &[&str], rows: I) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn describe_key(r: &ForecastRecord) -> String {
    format!("{}/{}/{}/h{}", r.model, r.variable, r.origin, r.horizon)
}

fn record_row(r: &ForecastRecord) -> Vec<String> {
    vec![
        r.model.clone(),
        r.variable.clone(),
        r.origin.to_iso_date(),
        r.horizon.to_string(),
        format!("{}", r.value),
    ]
}

fn read_records_file(path: &Path, allow_missing: bool) -> Result<Vec<ForecastRecord>> {
    if allow_missing && !path.exists() {
        return Ok(Vec::new());
    }
    parse_exchange(File::open(path)?)
}

/// Parse the forecast-exchange CSV: header exactly
/// `model,variable,origin,horizon,value`.
pub fn parse_exchange<R: std::io::Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != EXCHANGE_HEADER {
        return Err(Error::Schema(format!(
            "forecast header must be {}, found {}",
            EXCHANGE_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse { row: line, msg };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", row.len())));
        }
        let origin = YearMonth::parse(row[2].trim()).map_err(|_| bad(format!("bad origin '{}'", &row[2])))?;
        let horizon: u32 = row[3]
            .trim()
            .parse()
            .ok()
            .filter(|h| *h >= 1)
            .ok_or_else(|| bad(format!("horizon '{}' is not a positive integer", &row[3])))?;
        let value: f64 = row[4]
            .trim()
            .parse()
            .map_err(|_| bad(format!("value '{}' is not a number", &row[4])))?;
        if !value.is_finite() {
            return Err(Error::Validation(format!("non-finite forecast at row {line}")));
        }
        if row[0].trim().is_empty() || row[1].trim().is_empty() {
            return Err(bad("empty model or variable".into()));
        }
        out.push(ForecastRecord {
            model: row[0].trim().to_string(),
            variable: row[1].trim().to_string(),
            origin,
            horizon,
            value,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records: Vec<ForecastRecord>,
    /// Accepted but outside the plan; excluded from reports by default.
    pub out_of_plan: Vec<ForecastRecord>,
}

/// Read an external forecast file. Duplicate keys within the file are a
/// conflict listing every collision.
pub fn ingest_external_forecasts(path: &Path, plan: Option<&ExperimentPlan>) -> Result<IngestOutcome> {
    let records = parse_exchange(File::open(path)?)?;
    let mut seen = HashSet::new();
    let mut clashes = Vec::new();
    for r in &records {
        if !seen.insert(r.key()) {
            clashes.push(describe_key(r));
        }
    }
    if !clashes.is_empty() {
        return Err(Error::Conflict(clashes));
    }
    let (records, out_of_plan) = match plan {
        Some(p) => records.into_iter().partition(|r| p.contains(r.origin, r.horizon)),
        None => (records, Vec::new()),
    };
    Ok(IngestOutcome { records, out_of_plan })
}

/// Hyperparameters held fixed within a re-optimization block.
#[derive(Debug, Clone, Default)]
struct HyperCache {
    conjugate: Option<ConjugateHyper>,
    asymmetric: Option<(f64, f64)>,
}

/// Forecasts of one model at one origin, `H x N` with `NaN` for variables
/// that failed, plus per-variable failure messages.
struct OriginOutput {
    values: DMatrix<f64>,
    failures: Vec<(String, String)>,
}

fn stream_id(origin: YearMonth, model: ModelId) -> u64 {
    let months = (origin.year() as i64 * 12 + origin.month() as i64 - 1) as u64;
    months * 16 + model.stream_tag()
}

fn run_model(
    model: ModelId,
    window: &TimeSeriesPanel,
    plan: &ExperimentPlan,
    cache: &mut HyperCache,
    refresh: bool,
    origin: YearMonth,
) -> Result<OriginOutput> {
    let h = plan.max_horizon as usize;
    let n = window.n_vars();
    let s = &plan.settings;
    let mut values = DMatrix::from_element(h, n, f64::NAN);
    let mut failures = Vec::new();
    match model {
        ModelId::Ar1 => {
            for j in 0..n {
                match ar1_forecast(&contiguous_tail(&window.column(j)), h) {
                    Ok(f) => values.column_mut(j).copy_from_slice(&f),
                    Err(e) => failures.push((window.names()[j].clone(), e.to_string())),
                }
            }
        }
        ModelId::BvarConj => {
            let design = build_design(window, s.lags)?;
            let sig = residual_scales(&design)?;
            if refresh || cache.conjugate.is_none() {
                let (l1, m1, m2) = s.conjugate_start;
                let start = ConjugateHyper {
                    lambda0: s.lambda0,
                    lambda1: l1,
                    mu1: m1,
                    mu2: m2,
                    phi_star: unit_root_prior(&design.tcodes),
                };
                cache.conjugate = Some(if s.optimize {
                    optimize_hyperparameters(&design, &sig, &start, &s.conjugate_search)?
                } else {
                    start
                });
            }
            let hyper = cache.conjugate.clone().expect("set above");
            let fit = fit_conjugate(&design, &hyper, &sig)?;
            let mut rng = RngStream::new(plan.seed, stream_id(origin, model));
            let sim = forecast(&fit.posterior, &design.recent, h, &mut rng, s.n_draws)?;
            values = sim.mean;
        }
        ModelId::BvarAsym => {
            let design = build_design(window, s.lags)?;
            let sig = residual_scales(&design)?;
            let mut base = AsymmetricHyper::new(&sig, unit_root_prior(&design.tcodes));
            base.kappa3 = s.kappa3;
            if refresh || cache.asymmetric.is_none() {
                base.kappa1 = s.kappa_start.0;
                base.kappa2 = s.kappa_start.1;
                let chosen = if s.optimize { optimize_kappas(&design, &base, &s.kappa_search)? } else { base.clone() };
                cache.asymmetric = Some((chosen.kappa1, chosen.kappa2));
            }
            let (k1, k2) = cache.asymmetric.expect("set above");
            base.kappa1 = k1;
            base.kappa2 = k2;
            let post = fit_asymmetric(&design, &base)?;
            let mut rng = RngStream::new(plan.seed, stream_id(origin, model));
            values = forecast_asymmetric(&post, &design.recent, h, &mut rng, s.n_draws)?.mean;
        }
        ModelId::Factor => {
            let factor = extract_factor(window, &s.factor)?;
            for j in 0..n {
                let y = contiguous_tail(&window.column(j));
                let f = &factor.values[factor.values.len() - y.len()..];
                for step in 1..=h {
                    let res = fit_direct(&window.names()[j], &y, f, step, s.factor.max_factor_lags, s.factor.max_own_lags)
                        .and_then(|spec| forecast_direct(&spec, f, &y));
                    match res {
                        Ok(v) => values[(step - 1, j)] = v,
                        Err(e) => {
                            failures.push((window.names()[j].clone(), format!("h={step}: {e}")));
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(OriginOutput { values, failures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub model: String,
    pub origin: YearMonth,
    /// Empty when the whole model failed at this origin.
    pub variables: Vec<String>,
    pub diagnostic: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub attempted: usize,
    pub skipped: usize,
    pub records_written: usize,
    pub gaps: Vec<Gap>,
}

/// Run every model at every origin not yet in the store. Blocks of origins
/// sharing hyperparameters run in parallel; each block runs sequentially.
pub fn run_experiment(plan: &ExperimentPlan, panel: &TimeSeriesPanel, store: &mut ForecastStore) -> Result<RunSummary> {
    let panel = plan.prepare(panel)?;
    let origins = plan.origins();
    let block = plan.settings.schedule.block_len(origins.len());
    let blocks: Vec<&[YearMonth]> = origins.chunks(block).collect();
    let shared = Mutex::new((std::mem::replace(store, placeholder_store()), RunSummary::default()));
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    blocks.par_iter().for_each(|origins| {
        for &model in &plan.models {
            let pending: Vec<YearMonth> = {
                let guard = shared.lock().expect("store lock");
                origins.iter().cloned().filter(|o| !guard.0.is_done(model.as_str(), *o)).collect()
            };
            {
                let mut guard = shared.lock().expect("store lock");
                guard.1.skipped += origins.len() - pending.len();
            }
            if pending.is_empty() {
                continue;
            }
            let mut cache = HyperCache::default();
            let mut primed = !matches!(model, ModelId::BvarConj | ModelId::BvarAsym);
            for (k, &origin) in origins.iter().enumerate() {
                if !pending.contains(&origin) {
                    continue;
                }
                // on resume, hyperparameters still come from the block's first origin
                if !primed && k > 0 {
                    if let Ok(w) = panel.estimation_window(plan.window_start, origins[0]) {
                        let _ = run_model(model, &w, plan, &mut cache, true, origins[0]);
                    }
                }
                primed = true;
                let outcome = process_origin(model, origin, &panel, plan, &mut cache, k == 0);
                let mut guard = shared.lock().expect("store lock");
                guard.1.attempted += 1;
                match outcome {
                    Ok((records, entry, gap)) => {
                        if let Err(e) = guard.0.commit(&records, &entry) {
                            first_error.lock().expect("error lock").get_or_insert(e);
                            return;
                        }
                        guard.1.records_written += records.len();
                        if let Some(g) = gap {
                            guard.1.gaps.push(g);
                        }
                    }
                    Err(e) => {
                        first_error.lock().expect("error lock").get_or_insert(e);
                        return;
                    }
                }
            }
        }
    });

    let (inner, mut summary) = shared.into_inner().expect("store lock");
    *store = inner;
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    store.compact()?;
    summary.gaps.sort_by(|a, b| (&a.model, a.origin).cmp(&(&b.model, b.origin)));
    Ok(summary)
}

fn placeholder_store() -> ForecastStore {
    ForecastStore {
        dir: PathBuf::new(),
        done: HashSet::new(),
        keys: HashSet::new(),
    }
}

/// Estimate one model at one origin. Model failures become gaps; only
/// store-level problems are returned as errors.
fn process_origin(
    model: ModelId,
    origin: YearMonth,
    panel: &TimeSeriesPanel,
    plan: &ExperimentPlan,
    cache: &mut HyperCache,
    refresh: bool,
) -> Result<(Vec<ForecastRecord>, IndexEntry, Option<Gap>)> {
    let window = panel.estimation_window(plan.window_start, origin)?;
    let digest = window.digest();
    let mut entry = IndexEntry {
        model: model.as_str().to_string(),
        origin,
        status: OriginStatus::Ok,
        digest,
        n_records: 0,
        diagnostic: String::new(),
    };
    match run_model(model, &window, plan, cache, refresh, origin) {
        Ok(out) => {
            let mut records = Vec::new();
            for (j, name) in window.names().iter().enumerate() {
                for h in 0..out.values.nrows() {
                    let v = out.values[(h, j)];
                    if v.is_finite() {
                        records.push(ForecastRecord {
                            model: model.as_str().to_string(),
                            variable: name.clone(),
                            origin,
                            horizon: h as u32 + 1,
                            value: v,
                        });
                    }
                }
            }
            entry.n_records = records.len();
            let gap = if out.failures.is_empty() {
                None
            } else {
                entry.status = OriginStatus::Partial;
                let mut vars: Vec<String> = out.failures.iter().map(|f| f.0.clone()).collect();
                vars.dedup();
                entry.diagnostic = out
                    .failures
                    .iter()
                    .map(|(v, m)| format!("{v}: {m}"))
                    .collect::<Vec<_>>()
                    .join(" | ");
                log::warn!("{model} at {origin}: {}", entry.diagnostic);
                Some(Gap {
                    model: entry.model.clone(),
                    origin,
                    variables: vars,
                    diagnostic: entry.diagnostic.clone(),
                })
            };
            Ok((records, entry, gap))
        }
        Err(e) => {
            log::warn!("{model} failed at {origin}: {e}");
            entry.status = OriginStatus::Failed;
            entry.diagnostic = e.to_string();
            let gap = Gap {
                model: entry.model.clone(),
                origin,
                variables: Vec::new(),
                diagnostic: entry.diagnostic.clone(),
            };
            Ok((Vec::new(), entry, Some(gap)))
        }
    }
}

/// Recompute the window digest behind every index entry; returns the
/// entries whose inputs differ from what data dated up to the origin gives.
pub fn audit_look_ahead(store: &ForecastStore, panel: &TimeSeriesPanel, plan: &ExperimentPlan) -> Result<Vec<String>> {
    let panel = plan.prepare(panel)?;
    let mut violations = Vec::new();
    for e in store.index()? {
        let window = panel.estimation_window(plan.window_start, e.origin)?;
        if window.last_date() != Some(e.origin) || window.digest() != e.digest {
            violations.push(format!("{} at {}", e.model, e.origin));
        }
    }
    Ok(violations)
}

/// Group records by `(model, variable, horizon)`, mapping origin to value.
pub fn group_records(records: &[ForecastRecord]) -> BTreeMap<(String, String, u32), BTreeMap<YearMonth, f64>> {
    let mut out: BTreeMap<(String, String, u32), BTreeMap<YearMonth, f64>> = BTreeMap::new();
    for r in records {
        out.entry((r.model.clone(), r.variable.clone(), r.horizon))
            .or_default()
            .insert(r.origin, r.value);
    }
    out
}

pub fn write_exchange<W: Write>(w: W, records: &[ForecastRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(EXCHANGE_HEADER)?;
    for r in records {
        wr.write_record(record_row(r))?;
    }
    wr.flush()?;
    Ok(())
}

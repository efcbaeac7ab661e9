//! `macrofc` command-line driver.
//!
//! Exit codes: 0 on success (a run may still report gaps), 2 for
//! configuration or validation problems, 3 for numerical failures.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use macrofc::data::{apply_transforms, PanelSchema, SetKind, TimeSeriesPanel, VariableSet};
use macrofc::eval::{build_report, EvalWindow, ExclusionKey, ReportConfig};
use macrofc::harness::{ingest_external_forecasts, run_experiment, ExperimentPlan, ForecastStore, ModelId, OriginStatus};
use macrofc::tokenize::{patch, quantize, scale, write_tokens_csv, PatchSpec, QuantizerSpec, ScalerSpec};
use macrofc::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DATA_DIR_ENV: &str = "MACROFC_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "macrofc", version, about = "Recursive macro forecasting experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Apply transform codes to a raw panel.
    Transform(TransformArgs),
    /// Run the recursive out-of-sample experiment into a forecast store.
    Run(RunArgs),
    /// Compute relative RMSFEs, DM tests and report tables from a store.
    Evaluate(EvaluateArgs),
    /// Scale, patch and quantize panel series.
    Tokenize(TokenizeArgs),
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file describing the CSV layout.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Keep only a standard variable set (medium, large, xlarge).
    #[arg(long)]
    set: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated model ids: ar1, bvar_conj, bvar_asym, factor.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue an existing store built from the same configuration.
    #[arg(long)]
    resume: bool,
    /// External forecast files to add to the store.
    #[arg(long)]
    ingest: Vec<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum WindowName {
    PreCovid,
    Covid,
    Full,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitKind {
    Persistence,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KeyArg {
    Origin,
    Target,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Panel with the realized values.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report configuration (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    window: Vec<WindowName>,
    /// Drop forecasts made March to June 2020.
    #[arg(long)]
    exclude_covid_onset: bool,
    #[arg(long, value_enum)]
    exclusion_key: Option<KeyArg>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, value_enum)]
    split: Option<SplitKind>,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Row order of the per-variable table.
    #[arg(long)]
    set: Option<String>,
    /// Also evaluate ingested forecasts outside the plan.
    #[arg(long)]
    include_out_of_plan: bool,
}

#[derive(Args, Debug)]
struct TokenizeArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Tokenizer specification (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    panel: Option<PathBuf>,
    store: Option<PathBuf>,
    set: Option<String>,
    plan: ExperimentPlan,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TokenizerConfig {
    scaler: Option<ScalerSpec>,
    patch: Option<PatchSpec>,
    quantizer: Option<QuantizerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config_digest: String,
    seed: u64,
    panel_file_digest: String,
    panel_content_digest: String,
    config: RunConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Transform(a) => cmd_transform(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tokenize(a) => cmd_tokenize(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

/// Relative input paths resolve against the data directory when set.
fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() && !p.exists() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn parse_set(name: &str) -> Result<VariableSet> {
    Ok(VariableSet::standard(SetKind::parse(name)?))
}

/// Load a panel, transforming it when the file holds raw values.
fn load_transformed(path: &Path) -> Result<TimeSeriesPanel> {
    let panel = TimeSeriesPanel::load(&data_path(path), &PanelSchema::default())?;
    if panel.is_transformed() {
        Ok(panel)
    } else {
        apply_transforms(&panel)
    }
}

fn cmd_transform(a: TransformArgs) -> Result<()> {
    let schema = match &a.schema {
        Some(p) => PanelSchema::from_file(p)?,
        None => PanelSchema::default(),
    };
    let mut raw = TimeSeriesPanel::load(&data_path(&a.input), &schema)?;
    if let Some(set) = &a.set {
        raw = raw.select_set(&parse_set(set)?)?;
    }
    let panel = apply_transforms(&raw)?;
    panel.write_csv(&a.out)?;
    println!("variable,code,observed_raw,observed_transformed,first_observed");
    for (j, name) in panel.names().iter().enumerate() {
        let before = raw.column(j).iter().filter(|v| v.is_some()).count();
        let col = panel.column(j);
        let after = col.iter().filter(|v| v.is_some()).count();
        let first = col.iter().position(Option::is_some).map(|t| panel.dates()[t].to_string());
        println!("{name},{},{before},{after},{}", panel.tcodes()[j].code(), first.unwrap_or_default());
    }
    Ok(())
}

fn config_digest(cfg: &RunConfig) -> Result<String> {
    // paths do not change results, so they stay out of the digest
    let effective = (&cfg.set, &cfg.plan);
    let json = serde_json::to_vec(&effective).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json)))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = a.panel {
        cfg.panel = Some(p);
    }
    if let Some(s) = a.store {
        cfg.store = Some(s);
    }
    if let Some(s) = a.set {
        cfg.set = Some(s);
    }
    if let Some(seed) = a.seed {
        cfg.plan.seed = seed;
    }
    if let Some(models) = &a.models {
        cfg.plan.models = models.iter().map(|m| m.parse()).collect::<Result<Vec<ModelId>>>()?;
    }
    if let Some(set) = &cfg.set {
        cfg.plan.variables = parse_set(set)?.members;
    }
    let panel_path = data_path(cfg.panel.as_deref().ok_or_else(|| Error::Config("no panel given".into()))?);
    let store_dir = cfg.store.clone().ok_or_else(|| Error::Config("no store directory given".into()))?;
    cfg.plan.validate()?;

    let panel = load_transformed(&panel_path)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: config_digest(&cfg)?,
        seed: cfg.plan.seed,
        panel_file_digest: file_digest(&panel_path)?,
        panel_content_digest: panel.digest(),
        config: cfg.clone(),
    };
    let manifest_path = store_dir.join("manifest.json");
    if manifest_path.exists() {
        if !a.resume {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume to continue it",
                store_dir.display()
            )));
        }
        let old: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::Config(format!("unreadable manifest: {e}")))?;
        if old.config_digest != manifest.config_digest || old.panel_content_digest != manifest.panel_content_digest {
            return Err(Error::Config("store was built from a different configuration or panel".into()));
        }
    }
    let mut store = ForecastStore::open(&store_dir)?;
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    for path in &a.ingest {
        let batch = ingest_external_forecasts(&data_path(path), Some(&cfg.plan))?;
        if !batch.out_of_plan.is_empty() {
            log::warn!(
                "{}: {} forecasts fall outside the plan and are excluded from reports by default",
                path.display(),
                batch.out_of_plan.len()
            );
        }
        let n = store.ingest(&batch)?;
        println!("ingested {n} forecasts from {}", path.display());
    }

    let summary = run_experiment(&cfg.plan, &panel, &mut store)?;
    write_gap_report(&store)?;
    println!(
        "attempted {} (model, origin) pairs, skipped {} already stored, wrote {} forecasts, {} gaps",
        summary.attempted,
        summary.skipped,
        summary.records_written,
        summary.gaps.len()
    );
    for g in &summary.gaps {
        println!("gap: {} at {}: {}", g.model, g.origin, g.diagnostic);
    }
    Ok(())
}

fn write_gap_report(store: &ForecastStore) -> Result<()> {
    let mut w = csv::Writer::from_path(store.dir().join("gaps.csv"))?;
    w.write_record(["model", "origin", "status", "diagnostic"])?;
    for e in store.index()? {
        if e.status != OriginStatus::Ok {
            let status = if e.status == OriginStatus::Failed { "failed" } else { "partial" };
            w.write_record([e.model.as_str(), &e.origin.to_iso_date(), status, &e.diagnostic])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg: ReportConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => ReportConfig::default(),
    };
    if !a.window.is_empty() {
        cfg.windows = a
            .window
            .iter()
            .map(|w| match w {
                WindowName::PreCovid => EvalWindow::pre_covid(),
                WindowName::Covid => EvalWindow::covid(a.exclude_covid_onset),
                WindowName::Full => EvalWindow::full_sample(a.exclude_covid_onset),
            })
            .collect();
    } else if a.config.is_none() {
        cfg.windows = vec![EvalWindow::pre_covid(), EvalWindow::covid(a.exclude_covid_onset)];
    }
    for w in &cfg.windows {
        EvalWindow::new(w.label.clone(), w.start, w.end, w.excluded.clone(), w.exclusion_key)?;
    }
    if let Some(k) = a.exclusion_key {
        let key = match k {
            KeyArg::Origin => ExclusionKey::Origin,
            KeyArg::Target => ExclusionKey::Target,
        };
        cfg.windows = cfg.windows.into_iter().map(|w| w.with_key(key)).collect();
    }
    if let Some(b) = a.benchmark {
        cfg.benchmark = b;
    }
    if a.split == Some(SplitKind::Persistence) {
        cfg.persistence_threshold = Some(a.threshold);
    }
    if let Some(set) = &a.set {
        cfg.table_variables = parse_set(set)?.members;
    }
    let store = ForecastStore::open(&a.store)?;
    let mut records = store.records()?;
    if a.include_out_of_plan {
        records.extend(store.out_of_plan_records()?);
    }
    let panel = load_transformed(&a.panel)?;
    let report = build_report(&records, &panel, &cfg, &a.out)?;
    for (label, ev) in &report.windows {
        println!("{label}: {} cells, {} diagnostics", ev.cells.len(), ev.diagnostics.len());
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_tokenize(a: TokenizeArgs) -> Result<()> {
    let spec: TokenizerConfig = read_toml(&a.spec)?;
    let mut panel = TimeSeriesPanel::load(&data_path(&a.panel), &PanelSchema::default())?;
    if let Some(cols) = &a.columns {
        panel = panel.select_columns(cols)?;
    }
    let mut series: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for (j, name) in panel.names().iter().enumerate() {
        let values: Vec<f64> = panel.column(j).into_iter().flatten().collect();
        if values.is_empty() {
            return Err(Error::Validation(format!("series {name} has no observations")));
        }
        series.insert(j, (name.clone(), values));
    }

    // scaled values, one vector per (series, segment)
    let mut pieces: Vec<(String, Vec<f64>)> = Vec::new();
    for (_, (name, values)) in series {
        match &spec.scaler {
            Some(s) => {
                let segs = scale(&values, s).map_err(|e| match e {
                    Error::Scale(m) => Error::Scale(format!("{name}: {m}")),
                    other => other,
                })?;
                let multi = segs.len() > 1;
                for (k, seg) in segs.into_iter().enumerate() {
                    let id = if multi { format!("{name}#s{k}") } else { name.clone() };
                    pieces.push((id, seg.values));
                }
            }
            None => pieces.push((name, values)),
        }
    }

    let mut w = BufWriter::new(File::create(&a.out)?);
    match (&spec.patch, &spec.quantizer) {
        (patch_spec, Some(q)) => {
            let mut rows = Vec::new();
            for (id, values) in &pieces {
                let chunks = match patch_spec {
                    Some(p) => patch(values, p)?,
                    None => vec![values.clone()],
                };
                let resolved = q.resolved(values)?;
                let multi = chunks.len() > 1;
                for (k, c) in chunks.iter().enumerate() {
                    let label = if multi { format!("{id}#p{k}") } else { id.clone() };
                    rows.push((label, quantize(c, &resolved)?));
                }
            }
            write_tokens_csv(&mut w, &rows)?;
        }
        (Some(p), None) => {
            writeln!(w, "series_id,patch,start,position,value")?;
            for (id, values) in &pieces {
                for (k, (start, end)) in p.bounds(values.len())?.into_iter().enumerate() {
                    for (pos, v) in values[start..end].iter().enumerate() {
                        writeln!(w, "{id},{k},{start},{pos},{v}")?;
                    }
                }
            }
        }
        (None, None) => {
            writeln!(w, "series_id,position,value")?;
            for (id, values) in &pieces {
                for (pos, v) in values.iter().enumerate() {
                    writeln!(w, "{id},{pos},{v}")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

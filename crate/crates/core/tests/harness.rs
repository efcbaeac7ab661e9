mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::transformed_panel;
use macrofc::data::{TimeSeriesPanel, YearMonth};
use macrofc::harness::{
    audit_look_ahead, ingest_external_forecasts, run_experiment, ExperimentPlan, ForecastStore, ModelId, OriginStatus,
    ReoptSchedule,
};
use macrofc::Error;
use nalgebra::DMatrix;

fn ym(y: i32, m: u32) -> YearMonth {
    YearMonth::new(y, m).unwrap()
}

fn small_plan(models: Vec<ModelId>) -> ExperimentPlan {
    let mut plan = ExperimentPlan {
        window_start: ym(1980, 1),
        first_origin: ym(2000, 1),
        last_origin: ym(2000, 6),
        max_horizon: 3,
        models,
        seed: 11,
        ..ExperimentPlan::default()
    };
    plan.settings.lags = 2;
    plan.settings.n_draws = 60;
    plan.settings.schedule = ReoptSchedule::Every(3);
    plan.settings.conjugate_search.search.max_iter = 60;
    plan.settings.kappa_search.search.max_iter = 60;
    plan
}

fn panel() -> TimeSeriesPanel {
    transformed_panel(3, ym(1980, 1), 26 * 12, 5)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_default()
}

fn gap_cells(store: &ForecastStore, n_vars: usize, h: usize) -> usize {
    store
        .index()
        .unwrap()
        .iter()
        .map(|e| match e.status {
            OriginStatus::Ok => 0,
            OriginStatus::Partial => e.diagnostic.split(" | ").count() * h,
            OriginStatus::Failed => n_vars * h,
        })
        .sum()
}

#[test]
fn three_origins_one_variable_gives_36_records() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan {
        window_start: ym(1960, 1),
        first_origin: ym(1984, 12),
        last_origin: ym(1985, 2),
        max_horizon: 12,
        models: vec![ModelId::Ar1],
        variables: vec!["v1".into()],
        ..ExperimentPlan::default()
    };
    let p = transformed_panel(2, ym(1960, 1), 30 * 12, 1);
    let mut store = ForecastStore::open(dir.path()).unwrap();
    let s = run_experiment(&plan, &p, &mut store).unwrap();
    assert_eq!(s.records_written, 36);
    let recs = store.records().unwrap();
    assert_eq!(recs.len(), 36);
    assert!(recs.iter().all(|r| r.variable == "v1" && r.model == "ar1"));
    let origins: BTreeSet<_> = recs.iter().map(|r| r.origin).collect();
    assert_eq!(origins.len(), 3);
}

#[test]
fn record_count_identity_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(ModelId::ALL.to_vec());
    let p = panel();
    let mut store = ForecastStore::open(dir.path()).unwrap();
    let s = run_experiment(&plan, &p, &mut store).unwrap();
    let expected = 4 * 3 * 6 * 3 - gap_cells(&store, 3, 3);
    assert_eq!(store.records().unwrap().len(), expected);
    assert_eq!(s.records_written, expected);
    assert!(s.gaps.is_empty(), "{:?}", s.gaps);
    for m in ModelId::ALL {
        assert!(store.records().unwrap().iter().any(|r| r.model == m.as_str()));
    }

    let before = (read(&store.forecasts_path()), read(&store.index_path()));
    let mut reopened = ForecastStore::open(dir.path()).unwrap();
    let again = run_experiment(&plan, &p, &mut reopened).unwrap();
    assert_eq!(again.records_written, 0);
    assert_eq!(again.attempted, 0);
    assert_eq!(again.skipped, 4 * 6);
    assert_eq!(before, (read(&reopened.forecasts_path()), read(&reopened.index_path())));
}

#[test]
fn interrupted_run_resumes_to_the_same_store() {
    let p = panel();
    let plan = small_plan(vec![ModelId::Ar1, ModelId::BvarConj, ModelId::BvarAsym]);

    let fresh = tempfile::tempdir().unwrap();
    let mut a = ForecastStore::open(fresh.path()).unwrap();
    run_experiment(&plan, &p, &mut a).unwrap();

    // stop after four origins, leaving the second block half done
    let resumed = tempfile::tempdir().unwrap();
    let mut b = ForecastStore::open(resumed.path()).unwrap();
    let partial = ExperimentPlan {
        last_origin: ym(2000, 4),
        ..plan.clone()
    };
    run_experiment(&partial, &p, &mut b).unwrap();
    let mut b = ForecastStore::open(resumed.path()).unwrap();
    let s = run_experiment(&plan, &p, &mut b).unwrap();
    assert_eq!(s.attempted, 3 * 2);

    assert_eq!(read(&a.forecasts_path()), read(&b.forecasts_path()));
    assert_eq!(read(&a.index_path()), read(&b.index_path()));
}

#[test]
fn thread_count_does_not_change_results() {
    let p = panel();
    let plan = small_plan(vec![ModelId::BvarConj, ModelId::Factor]);
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut store = ForecastStore::open(dir.path()).unwrap();
        pool.install(|| run_experiment(&plan, &p, &mut store)).unwrap();
        (read(&store.forecasts_path()), read(&store.index_path()))
    };
    let one = run(1);
    assert!(!one.0.is_empty());
    assert_eq!(one, run(4));
}

#[test]
fn forecasts_ignore_data_after_the_origin() {
    let p = panel();
    let plan = small_plan(vec![ModelId::Ar1, ModelId::BvarConj, ModelId::BvarAsym, ModelId::Factor]);
    let cutoff = ym(2000, 3);
    let row = p.row_of(cutoff).unwrap();
    let shifted = DMatrix::from_fn(p.n_obs(), p.n_vars(), |t, j| {
        let v = p.get(t, j).unwrap();
        if t > row {
            v * 3.0 + 10.0
        } else {
            v
        }
    });
    let mut q = TimeSeriesPanel::from_matrix(p.dates()[0], p.names().to_vec(), shifted, p.tcodes().to_vec()).unwrap();
    q.set_transformed(true);

    let da = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let mut a = ForecastStore::open(da.path()).unwrap();
    let mut b = ForecastStore::open(db.path()).unwrap();
    run_experiment(&plan, &p, &mut a).unwrap();
    run_experiment(&plan, &q, &mut b).unwrap();
    let early = |s: &ForecastStore| {
        s.records()
            .unwrap()
            .into_iter()
            .filter(|r| r.origin <= cutoff)
            .map(|r| (r.key(), r.value.to_bits()))
            .collect::<Vec<_>>()
    };
    let ea = early(&a);
    assert_eq!(ea.len(), 4 * 3 * 3 * 3);
    assert_eq!(ea, early(&b));

    assert!(audit_look_ahead(&a, &p, &plan).unwrap().is_empty());
    let flagged = audit_look_ahead(&a, &q, &plan).unwrap();
    assert_eq!(flagged.len(), 4 * 3);
    assert!(flagged.iter().all(|f| !f.contains("2000-01") && !f.contains("2000-03")));
}

#[test]
fn model_failures_become_gaps() {
    let p = panel();
    let row = p.row_of(ym(1995, 6)).unwrap();
    let mut m = p.values().clone();
    m[(row, 1)] = f64::NAN;
    let mut q = TimeSeriesPanel::from_matrix(p.dates()[0], p.names().to_vec(), m, p.tcodes().to_vec()).unwrap();
    q.set_transformed(true);
    let plan = small_plan(vec![ModelId::Ar1, ModelId::BvarConj]);
    let dir = tempfile::tempdir().unwrap();
    let mut store = ForecastStore::open(dir.path()).unwrap();
    let s = run_experiment(&plan, &q, &mut store).unwrap();
    assert_eq!(s.gaps.len(), 6);
    assert!(s.gaps.iter().all(|g| g.model == "bvar_conj" && g.diagnostic.contains("v1")));
    let n = store.records().unwrap().len();
    assert_eq!(n, 2 * 3 * 6 * 3 - gap_cells(&store, 3, 3));
    assert_eq!(n, 3 * 6 * 3);
}

#[test]
fn plan_checks() {
    let p = panel();
    let dir = tempfile::tempdir().unwrap();
    let mut store = ForecastStore::open(dir.path()).unwrap();
    let mut plan = small_plan(vec![ModelId::Ar1]);
    plan.last_origin = ym(2010, 1);
    assert!(matches!(run_experiment(&plan, &p, &mut store), Err(Error::Precondition(_))));
    let mut raw = p.clone();
    raw.set_transformed(false);
    assert!(run_experiment(&small_plan(vec![ModelId::Ar1]), &raw, &mut store).is_err());
    let bad = ExperimentPlan {
        models: vec![ModelId::Ar1, ModelId::Ar1],
        ..small_plan(vec![])
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn external_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(vec![ModelId::Ar1]);
    let path = dir.path().join("ext.csv");

    std::fs::write(
        &path,
        "model,variable,origin,horizon,value\n\
         tslm,v0,2000-01-01,1,0.5\n\
         tslm,v0,2000-01-01,2,0.4\n\
         tslm,v0,2001-01-01,1,0.3\n\
         tslm,v0,2000-02-01,9,0.3\n",
    )
    .unwrap();
    let out = ingest_external_forecasts(&path, Some(&plan)).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.out_of_plan.len(), 2);
    let mut store = ForecastStore::open(&dir.path().join("store")).unwrap();
    assert_eq!(store.ingest(&out).unwrap(), 4);
    assert_eq!(store.records().unwrap().len(), 2);
    assert_eq!(store.out_of_plan_records().unwrap().len(), 2);
    assert!(matches!(store.ingest(&out), Err(Error::Conflict(c)) if c.len() == 4));

    std::fs::write(&path, "model,variable,origin,horizon,value\nx,v0,2000-01,1,1\nx,v0,2000-01-01,1,2\n").unwrap();
    assert!(matches!(ingest_external_forecasts(&path, None), Err(Error::Conflict(c)) if c.len() == 1));
    std::fs::write(&path, "model,variable,origin,h,value\n").unwrap();
    assert!(matches!(ingest_external_forecasts(&path, None), Err(Error::Schema(_))));
    std::fs::write(&path, "model,variable,origin,horizon,value\nx,v0,2000-01,1,inf\n").unwrap();
    assert!(matches!(ingest_external_forecasts(&path, None), Err(Error::Validation(_))));
}

//! Panel ingestion: FRED-MD-layout CSV loading, stationarity transforms,
//! variable sets and estimation windows.

mod date;
mod panel;
mod sets;
mod transform;

pub use date::YearMonth;
pub use panel::{PanelSchema, TimeSeriesPanel};
pub use sets::{reference_code, SetKind, VariableSet};
pub use transform::{apply_transforms, transform_series, TransformCode};

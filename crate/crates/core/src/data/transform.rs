use serde::{Deserialize, Serialize};

use super::panel::TimeSeriesPanel;
use crate::error::{Error, Result};

/// FRED-MD stationarity transformation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    /// 1: x_t
    Level,
    /// 2: Δx_t
    Diff,
    /// 4: ln x_t
    LogLevel,
    /// 5: Δ ln x_t
    LogDiff,
    /// 6: Δ² ln x_t
    LogSecondDiff,
}

impl TransformCode {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(TransformCode::Level),
            2 => Ok(TransformCode::Diff),
            4 => Ok(TransformCode::LogLevel),
            5 => Ok(TransformCode::LogDiff),
            6 => Ok(TransformCode::LogSecondDiff),
            other => Err(Error::Validation(format!("unknown transform code {other}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TransformCode::Level => 1,
            TransformCode::Diff => 2,
            TransformCode::LogLevel => 4,
            TransformCode::LogDiff => 5,
            TransformCode::LogSecondDiff => 6,
        }
    }

    pub fn uses_log(self) -> bool {
        matches!(
            self,
            TransformCode::LogLevel | TransformCode::LogDiff | TransformCode::LogSecondDiff
        )
    }

    /// Number of leading observations consumed by differencing.
    pub fn diff_order(self) -> usize {
        match self {
            TransformCode::Level | TransformCode::LogLevel => 0,
            TransformCode::Diff | TransformCode::LogDiff => 1,
            TransformCode::LogSecondDiff => 2,
        }
    }

    /// Series kept in (log) levels, whose first own lag is centred on one.
    pub fn is_level(self) -> bool {
        matches!(self, TransformCode::Level | TransformCode::LogLevel)
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = Error;
    fn try_from(c: u8) -> Result<Self> {
        TransformCode::from_code(c)
    }
}

impl From<TransformCode> for u8 {
    fn from(c: TransformCode) -> u8 {
        c.code()
    }
}

fn difference(x: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; x.len()];
    for t in 1..x.len() {
        if let (Some(a), Some(b)) = (x[t], x[t - 1]) {
            out[t] = Some(a - b);
        }
    }
    out
}

/// Transform one series. `label` names the variable in error messages and
/// `date_of` renders an index as a date.
pub fn transform_series(
    x: &[Option<f64>],
    code: TransformCode,
    label: &str,
    date_of: impl Fn(usize) -> String,
) -> Result<Vec<Option<f64>>> {
    let base: Vec<Option<f64>> = if code.uses_log() {
        x.iter()
            .enumerate()
            .map(|(t, v)| match v {
                Some(v) if *v > 0.0 => Ok(Some(v.ln())),
                Some(v) => Err(Error::Domain(format!(
                    "log transform of non-positive value {v} for {label} at {}",
                    date_of(t)
                ))),
                None => Ok(None),
            })
            .collect::<Result<_>>()?
    } else {
        x.to_vec()
    };
    let mut out = base;
    for _ in 0..code.diff_order() {
        out = difference(&out);
    }
    Ok(out)
}

/// Apply each variable's transformation code. The time dimension is kept:
/// observations consumed by differencing become missing.
pub fn apply_transforms(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let mut columns = Vec::with_capacity(panel.n_vars());
    for j in 0..panel.n_vars() {
        let col = panel.column(j);
        let name = &panel.names()[j];
        columns.push(transform_series(&col, panel.tcodes()[j], name, |t| {
            panel.dates()[t].to_string()
        })?);
    }
    let mut out = TimeSeriesPanel::from_columns(
        panel.dates()[0],
        panel.names().to_vec(),
        &columns,
        panel.tcodes().to_vec(),
    )?;
    out.set_transformed(true);
    Ok(out)
}

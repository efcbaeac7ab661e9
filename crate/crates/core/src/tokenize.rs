//! Scaling, patching and uniform quantization of real-valued series into
//! the discrete inputs consumed by time-series foundation models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, quantile_sorted, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub size: usize,
    pub overlap: usize,
}

impl PatchSpec {
    pub fn new(size: usize, overlap: usize) -> Result<Self> {
        let s = PatchSpec { size, overlap };
        s.stride()?;
        Ok(s)
    }

    pub fn stride(&self) -> Result<usize> {
        if self.size == 0 || self.overlap >= self.size {
            return Err(Error::Config(format!(
                "patch size {} with overlap {} leaves no stride",
                self.size, self.overlap
            )));
        }
        Ok(self.size - self.overlap)
    }

    /// `(start, end)` of every patch over a series of length `len`.
    ///
    /// Without overlap a short remainder patch closes the series. With
    /// overlap only full windows are emitted, plus a remainder when the
    /// full windows would leave trailing points uncovered.
    pub fn bounds(&self, len: usize) -> Result<Vec<(usize, usize)>> {
        let stride = self.stride()?;
        if len == 0 {
            return Err(Error::Validation("cannot patch an empty series".into()));
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start + self.size <= len {
            out.push((start, start + self.size));
            start += stride;
        }
        let covered = out.last().map_or(0, |b| b.1);
        if covered < len {
            let tail = if out.is_empty() { 0 } else { start };
            out.push((tail, len));
        }
        Ok(out)
    }
}

pub fn patch(series: &[f64], spec: &PatchSpec) -> Result<Vec<Vec<f64>>> {
    Ok(spec
        .bounds(series.len())?
        .into_iter()
        .map(|(a, b)| series[a..b].to_vec())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    Uniform,
    DataDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub n_bins: u32,
    /// `[lo, hi)`; inferred from the series when absent.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
    #[serde(default = "uniform")]
    pub scheme: QuantScheme,
}

fn uniform() -> QuantScheme {
    QuantScheme::Uniform
}

impl QuantizerSpec {
    pub fn uniform(n_bins: u32, lo: f64, hi: f64) -> Self {
        QuantizerSpec {
            n_bins,
            range: Some((lo, hi)),
            scheme: QuantScheme::Uniform,
        }
    }

    fn check(&self) -> Result<()> {
        if self.scheme == QuantScheme::DataDependent {
            return Err(Error::Unsupported("data-dependent quantization".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {}", self.n_bins)));
        }
        if let Some((lo, hi)) = self.range {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("invalid range [{lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// The spec with its range fixed: the explicit one, or `[min, max + 1 ulp)`
    /// of `series`.
    pub fn resolved(&self, series: &[f64]) -> Result<QuantizerSpec> {
        self.check()?;
        if self.range.is_some() {
            return Ok(*self);
        }
        if series.is_empty() || series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("range inference needs a non-empty finite series".into()));
        }
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max).next_up();
        Ok(QuantizerSpec {
            range: Some((lo, hi)),
            ..*self
        })
    }
}

/// Tokens in `1..=B`: `1 + floor(B (x - lo) / (hi - lo))`, clamped to `B`.
pub fn quantize(series: &[f64], spec: &QuantizerSpec) -> Result<Vec<u32>> {
    let spec = spec.resolved(series)?;
    let (lo, hi) = spec.range.expect("resolved");
    let b = spec.n_bins;
    series
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if !(x >= lo && x < hi) {
                return Err(Error::Range(format!("value {x} at index {i} outside [{lo}, {hi})")));
            }
            let raw = (b as f64 * (x - lo) / (hi - lo)).floor() as u32;
            Ok((1 + raw).min(b))
        })
        .collect()
}

/// Bin midpoints; the spec must carry an explicit range.
pub fn dequantize(tokens: &[u32], spec: &QuantizerSpec) -> Result<Vec<f64>> {
    spec.check()?;
    let (lo, hi) = spec
        .range
        .ok_or_else(|| Error::Config("dequantization needs an explicit range".into()))?;
    let b = spec.n_bins;
    let width = (hi - lo) / b as f64;
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t < 1 || t > b {
                return Err(Error::Validation(format!("token {t} at index {i} outside 1..={b}")));
            }
            Ok(lo + (t as f64 - 0.5) * width)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// Sample standard deviation.
    Std,
    /// `Q3 - Q1`, inclusive linear-interpolation quartiles.
    Iqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScaleLevel {
    Global,
    /// Consecutive non-overlapping context windows; the last may be short.
    Window { length: usize },
    Patch { size: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerSpec {
    pub center: Center,
    pub spread: Spread,
    pub level: ScaleLevel,
}

/// One scaled stretch of the input, with the statistics that invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSegment {
    pub start: usize,
    pub values: Vec<f64>,
    pub center: f64,
    pub spread: f64,
}

impl ScaledSegment {
    pub fn unscale(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.spread + self.center).collect()
    }
}

fn statistics(x: &[f64], center: Center, spread: Spread) -> Result<(f64, f64)> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = match center {
        Center::Mean => mean(x),
        Center::Median => quantile_sorted(&sorted, 0.5),
    };
    let s = match spread {
        Spread::Std => {
            if x.len() < 2 {
                f64::NAN
            } else {
                sample_std(x)
            }
        }
        Spread::Iqr => quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Scale(format!("spread {s} on a segment of {} values", x.len())));
    }
    Ok((m, s))
}

pub fn scale(series: &[f64], spec: &ScalerSpec) -> Result<Vec<ScaledSegment>> {
    if series.is_empty() {
        return Err(Error::Validation("cannot scale an empty series".into()));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at index {i}")));
    }
    let bounds: Vec<(usize, usize)> = match spec.level {
        ScaleLevel::Global => vec![(0, series.len())],
        ScaleLevel::Window { length } => {
            if length == 0 {
                return Err(Error::Config("window length must be positive".into()));
            }
            (0..series.len())
                .step_by(length)
                .map(|a| (a, (a + length).min(series.len())))
                .collect()
        }
        ScaleLevel::Patch { size, overlap } => PatchSpec::new(size, overlap)?.bounds(series.len())?,
    };
    bounds
        .into_iter()
        .map(|(a, b)| {
            let seg = &series[a..b];
            let (m, s) = statistics(seg, spec.center, spec.spread)?;
            Ok(ScaledSegment {
                start: a,
                values: seg.iter().map(|v| (v - m) / s).collect(),
                center: m,
                spread: s,
            })
        })
        .collect()
}

/// Rebuild the original series from its segments; overlapping points are
/// taken from the first segment that covers them.
pub fn inverse_scale(segments: &[ScaledSegment]) -> Vec<f64> {
    let len = segments.iter().map(|s| s.start + s.values.len()).max().unwrap_or(0);
    let mut out = vec![f64::NAN; len];
    let mut filled = vec![false; len];
    for seg in segments {
        for (k, v) in seg.unscale().into_iter().enumerate() {
            let i = seg.start + k;
            if !filled[i] {
                out[i] = v;
                filled[i] = true;
            }
        }
    }
    out
}

/// Write `series_id,position,token` rows (positions from 0).
pub fn write_tokens_csv<W: Write>(mut w: W, rows: &[(String, Vec<u32>)]) -> Result<()> {
    writeln!(w, "series_id,position,token")?;
    for (id, tokens) in rows {
        for (i, t) in tokens.iter().enumerate() {
            writeln!(w, "{id},{i},{t}")?;
        }
    }
    Ok(())
}

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::date::YearMonth;
use super::sets::VariableSet;
use super::transform::TransformCode;
use crate::error::{Error, Result};

/// Where things live in a panel CSV. Defaults match the published FRED-MD
/// files: names on the first row, transform codes on the second, data after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSchema {
    pub names_row: usize,
    pub tcode_row: usize,
    pub data_start_row: usize,
    pub date_column: usize,
    pub missing_tokens: Vec<String>,
    /// Replace the file's code for these variables before validation.
    pub tcode_overrides: BTreeMap<String, u8>,
    /// Keep only these columns (file order is replaced by this order).
    pub columns: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            names_row: 0,
            tcode_row: 1,
            data_start_row: 2,
            date_column: 0,
            missing_tokens: vec!["".into(), "NA".into(), "NaN".into(), "nan".into(), ".".into()],
            tcode_overrides: BTreeMap::new(),
            columns: None,
        }
    }
}

impl PanelSchema {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("schema: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Monthly panel with an explicit observation mask.
///
/// Missing cells hold `NaN` in `values` and `false` in the mask; use
/// [`TimeSeriesPanel::get`] rather than reading `values` directly.
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel {
    dates: Vec<YearMonth>,
    names: Vec<String>,
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
    tcodes: Vec<TransformCode>,
    transformed: bool,
}

/// Panels are equal when dates, names, codes, masks and every observed cell
/// agree; the placeholder content of missing cells is ignored.
impl PartialEq for TimeSeriesPanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.names == other.names
            && self.tcodes == other.tcodes
            && self.transformed == other.transformed
            && self.observed == other.observed
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.observed.iter())
                .all(|((a, b), o)| !*o || a == b)
    }
}

impl TimeSeriesPanel {
    /// Build from a matrix where non-finite entries mark missing cells.
    pub fn from_matrix(
        start: YearMonth,
        names: Vec<String>,
        values: DMatrix<f64>,
        tcodes: Vec<TransformCode>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if names.len() != n || tcodes.len() != n {
            return Err(Error::Dimension(format!(
                "{} names and {} codes for {n} columns",
                names.len(),
                tcodes.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name {name:?}")));
            }
        }
        let observed = values.map(f64::is_finite);
        let values = values.map(|v| if v.is_finite() { v } else { f64::NAN });
        let dates = (0..t as i64).map(|i| start.add_months(i)).collect();
        Ok(TimeSeriesPanel {
            dates,
            names,
            values,
            observed,
            tcodes,
            transformed: false,
        })
    }

    pub fn from_columns(
        start: YearMonth,
        names: Vec<String>,
        columns: &[Vec<Option<f64>>],
        tcodes: Vec<TransformCode>,
    ) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::Dimension("ragged columns".into()));
        }
        let m = DMatrix::from_fn(t, columns.len(), |i, j| columns[j][i].unwrap_or(f64::NAN));
        Self::from_matrix(start, names, m, tcodes)
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tcodes(&self) -> &[TransformCode] {
        &self.tcodes
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn first_date(&self) -> Option<YearMonth> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<YearMonth> {
        self.dates.last().copied()
    }

    pub fn is_transformed(&self) -> bool {
        self.transformed
    }

    pub fn set_transformed(&mut self, transformed: bool) {
        self.transformed = transformed;
    }

    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        self.observed[(t, j)].then(|| self.values[(t, j)])
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        self.observed[(t, j)]
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.n_obs()).map(|t| self.get(t, j)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row_of(&self, date: YearMonth) -> Option<usize> {
        let first = self.first_date()?;
        let k = first.months_until(date);
        (k >= 0 && (k as usize) < self.n_obs()).then_some(k as usize)
    }

    /// Raw values, `NaN` where missing.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// True when every cell is observed.
    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }

    /// Rows in `[start, end]`, inclusive.
    pub fn estimation_window(&self, start: YearMonth, end: YearMonth) -> Result<TimeSeriesPanel> {
        let (first, last) = match (self.first_date(), self.last_date()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Range("empty panel".into())),
        };
        if start > end {
            return Err(Error::Range(format!("window start {start} after end {end}")));
        }
        if start < first || end > last {
            return Err(Error::Range(format!(
                "window [{start}, {end}] outside panel range [{first}, {last}]"
            )));
        }
        let a = first.months_until(start) as usize;
        let b = first.months_until(end) as usize;
        self.slice_rows(a, b + 1)
    }

    fn slice_rows(&self, a: usize, b: usize) -> Result<TimeSeriesPanel> {
        if a >= b {
            return Err(Error::Range("empty window".into()));
        }
        Ok(TimeSeriesPanel {
            dates: self.dates[a..b].to_vec(),
            names: self.names.clone(),
            values: self.values.rows(a, b - a).into_owned(),
            observed: self.observed.rows(a, b - a).into_owned(),
            tcodes: self.tcodes.clone(),
            transformed: self.transformed,
        })
    }

    /// Columns reordered to the set's order; everything else dropped.
    pub fn select_set(&self, set: &VariableSet) -> Result<TimeSeriesPanel> {
        self.select_columns(&set.members)
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<TimeSeriesPanel> {
        let idx = names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .ok_or_else(|| Error::Lookup(format!("variable {:?} not in panel", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = self.n_obs();
        Ok(TimeSeriesPanel {
            dates: self.dates.clone(),
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            values: DMatrix::from_fn(t, idx.len(), |i, k| self.values[(i, idx[k])]),
            observed: DMatrix::from_fn(t, idx.len(), |i, k| self.observed[(i, idx[k])]),
            tcodes: idx.iter().map(|&j| self.tcodes[j]).collect(),
            transformed: self.transformed,
        })
    }

    /// Replace transform codes by name; unknown names are a lookup error.
    pub fn with_codes(&self, codes: &BTreeMap<String, TransformCode>) -> Result<TimeSeriesPanel> {
        let mut out = self.clone();
        for (name, code) in codes {
            let j = self
                .index_of(name)
                .ok_or_else(|| Error::Lookup(format!("variable {name:?} not in panel")))?;
            out.tcodes[j] = *code;
        }
        Ok(out)
    }

    /// SHA-256 over dates, names and observed cells. Used by the look-ahead audit.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.dates {
            h.update(d.to_string().as_bytes());
        }
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for j in 0..self.n_vars() {
            for t in 0..self.n_obs() {
                match self.get(t, j) {
                    Some(v) => h.update(v.to_bits().to_le_bytes()),
                    None => h.update([0xffu8; 1]),
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Load a panel CSV laid out per `schema`.
    pub fn load(path: &Path, schema: &PanelSchema) -> Result<TimeSeriesPanel> {
        let file = File::open(path)?;
        Self::read(file, schema)
    }

    pub fn read<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<TimeSeriesPanel> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        let header = rows
            .get(schema.names_row)
            .ok_or_else(|| Error::Schema("missing header row".into()))?;
        let code_row = rows
            .get(schema.tcode_row)
            .ok_or_else(|| Error::Schema("missing transform-code row".into()))?;
        let transformed = code_row
            .get(schema.date_column)
            .is_some_and(|c| c.trim().eq_ignore_ascii_case("transformed"));

        let mut all_names: Vec<(usize, String)> = Vec::new();
        let mut seen = HashSet::new();
        for (c, name) in header.iter().enumerate() {
            if c == schema.date_column {
                continue;
            }
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Schema(format!("empty variable name in column {}", c + 1)));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate variable name {name:?}")));
            }
            all_names.push((c, name));
        }

        let keep: Vec<(usize, String)> = match &schema.columns {
            None => all_names,
            Some(wanted) => {
                let by_name: HashMap<&str, usize> =
                    all_names.iter().map(|(c, n)| (n.as_str(), *c)).collect();
                wanted
                    .iter()
                    .map(|w| {
                        by_name
                            .get(w.as_str())
                            .map(|c| (*c, w.clone()))
                            .ok_or_else(|| Error::Lookup(format!("variable {w:?} not in file")))
                    })
                    .collect::<Result<_>>()?
            }
        };

        let mut tcodes = Vec::with_capacity(keep.len());
        for (c, name) in &keep {
            let code = match schema.tcode_overrides.get(name) {
                Some(code) => *code as f64,
                None => {
                    let cell = code_row.get(*c).unwrap_or("").trim();
                    cell.parse::<f64>().map_err(|_| {
                        Error::Validation(format!("bad transform code {cell:?} for {name}"))
                    })?
                }
            };
            if code.fract() != 0.0 || !(0.0..=255.0).contains(&code) {
                return Err(Error::Validation(format!("unknown transform code {code} for {name}")));
            }
            let code = TransformCode::from_code(code as u8)
                .map_err(|_| Error::Validation(format!("unknown transform code {code} for {name}")))?;
            tcodes.push(code);
        }

        let is_missing = |s: &str| schema.missing_tokens.iter().any(|m| m == s);
        let mut dates: Vec<YearMonth> = Vec::new();
        let mut data: Vec<Vec<f64>> = Vec::new();
        for (r, rec) in rows.iter().enumerate().skip(schema.data_start_row) {
            let date_cell = rec.get(schema.date_column).unwrap_or("").trim();
            if date_cell.is_empty() && rec.iter().all(|c| c.trim().is_empty()) {
                continue;
            }
            let date = YearMonth::parse(date_cell).map_err(|_| Error::Parse {
                row: r + 1,
                msg: format!("malformed date {date_cell:?}"),
            })?;
            if let Some(prev) = dates.last() {
                if prev.succ() != date {
                    return Err(Error::Validation(format!(
                        "row {}: date {date} does not follow {prev} by one month",
                        r + 1
                    )));
                }
            }
            dates.push(date);
            data.push(
                keep.iter()
                    .map(|(c, _)| {
                        let cell = rec.get(*c).unwrap_or("").trim();
                        if is_missing(cell) {
                            f64::NAN
                        } else {
                            cell.parse::<f64>().unwrap_or(f64::NAN)
                        }
                    })
                    .collect(),
            );
        }
        let start = *dates
            .first()
            .ok_or_else(|| Error::Schema("no data rows".into()))?;
        let m = DMatrix::from_fn(dates.len(), keep.len(), |i, j| data[i][j]);
        let mut panel =
            Self::from_matrix(start, keep.into_iter().map(|(_, n)| n).collect(), m, tcodes)?;
        panel.transformed = transformed;
        Ok(panel)
    }

    /// Write in the default schema with ISO-8601 dates. The code row is
    /// labelled `transformed` when the values already carry their transforms.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        let mut codes = vec![if self.transformed { "transformed" } else { "transform" }.to_string()];
        codes.extend(self.tcodes.iter().map(|c| c.code().to_string()));
        wtr.write_record(&codes)?;
        for t in 0..self.n_obs() {
            let mut row = vec![self.dates[t].to_iso_date()];
            row.extend((0..self.n_vars()).map(|j| match self.get(t, j) {
                Some(v) => format!("{v}"),
                None => String::new(),
            }));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

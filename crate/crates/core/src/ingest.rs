//! CSV parsing, vocabularies, continuous grids and windowing.

use std::collections::HashMap;
use std::io::Read;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CurrentTensor, Dims, EncodedWindow, EventRecord};

const LOWER_QUANTILE: f64 = 0.001;
const UPPER_QUANTILE: f64 = 0.999;

/// Contiguous intervals covering the observed range of one continuous
/// attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    edges: Vec<f64>,
}

impl GridSpec {
    /// Build from explicit edges, which must be finite and strictly increasing.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::Config(format!(
                "a grid needs at least 2 intervals, got {} edges",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid edges must be finite and strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn median_width(&self) -> f64 {
        median(&mut self.widths())
    }

    /// Interval containing `x`; values outside the covered range clamp to the
    /// first or last interval.
    pub fn locate(&self, x: f64) -> usize {
        let g = self.count();
        // number of interior edges <= x
        let interior = &self.edges[1..g];
        interior.partition_point(|&e| e <= x).min(g - 1)
    }
}

pub fn locate_grid(x: f64, spec: &GridSpec) -> usize {
    spec.locate(x)
}

/// Equal-width grid over the 0.1%–99.9% quantile range of `samples`, with the
/// outer intervals stretched to the sample extremes.
pub fn build_grid(samples: &[f64], grid_count: usize) -> Result<GridSpec> {
    if grid_count < 2 {
        return Err(Error::Config(format!("grid count must be >= 2, got {grid_count}")));
    }
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (xs.first(), xs.last()) else {
        return Err(Error::DegenerateRange("no finite samples".into()));
    };
    if hi <= lo {
        return Err(Error::DegenerateRange(format!("all samples equal {lo}")));
    }
    let mut q_lo = quantile_sorted(&xs, LOWER_QUANTILE);
    let mut q_hi = quantile_sorted(&xs, UPPER_QUANTILE);
    if q_hi <= q_lo {
        // heavy ties at the trimmed ends
        q_lo = lo;
        q_hi = hi;
    }
    let step = (q_hi - q_lo) / grid_count as f64;
    let mut edges: Vec<f64> = (0..=grid_count).map(|i| q_lo + step * i as f64).collect();
    edges[0] = lo;
    edges[grid_count] = hi;
    // the outer stretch can only widen, so interior edges stay ordered unless
    // the quantile span is tiny relative to rounding
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        let step = (hi - lo) / grid_count as f64;
        edges = (0..=grid_count).map(|i| lo + step * i as f64).collect();
        edges[grid_count] = hi;
    }
    GridSpec::from_edges(edges)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < xs.len() {
        xs[i] + frac * (xs[i + 1] - xs[i])
    } else {
        xs[i]
    }
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median gap between consecutive distinct timestamps, `None` with fewer than
/// two.
pub fn median_gap(timestamps: &[f64]) -> Option<f64> {
    let mut gaps: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    (!gaps.is_empty()).then(|| median(&mut gaps))
}

/// String-to-index maps for the categorical attributes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    attrs: Vec<Vec<String>>,
    #[serde(skip)]
    lookup: Vec<HashMap<String, usize>>,
}

impl Vocab {
    pub fn new(n_attrs: usize) -> Self {
        Self {
            attrs: vec![Vec::new(); n_attrs],
            lookup: vec![HashMap::new(); n_attrs],
        }
    }

    /// Index for `name`, assigning the next free one when unseen.
    pub fn intern(&mut self, attr: usize, name: &str) -> usize {
        if let Some(&i) = self.lookup[attr].get(name) {
            return i;
        }
        let i = self.attrs[attr].len();
        self.attrs[attr].push(name.to_owned());
        self.lookup[attr].insert(name.to_owned(), i);
        i
    }

    pub fn index(&self, attr: usize, name: &str) -> Option<usize> {
        self.lookup[attr].get(name).copied()
    }

    pub fn name(&self, attr: usize, unit: usize) -> Option<&str> {
        self.attrs[attr].get(unit).map(String::as_str)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attrs.iter().map(Vec::len).collect()
    }

    pub fn n_attrs(&self) -> usize {
        self.attrs.len()
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnRoles {
    pub timestamp: String,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    /// Ground-truth column; `None` means use `label` when present.
    pub label: Option<String>,
}

/// Records parsed from a CSV file.
#[derive(Debug, Clone)]
pub struct ParsedStream {
    pub records: Vec<EventRecord>,
    pub vocab: Vocab,
    /// Raw timestamp of the first record, subtracted from all timestamps.
    pub origin: f64,
}

/// Parse an event CSV. Line numbers in errors count the header as line 1.
pub fn read_events<R: Read>(reader: R, roles: &ColumnRoles) -> Result<ParsedStream> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(1, format!("missing column `{name}`")))
    };
    let ts_col = find(&roles.timestamp)?;
    let cat_cols = roles.categorical.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let cont_cols = roles.continuous.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let label_col = match &roles.label {
        Some(name) => Some(find(name)?),
        None => header.iter().position(|h| h == "label"),
    };

    let mut vocab = Vocab::new(cat_cols.len());
    let mut records = Vec::new();
    let mut origin = None;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| row.get(col).unwrap_or("");
        let raw_ts = parse_timestamp(field(ts_col)).ok_or_else(|| {
            Error::schema(line, format!("bad timestamp `{}`", field(ts_col)))
        })?;
        let origin = *origin.get_or_insert(raw_ts);
        let cat = cat_cols
            .iter()
            .enumerate()
            .map(|(m, &col)| vocab.intern(m, field(col)))
            .collect();
        let cont = cont_cols
            .iter()
            .map(|&col| {
                field(col)
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::schema(line, format!("bad number `{}` in `{}`", field(col), &header[col]))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match label_col {
            None => None,
            Some(col) => Some(match field(col) {
                "0" => false,
                "1" => true,
                other => return Err(Error::schema(line, format!("label must be 0 or 1, got `{other}`"))),
            }),
        };
        records.push(EventRecord {
            timestamp: raw_ts - origin,
            cat,
            cont,
            label,
        });
    }
    Ok(ParsedStream {
        records,
        vocab,
        origin: origin.unwrap_or(0.0),
    })
}

/// Epoch seconds or an RFC 3339 date-time.
fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(x) = s.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    let dt = DateTime::parse_from_rfc3339(s).ok()?;
    Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

/// Split sorted records into windows of `tc` distinct timestamps. The last
/// window may be shorter.
pub fn window_stream(records: Vec<EventRecord>, tc: usize) -> Result<Vec<CurrentTensor>> {
    if tc == 0 {
        return Err(Error::Config("window size must be >= 1".into()));
    }
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Ordering {
            index: i + 1,
            previous: records[i].timestamp,
            current: records[i + 1].timestamp,
        });
    }
    let mut windows = Vec::new();
    let mut timestamps: Vec<f64> = Vec::with_capacity(tc);
    let mut groups: Vec<Vec<EventRecord>> = Vec::with_capacity(tc);
    let mut anchor: Option<f64> = None;
    let mut flush = |timestamps: &mut Vec<f64>, groups: &mut Vec<Vec<EventRecord>>| {
        let ts = std::mem::take(timestamps);
        let a = anchor.unwrap_or_else(|| ts[0] - median_gap(&ts).unwrap_or(1.0));
        anchor = ts.last().copied();
        windows.push(CurrentTensor {
            index: windows.len(),
            timestamps: ts,
            records: std::mem::take(groups),
            anchor: a,
        });
    };
    for rec in records {
        if timestamps.last() != Some(&rec.timestamp) {
            if timestamps.len() == tc {
                flush(&mut timestamps, &mut groups);
            }
            timestamps.push(rec.timestamp);
            groups.push(Vec::new());
        }
        groups.last_mut().expect("group pushed above").push(rec);
    }
    if !timestamps.is_empty() {
        flush(&mut timestamps, &mut groups);
    }
    Ok(windows)
}

/// Grids for every continuous attribute, built from one window's values.
pub fn grids_from_window(window: &CurrentTensor, grid_counts: &[usize]) -> Result<Vec<GridSpec>> {
    grid_counts
        .iter()
        .enumerate()
        .map(|(m, &g)| {
            let xs: Vec<f64> = window.iter_records().map(|(_, r)| r.cont[m]).collect();
            build_grid(&xs, g).map_err(|e| match e {
                Error::DegenerateRange(msg) => {
                    Error::DegenerateRange(format!("continuous attribute {m}: {msg}"))
                }
                other => other,
            })
        })
        .collect()
}

pub fn dims_for(components: usize, vocab: &Vocab, grids: &[GridSpec]) -> Dims {
    Dims::new(
        components,
        vocab.sizes(),
        grids.iter().map(GridSpec::count).collect(),
    )
}

/// Flatten a window into unit and grid ids.
pub fn encode(window: &CurrentTensor, grids: &[GridSpec]) -> EncodedWindow {
    let n_categorical = window
        .iter_records()
        .next()
        .map_or(0, |(_, r)| r.cat.len());
    let n = window.n_events();
    let mut slot = Vec::with_capacity(n);
    let mut cat = Vec::with_capacity(n * n_categorical);
    let mut grid = Vec::with_capacity(n * grids.len());
    for (t, r) in window.iter_records() {
        slot.push(t);
        cat.extend_from_slice(&r.cat);
        grid.extend(grids.iter().zip(&r.cont).map(|(spec, &x)| spec.locate(x)));
    }
    EncodedWindow {
        timestamps: window.timestamps.clone(),
        interval: window.interval(),
        slot,
        cat,
        grid,
        n_categorical,
        n_continuous: grids.len(),
    }
}

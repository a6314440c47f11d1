//! Domain types shared by ingestion, inference and detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::GaussState;

/// Dense row-major matrix used for counts and per-component parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Table<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::default())
    }
}

impl<T: Copy> Table<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

impl Table<u64> {
    #[inline]
    pub fn incr(&mut self, r: usize, c: usize) {
        self.data[r * self.cols + c] += 1;
    }

    #[inline]
    pub fn decr(&mut self, r: usize, c: usize) {
        self.data[r * self.cols + c] -= 1;
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.row(r).iter().sum()
    }
}

/// One timestamped observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Seconds since the first record of the stream.
    pub timestamp: f64,
    /// Unit index per categorical attribute.
    pub cat: Vec<usize>,
    /// Value per continuous attribute.
    pub cont: Vec<f64>,
    /// Ground truth for evaluation. Inference never reads it.
    pub label: Option<bool>,
}

impl EventRecord {
    pub fn new(timestamp: f64, cat: Vec<usize>, cont: Vec<f64>) -> Self {
        Self {
            timestamp,
            cat,
            cont,
            label: None,
        }
    }
}

/// Attribute cardinalities of a stream plus the component count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub components: usize,
    /// `U` per categorical attribute.
    pub units: Vec<usize>,
    /// `G` per continuous attribute.
    pub grids: Vec<usize>,
}

impl Dims {
    pub fn new(components: usize, units: Vec<usize>, grids: Vec<usize>) -> Self {
        Self {
            components,
            units,
            grids,
        }
    }

    pub fn n_categorical(&self) -> usize {
        self.units.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.grids.len()
    }
}

/// A window of `Tc` distinct timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTensor {
    /// Position of the window in the stream, starting at 0.
    pub index: usize,
    /// Strictly increasing distinct timestamps.
    pub timestamps: Vec<f64>,
    /// Records grouped per timestamp, aligned with `timestamps`.
    pub records: Vec<Vec<EventRecord>>,
    /// Last timestamp before this window (`τ_ts`). The window interval is
    /// measured from here to the last timestamp of the window.
    pub anchor: f64,
}

impl CurrentTensor {
    pub fn n_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }

    /// Interval `δ_c` covered by the window.
    pub fn interval(&self) -> f64 {
        self.timestamps.last().map_or(0.0, |last| last - self.anchor)
    }

    pub fn iter_records(&self) -> impl Iterator<Item = (usize, &EventRecord)> {
        self.records
            .iter()
            .enumerate()
            .flat_map(|(t, rs)| rs.iter().map(move |r| (t, r)))
    }
}

/// A window flattened into index form, ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    pub timestamps: Vec<f64>,
    pub interval: f64,
    /// Timestamp slot of each record.
    pub slot: Vec<usize>,
    /// Unit ids, row-major `n_events x M1`.
    pub cat: Vec<usize>,
    /// Grid ids, row-major `n_events x M2`.
    pub grid: Vec<usize>,
    pub n_categorical: usize,
    pub n_continuous: usize,
}

impl EncodedWindow {
    pub fn n_events(&self) -> usize {
        self.slot.len()
    }

    pub fn n_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    #[inline]
    pub fn cat_of(&self, n: usize) -> &[usize] {
        &self.cat[n * self.n_categorical..(n + 1) * self.n_categorical]
    }

    #[inline]
    pub fn grid_of(&self, n: usize) -> &[usize] {
        &self.grid[n * self.n_continuous..(n + 1) * self.n_continuous]
    }

    /// Records per timestamp slot (`N_t`).
    pub fn per_slot(&self) -> Vec<u64> {
        let mut n_t = vec![0u64; self.n_timestamps()];
        for &t in &self.slot {
            n_t[t] += 1;
        }
        n_t
    }

    /// Check every id against the dimensions.
    pub fn check(&self, dims: &Dims) -> Result<()> {
        if dims.n_categorical() != self.n_categorical || dims.n_continuous() != self.n_continuous {
            return Err(Error::Contract(format!(
                "window has {}+{} attributes, model has {}+{}",
                self.n_categorical,
                self.n_continuous,
                dims.n_categorical(),
                dims.n_continuous()
            )));
        }
        for n in 0..self.n_events() {
            if self.slot[n] >= self.n_timestamps() {
                return Err(Error::Contract(format!("record {n}: slot out of range")));
            }
            for (m, &u) in self.cat_of(n).iter().enumerate() {
                if u >= dims.units[m] {
                    return Err(Error::Contract(format!(
                        "record {n}: unit {u} >= U[{m}] = {}",
                        dims.units[m]
                    )));
                }
            }
            for (m, &g) in self.grid_of(n).iter().enumerate() {
                if g >= dims.grids[m] {
                    return Err(Error::Contract(format!(
                        "record {n}: grid {g} >= G[{m}] = {}",
                        dims.grids[m]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-window count statistics under an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountStats {
    /// Records per component.
    pub n_k: Vec<u64>,
    /// Component x unit counts per categorical attribute.
    pub n_mode: Vec<Table<u64>>,
    /// Component x grid counts per continuous attribute.
    pub n_grid: Vec<Table<u64>>,
    /// Timestamp x component counts.
    pub n_tk: Table<u64>,
}

impl CountStats {
    pub fn zeros(dims: &Dims, n_timestamps: usize) -> Self {
        let k = dims.components;
        Self {
            n_k: vec![0; k],
            n_mode: dims.units.iter().map(|&u| Table::zeros(k, u)).collect(),
            n_grid: dims.grids.iter().map(|&g| Table::zeros(k, g)).collect(),
            n_tk: Table::zeros(n_timestamps, k),
        }
    }

    #[inline]
    pub fn add(&mut self, window: &EncodedWindow, n: usize, k: usize) {
        self.n_k[k] += 1;
        self.n_tk.incr(window.slot[n], k);
        for (m, &u) in window.cat_of(n).iter().enumerate() {
            self.n_mode[m].incr(k, u);
        }
        for (m, &g) in window.grid_of(n).iter().enumerate() {
            self.n_grid[m].incr(k, g);
        }
    }

    #[inline]
    pub fn remove(&mut self, window: &EncodedWindow, n: usize, k: usize) {
        self.n_k[k] -= 1;
        self.n_tk.decr(window.slot[n], k);
        for (m, &u) in window.cat_of(n).iter().enumerate() {
            self.n_mode[m].decr(k, u);
        }
        for (m, &g) in window.grid_of(n).iter().enumerate() {
            self.n_grid[m].decr(k, g);
        }
    }

    pub fn total(&self) -> u64 {
        self.n_k.iter().sum()
    }

    /// Verify the marginal identities between the count families.
    pub fn check_consistency(&self, per_slot: &[u64]) -> Result<()> {
        let k = self.n_k.len();
        let fail = |msg: String| Err(Error::Contract(msg));
        let total: u64 = per_slot.iter().sum();
        if self.total() != total {
            return fail(format!("sum of n_k {} != {total} records", self.total()));
        }
        for (m, table) in self.n_mode.iter().chain(self.n_grid.iter()).enumerate() {
            for c in 0..k {
                if table.row_sum(c) != self.n_k[c] {
                    return fail(format!("attribute table {m} row {c} does not sum to n_k"));
                }
            }
        }
        for (t, &nt) in per_slot.iter().enumerate() {
            if self.n_tk.row_sum(t) != nt {
                return fail(format!("n_tk row {t} does not sum to N_t = {nt}"));
            }
        }
        Ok(())
    }
}

/// Build count statistics from scratch for an assignment vector.
pub fn counts_from_assignments(
    window: &EncodedWindow,
    z: &[usize],
    dims: &Dims,
) -> Result<CountStats> {
    if z.len() != window.n_events() {
        return Err(Error::Contract(format!(
            "{} assignments for {} records",
            z.len(),
            window.n_events()
        )));
    }
    window.check(dims)?;
    if let Some((n, &k)) = z.iter().enumerate().find(|(_, &k)| k >= dims.components) {
        return Err(Error::Contract(format!(
            "record {n}: component {k} >= K = {}",
            dims.components
        )));
    }
    let mut counts = CountStats::zeros(dims, window.n_timestamps());
    for (n, &k) in z.iter().enumerate() {
        counts.add(window, n, k);
    }
    Ok(counts)
}

/// Per-component weight trajectory over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTrajectory {
    /// Smoothed states aligned with the window timestamps.
    pub smoothed: Vec<GaussState>,
}

/// Model parameter set of the latest window, plus the snapshots the next
/// window uses as its prior means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Component x unit categorical distributions, one per attribute.
    pub a: Vec<Table<f64>>,
    /// Weight dynamics of the latest window, one per component.
    pub b: Vec<ComponentTrajectory>,
    /// Timestamps the trajectories are aligned with.
    pub b_times: Vec<f64>,
    /// Component x grid log-density values, one per attribute.
    pub c: Vec<Table<f64>>,
    pub a_hat: Vec<Table<f64>>,
    pub c_hat: Vec<Table<f64>>,
}

impl ModelParams {
    /// Neutral starting point: uniform categorical rows and flat densities.
    pub fn initial(dims: &Dims) -> Self {
        let k = dims.components;
        let a: Vec<Table<f64>> = dims
            .units
            .iter()
            .map(|&u| Table::filled(k, u, 1.0 / u as f64))
            .collect();
        let c: Vec<Table<f64>> = dims.grids.iter().map(|&g| Table::zeros(k, g)).collect();
        Self {
            a_hat: a.clone(),
            c_hat: c.clone(),
            a,
            b: Vec::new(),
            b_times: Vec::new(),
            c,
        }
    }

    /// Promote the converged `A` and `C` to the snapshots for the next window.
    pub fn snapshot(&mut self) {
        self.a_hat = self.a.clone();
        self.c_hat = self.c.clone();
    }
}

/// Accumulated statistics over all windows judged normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub normal_time: f64,
    pub s_k: Vec<u64>,
    pub s_mode: Vec<Table<u64>>,
    pub s_grid: Vec<Table<u64>>,
}

impl StreamStats {
    pub fn new(dims: &Dims) -> Self {
        let k = dims.components;
        Self {
            normal_time: 0.0,
            s_k: vec![0; k],
            s_mode: dims.units.iter().map(|&u| Table::zeros(k, u)).collect(),
            s_grid: dims.grids.iter().map(|&g| Table::zeros(k, g)).collect(),
        }
    }

    /// Add one window's counts. Fails without modifying `self` on overflow.
    pub fn accumulate(&mut self, counts: &CountStats, interval: f64) -> Result<()> {
        fn add_all(dst: &[u64], src: &[u64], what: &'static str) -> Result<Vec<u64>> {
            dst.iter()
                .zip(src)
                .map(|(a, b)| a.checked_add(*b).ok_or(Error::Overflow(what)))
                .collect()
        }
        let s_k = add_all(&self.s_k, &counts.n_k, "component counts")?;
        let s_mode = self
            .s_mode
            .iter()
            .zip(&counts.n_mode)
            .map(|(s, n)| add_all(s.as_slice(), n.as_slice(), "unit counts"))
            .collect::<Result<Vec<_>>>()?;
        let s_grid = self
            .s_grid
            .iter()
            .zip(&counts.n_grid)
            .map(|(s, n)| add_all(s.as_slice(), n.as_slice(), "grid counts"))
            .collect::<Result<Vec<_>>>()?;

        self.s_k = s_k;
        for (table, new) in self.s_mode.iter_mut().zip(s_mode) {
            table.as_mut_slice().copy_from_slice(&new);
        }
        for (table, new) in self.s_grid.iter_mut().zip(s_grid) {
            table.as_mut_slice().copy_from_slice(&new);
        }
        self.normal_time += interval;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(slots: Vec<usize>, cat: Vec<usize>, grid: Vec<usize>, t: usize) -> EncodedWindow {
        let n = slots.len();
        EncodedWindow {
            timestamps: (0..t).map(|i| i as f64).collect(),
            interval: t as f64,
            n_categorical: cat.len().checked_div(n).unwrap_or(1),
            n_continuous: grid.len().checked_div(n).unwrap_or(1),
            slot: slots,
            cat,
            grid,
        }
    }

    #[test]
    fn empty_window_has_zero_counts() {
        let dims = Dims::new(4, vec![3], vec![5]);
        let w = window(vec![], vec![], vec![], 2);
        let c = counts_from_assignments(&w, &[], &dims).unwrap();
        assert_eq!(c.total(), 0);
        assert!(c.n_tk.as_slice().iter().all(|&v| v == 0));
        c.check_consistency(&w.per_slot()).unwrap();
    }

    #[test]
    fn single_record() {
        let dims = Dims::new(5, vec![3], vec![5]);
        let w = window(vec![0], vec![2], vec![4], 1);
        let c = counts_from_assignments(&w, &[3], &dims).unwrap();
        assert_eq!(c.n_k, vec![0, 0, 0, 1, 0]);
        assert_eq!(c.n_mode[0].get(3, 2), 1);
        assert_eq!(c.n_grid[0].get(3, 4), 1);
    }

    #[test]
    fn five_records_same_slot() {
        let dims = Dims::new(2, vec![3], vec![4]);
        let w = window(vec![0; 5], vec![0, 1, 2, 0, 1], vec![0, 1, 2, 3, 3], 1);
        let c = counts_from_assignments(&w, &[0; 5], &dims).unwrap();
        assert_eq!(c.n_tk.get(0, 0), 5);
        assert_eq!(c.total(), 5);
        assert_eq!(c.n_grid[0].row(0), &[1, 1, 1, 2]);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let dims = Dims::new(2, vec![3], vec![4]);
        let w = window(vec![0], vec![1], vec![1], 1);
        assert!(counts_from_assignments(&w, &[2], &dims).is_err());
        let w = window(vec![0], vec![3], vec![1], 1);
        assert!(counts_from_assignments(&w, &[0], &dims).is_err());
        let w = window(vec![0], vec![0], vec![4], 1);
        assert!(counts_from_assignments(&w, &[0], &dims).is_err());
        let w = window(vec![0], vec![0], vec![0], 1);
        assert!(counts_from_assignments(&w, &[0, 0], &dims).is_err());
    }

    #[test]
    fn stream_stats_accumulate_and_saturate() {
        let dims = Dims::new(2, vec![2], vec![2]);
        let w = window(vec![0, 0], vec![0, 1], vec![1, 1], 1);
        let c = counts_from_assignments(&w, &[0, 1], &dims).unwrap();
        let mut s = StreamStats::new(&dims);
        s.accumulate(&c, 3.0).unwrap();
        s.accumulate(&c, 3.0).unwrap();
        assert_eq!(s.normal_time, 6.0);
        assert_eq!(s.s_k, vec![2, 2]);
        assert_eq!(s.s_grid[0].row(1), &[0, 2]);

        s.s_k[0] = u64::MAX;
        let before = s.clone();
        assert!(matches!(s.accumulate(&c, 1.0), Err(Error::Overflow(_))));
        assert_eq!(s, before);
    }

    #[test]
    fn initial_params_are_neutral() {
        let dims = Dims::new(3, vec![4, 2], vec![5]);
        let p = ModelParams::initial(&dims);
        for row in p.a_hat[0].iter_rows() {
            assert!(row.iter().all(|&v| v == 0.25));
        }
        assert!(p.c_hat[0].as_slice().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn counts_satisfy_invariants(
            k in 1usize..6,
            t in 1usize..5,
            recs in prop::collection::vec((0usize..100, 0usize..100, 0usize..100, 0usize..100, 0usize..100), 0..200),
        ) {
            let dims = Dims::new(k, vec![3, 4], vec![6]);
            let slots: Vec<usize> = recs.iter().map(|r| r.0 % t).collect();
            let cat: Vec<usize> = recs.iter().flat_map(|r| [r.1 % 3, r.2 % 4]).collect();
            let grid: Vec<usize> = recs.iter().map(|r| r.3 % 6).collect();
            let z: Vec<usize> = recs.iter().map(|r| r.4 % k).collect();
            let mut w = window(slots, cat, grid, t);
            w.n_categorical = 2;
            w.n_continuous = 1;
            let c = counts_from_assignments(&w, &z, &dims).unwrap();
            c.check_consistency(&w.per_slot()).unwrap();
            prop_assert_eq!(c.total() as usize, recs.len());
        }
    }
}

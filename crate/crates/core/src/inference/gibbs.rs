//! Collapsed Gibbs sampling of record-to-component assignments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{counts_from_assignments, CountStats, Dims, EncodedWindow, Table};
use crate::sampling::{normalize_log, sample_log_categorical};

use super::density::log_grid_probabilities;

/// Everything the per-record conditional needs besides the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTables {
    /// `log softmax(B(τ_t))`, timestamps x components.
    pub log_weight: Table<f64>,
    /// Persistence per categorical attribute.
    pub alpha: Vec<f64>,
    /// `α Â`, one component x unit table per categorical attribute.
    pub prior_mass: Vec<Table<f64>>,
    /// Log cell probabilities under `Ĉ`, one component x grid table per
    /// continuous attribute.
    pub log_density: Vec<Table<f64>>,
}

impl ConditionalTables {
    pub fn new(
        log_weight: Table<f64>,
        alpha: Vec<f64>,
        a_hat: &[Table<f64>],
        c_hat: &[Table<f64>],
        log_widths: &[&[f64]],
    ) -> Self {
        let prior_mass = a_hat
            .iter()
            .zip(&alpha)
            .map(|(a, &al)| {
                let mut t = a.clone();
                t.as_mut_slice().iter_mut().for_each(|v| *v *= al);
                t
            })
            .collect();
        let log_density = c_hat
            .iter()
            .zip(log_widths)
            .map(|(c, lw)| {
                let mut t = Table::zeros(c.rows(), c.cols());
                for k in 0..c.rows() {
                    t.row_mut(k)
                        .copy_from_slice(&log_grid_probabilities(c.row(k), lw));
                }
                t
            })
            .collect();
        Self {
            log_weight,
            alpha,
            prior_mass,
            log_density,
        }
    }

    pub fn components(&self) -> usize {
        self.log_weight.cols()
    }
}

/// Probability of each component for record `n`, written into `out`.
///
/// `counts` must already exclude the record itself.
pub fn component_conditional(
    window: &EncodedWindow,
    n: usize,
    counts: &CountStats,
    tables: &ConditionalTables,
    out: &mut [f64],
) -> Result<()> {
    log_conditional(window, n, counts, tables, out);
    normalize_log(out)?;
    Ok(())
}

fn log_conditional(
    window: &EncodedWindow,
    n: usize,
    counts: &CountStats,
    tables: &ConditionalTables,
    out: &mut [f64],
) {
    let t = window.slot[n];
    let units = window.cat_of(n);
    let cells = window.grid_of(n);
    for (k, o) in out.iter_mut().enumerate() {
        let mut lp = tables.log_weight.get(t, k);
        for (m, &u) in units.iter().enumerate() {
            let num = counts.n_mode[m].get(k, u) as f64 + tables.prior_mass[m].get(k, u);
            let den = counts.n_k[k] as f64 + tables.alpha[m];
            lp += (num / den).ln();
        }
        for (m, &g) in cells.iter().enumerate() {
            lp += tables.log_density[m].get(k, g);
        }
        *o = lp;
    }
}

/// Assignments and the counts they imply, kept in sync incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub z: Vec<usize>,
    pub counts: CountStats,
}

impl GibbsState {
    pub fn new(window: &EncodedWindow, z: Vec<usize>, dims: &Dims) -> Result<Self> {
        let counts = counts_from_assignments(window, &z, dims)?;
        Ok(Self { z, counts })
    }

    /// Uniformly random assignments.
    pub fn uniform<R: Rng + ?Sized>(window: &EncodedWindow, dims: &Dims, rng: &mut R) -> Result<Self> {
        let z = (0..window.n_events())
            .map(|_| rng.random_range(0..dims.components))
            .collect();
        Self::new(window, z, dims)
    }

    /// Independent draws from the conditional with no other records counted,
    /// i.e. from the previous window's parameters alone.
    pub fn from_prior<R: Rng + ?Sized>(
        window: &EncodedWindow,
        dims: &Dims,
        tables: &ConditionalTables,
        rng: &mut R,
    ) -> Result<Self> {
        let empty = CountStats::zeros(dims, window.n_timestamps());
        let mut buf = vec![0.0; dims.components];
        let z = (0..window.n_events())
            .map(|n| {
                log_conditional(window, n, &empty, tables, &mut buf);
                sample_log_categorical(&mut buf, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(window, z, dims)
    }

    /// Compare the incremental counts against a full recount.
    pub fn verify(&self, window: &EncodedWindow, dims: &Dims) -> Result<()> {
        let fresh = counts_from_assignments(window, &self.z, dims)?;
        if fresh != self.counts {
            return Err(Error::Contract(
                "incremental counts diverged from the assignments".into(),
            ));
        }
        self.counts.check_consistency(&window.per_slot())
    }
}

/// Resample every record once, in order, with leave-one-out counts.
pub fn gibbs_epoch<R: Rng + ?Sized>(
    window: &EncodedWindow,
    state: &mut GibbsState,
    tables: &ConditionalTables,
    rng: &mut R,
) -> Result<()> {
    let mut buf = vec![0.0; tables.components()];
    for n in 0..window.n_events() {
        let old = state.z[n];
        state.counts.remove(window, n, old);
        log_conditional(window, n, &state.counts, tables, &mut buf);
        let new = sample_log_categorical(&mut buf, rng)?;
        state.counts.add(window, n, new);
        state.z[n] = new;
    }
    Ok(())
}

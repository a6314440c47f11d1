//! Per-window inference: collapsed Gibbs sampling of assignments interleaved
//! with weight-dynamics updates, then closed-form categorical estimates and
//! MAP log-densities.

pub mod density;
pub mod dynamics;
pub mod gibbs;

use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest::GridSpec;
use crate::model::{ComponentTrajectory, CountStats, Dims, EncodedWindow, ModelParams, Table};
use crate::ssm::{self, GaussState, SsmKernel};

pub use density::{estimate_c, lgp_objective_and_gradient, DensityDiagnostics, GridPrior, LgpObjective};
pub use dynamics::{estimate_b, pg_augmented_posterior, Carry, PgPosterior, WeightPrior};
pub use gibbs::{component_conditional, gibbs_epoch, ConditionalTables, GibbsState};

/// Smallest categorical probability. Units a component never emits decay
/// by `α / (N_k + α)` per window; without a floor they pass through the
/// subnormal range, where arithmetic is orders of magnitude slower, and
/// then reach exactly zero.
pub const A_FLOOR: f64 = 1e-300;

/// `A_{k,u} = (N_{k,u} + α Â_{k,u}) / (N_k + α)` for every categorical attribute,
/// floored at [`A_FLOOR`].
pub fn estimate_a(counts: &CountStats, a_hat: &[Table<f64>], alpha: &[f64]) -> Vec<Table<f64>> {
    a_hat
        .iter()
        .enumerate()
        .map(|(m, hat)| {
            let mut out = Table::zeros(hat.rows(), hat.cols());
            for k in 0..hat.rows() {
                if counts.n_k[k] == 0 {
                    // (α Â) / α, without the rounding
                    out.row_mut(k).copy_from_slice(hat.row(k));
                    continue;
                }
                let den = counts.n_k[k] as f64 + alpha[m];
                for (u, o) in out.row_mut(k).iter_mut().enumerate() {
                    *o = ((counts.n_mode[m].get(k, u) as f64 + alpha[m] * hat.get(k, u)) / den).max(A_FLOOR);
                }
            }
            out
        })
        .collect()
}

/// Fixed, data-independent pieces shared by every window of a stream.
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: Config,
    pub dims: Dims,
    pub kernel_b: SsmKernel,
    pub grid_priors: Vec<GridPrior>,
    alpha: Vec<f64>,
}

impl Engine {
    /// `config.kernel_b.lengthscale` must already be resolved.
    pub fn new(config: Config, units: Vec<usize>, grids: &[GridSpec]) -> Result<Self> {
        config.validate(units.len(), grids.len())?;
        let ell = config.kernel_b.lengthscale.ok_or_else(|| {
            Error::Config("weight-dynamics lengthscale was not resolved".into())
        })?;
        let kernel_b = ssm::matern32_ssm(ell, config.kernel_b.signal_var)?;
        let grid_priors = GridPrior::for_grids(grids, &config)?;
        let dims = Dims::new(
            config.components,
            units,
            grids.iter().map(GridSpec::count).collect(),
        );
        if let Some(m) = dims.units.iter().position(|&u| u == 0) {
            return Err(Error::Config(format!("categorical attribute {m} has no units")));
        }
        let alpha = (0..dims.n_categorical()).map(|m| config.alpha(m)).collect();
        Ok(Self {
            config,
            dims,
            kernel_b,
            grid_priors,
            alpha,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn log_widths(&self) -> Vec<&[f64]> {
        self.grid_priors.iter().map(GridPrior::log_widths).collect()
    }

    fn carry(&self, params: &ModelParams, window: &EncodedWindow) -> Carry {
        match (params.b.is_empty(), params.b_times.last()) {
            (false, Some(&time)) => Carry {
                states: params
                    .b
                    .iter()
                    .map(|tr| *tr.smoothed.last().expect("trajectory is non-empty"))
                    .collect(),
                time,
            },
            _ => Carry::stationary(
                &self.kernel_b,
                self.dims.components,
                window.timestamps.first().copied().unwrap_or(0.0),
            ),
        }
    }

    /// Run all epochs on one window. `params` carries `Â`, `Ĉ` and the
    /// previous window's weight trajectories; the returned parameters keep
    /// those snapshots untouched.
    pub fn infer<R: Rng + ?Sized>(
        &self,
        window: &EncodedWindow,
        params: &ModelParams,
        rng: &mut R,
    ) -> Result<InferenceOutput> {
        window.check(&self.dims)?;
        let cfg = &self.config;
        let k = self.dims.components;
        let carry = self.carry(params, window);
        let mut states = dynamics::propagate(&self.kernel_b, &carry, &window.timestamps);
        let mut prior = WeightPrior::from_states(&states, cfg.sigma2_noise);
        let mut tables = ConditionalTables::new(
            prior.log_softmax(),
            self.alpha.clone(),
            &params.a_hat,
            &params.c_hat,
            &self.log_widths(),
        );
        let mut gibbs = if params.b.is_empty() {
            GibbsState::uniform(window, &self.dims, rng)?
        } else {
            GibbsState::from_prior(window, &self.dims, &tables, rng)?
        };
        let n_t = window.per_slot();
        let mut diag = InferenceDiagnostics::default();

        if window.n_events() > 0 {
            for _ in 0..cfg.epochs {
                gibbs_epoch(window, &mut gibbs, &tables, rng)?;
                if k > 1 {
                    let post = pg_augmented_posterior(&gibbs.counts.n_tk, &n_t, &prior, rng)?;
                    let (smoothed, jittered) = estimate_b(&post, &window.timestamps, &self.kernel_b, &carry)?;
                    diag.smoother_jitter += jittered;
                    states = smoothed;
                    prior = WeightPrior::from_states(&states, cfg.sigma2_noise);
                    tables.log_weight = prior.log_softmax();
                }
            }
        }

        let a = estimate_a(&gibbs.counts, &params.a_hat, &self.alpha);
        let (c, dd) = estimate_c(&gibbs.counts, &params.c_hat, &self.grid_priors, cfg)?;
        diag.density = dd;
        let next = ModelParams {
            a,
            b: states
                .into_iter()
                .map(|smoothed| ComponentTrajectory { smoothed })
                .collect(),
            b_times: window.timestamps.clone(),
            c,
            a_hat: params.a_hat.clone(),
            c_hat: params.c_hat.clone(),
        };
        Ok(InferenceOutput {
            params: next,
            counts: gibbs.counts,
            z: gibbs.z,
            diagnostics: diag,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InferenceDiagnostics {
    pub smoother_jitter: usize,
    pub density: DensityDiagnostics,
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub params: ModelParams,
    pub counts: CountStats,
    pub z: Vec<usize>,
    pub diagnostics: InferenceDiagnostics,
}

/// Softmax of the smoothed weights at each timestamp.
pub fn weight_matrix(b: &[ComponentTrajectory]) -> Table<f64> {
    let k = b.len();
    let tc = b.first().map_or(0, |tr| tr.smoothed.len());
    let mut out = Table::zeros(tc, k);
    let mut row = vec![0.0; k];
    for t in 0..tc {
        for (c, tr) in b.iter().enumerate() {
            row[c] = tr.smoothed[t].value();
        }
        let lse = density::log_sum_exp(&row);
        for (c, v) in row.iter().enumerate() {
            out.set(t, c, (v - lse).exp());
        }
    }
    out
}

/// Time-averaged softmax weight of each component over the window.
pub fn component_mass(b: &[ComponentTrajectory]) -> Vec<f64> {
    let w = weight_matrix(b);
    let tc = w.rows().max(1) as f64;
    (0..w.cols())
        .map(|c| (0..w.rows()).map(|t| w.get(t, c)).sum::<f64>() / tc)
        .collect()
}

/// Final smoothed state of each component.
pub fn final_states(b: &[ComponentTrajectory]) -> Vec<GaussState> {
    b.iter().filter_map(|tr| tr.smoothed.last().copied()).collect()
}

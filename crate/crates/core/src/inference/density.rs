//! MAP estimation of per-component log-density values over a fixed grid.
//!
//! The prior on the residual `d = c - Ĉ_k` is a Matern-3/2 process along the
//! grid centers observed with noise `σ²_C`. Its log-density is evaluated by a
//! Kalman filter (prediction-error decomposition) and its gradient
//! `-(K + σ²_C I)⁻¹ d` by the matching RTS smoother, both `O(G)`.

use nalgebra::{Matrix2, Vector2};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest::GridSpec;
use crate::lbfgs::{self, LbfgsOptions};
use crate::model::{CountStats, Table};
use crate::ssm;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Data-independent part of the grid-axis prior for one continuous attribute.
#[derive(Debug, Clone)]
pub struct GridPrior {
    log_widths: Vec<f64>,
    obs_var: f64,
    phi: Vec<Matrix2<f64>>,
    gain: Vec<Vector2<f64>>,
    innovation_var: Vec<f64>,
    smoother_gain: Vec<Matrix2<f64>>,
    log_norm: f64,
}

impl GridPrior {
    pub fn new(grid: &GridSpec, lengthscale: f64, signal_var: f64, obs_var: f64) -> Result<Self> {
        if !(obs_var > 0.0 && obs_var.is_finite()) {
            return Err(Error::Config(format!("sigma2_c must be positive, got {obs_var}")));
        }
        let kernel = ssm::matern32_ssm(lengthscale, signal_var)?;
        let centers = grid.centers();
        let g = centers.len();
        let zeros = vec![0.0; g];
        let vars = vec![obs_var; g];
        let init = kernel.stationary_state();
        let pass = ssm::filter(&kernel, &init, centers[0], &centers, &zeros, &vars)?;

        let innovation_var: Vec<f64> = pass
            .predicted
            .iter()
            .map(|p| p.cov[(0, 0)] + obs_var)
            .collect();
        let gain = pass
            .predicted
            .iter()
            .zip(&innovation_var)
            .map(|(p, s)| p.cov.column(0) / *s)
            .collect();
        let phi = pass.transitions.iter().map(|tr| tr.phi).collect();
        let mut smoother_gain = Vec::with_capacity(g.saturating_sub(1));
        for i in 0..g.saturating_sub(1) {
            let next = &pass.predicted[i + 1];
            let inv = invert(&next.cov)?;
            smoother_gain.push(pass.filtered[i].cov * pass.transitions[i + 1].phi.transpose() * inv);
        }
        let log_norm = innovation_var.iter().map(|s| LN_2PI + s.ln()).sum();
        Ok(Self {
            log_widths: grid.widths().iter().map(|w| w.ln()).collect(),
            obs_var,
            phi,
            gain,
            innovation_var,
            smoother_gain,
            log_norm,
        })
    }

    /// Prior for attribute grids of a whole configuration.
    pub fn for_grids(grids: &[GridSpec], config: &Config) -> Result<Vec<Self>> {
        grids
            .iter()
            .map(|grid| {
                let ell = config.density_lengthscale(grid.median_width());
                Self::new(grid, ell, config.kernel_c.signal_var, config.sigma2_c)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.log_widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_widths.is_empty()
    }

    pub fn log_widths(&self) -> &[f64] {
        &self.log_widths
    }

    /// Innovation variances `σ²_{r_g}` of the grid-axis filter.
    pub fn innovation_var(&self) -> &[f64] {
        &self.innovation_var
    }

    /// Log prior of the residual and its gradient, written into `grad`.
    /// `innovations` receives the one-step prediction errors `r_g`.
    pub fn log_prior(&self, d: &[f64], grad: &mut [f64], innovations: &mut [f64]) -> f64 {
        let g = self.len();
        let mut pred = vec![Vector2::zeros(); g];
        let mut filt = vec![Vector2::zeros(); g];
        let mut state = Vector2::zeros();
        let mut quad = 0.0;
        for i in 0..g {
            let p = self.phi[i] * state;
            let r = d[i] - p[0];
            let f = p + self.gain[i] * r;
            quad += r * r / self.innovation_var[i];
            innovations[i] = r;
            pred[i] = p;
            filt[i] = f;
            state = f;
        }
        let mut smoothed = filt[g - 1];
        grad[g - 1] = -(d[g - 1] - smoothed[0]) / self.obs_var;
        for i in (0..g - 1).rev() {
            smoothed = filt[i] + self.smoother_gain[i] * (smoothed - pred[i + 1]);
            grad[i] = -(d[i] - smoothed[0]) / self.obs_var;
        }
        -0.5 * (self.log_norm + quad)
    }
}

fn invert(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    m.try_inverse()
        .or_else(|| (m + Matrix2::identity() * 1e-9).try_inverse())
        .ok_or_else(|| Error::Numeric("singular grid-axis covariance".into()))
}

/// Inputs of the density objective for one (component, attribute) pair.
#[derive(Debug, Clone, Copy)]
pub struct LgpObjective<'a> {
    pub counts: &'a [u64],
    pub total: u64,
    pub c_hat: &'a [f64],
    pub prior: &'a GridPrior,
}

/// Objective value `L(c)` and its gradient.
pub fn lgp_objective_and_gradient(c: &[f64], obj: &LgpObjective<'_>, grad: &mut [f64]) -> f64 {
    let g = c.len();
    let lw = obj.prior.log_widths();
    let logits: Vec<f64> = lw.iter().zip(c).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&logits);
    let total = obj.total as f64;
    let mut value = -total * lse;
    for i in 0..g {
        let n = obj.counts[i] as f64;
        value += n * logits[i];
    }
    let d: Vec<f64> = c.iter().zip(obj.c_hat).map(|(a, b)| a - b).collect();
    let mut innovations = vec![0.0; g];
    value += obj.prior.log_prior(&d, grad, &mut innovations);
    for i in 0..g {
        grad[i] += obj.counts[i] as f64 - total * (logits[i] - lse).exp();
    }
    value
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Probability mass of each grid cell, `w_g e^{c_g} / Σ w e^c`.
pub fn grid_probabilities(c: &[f64], log_widths: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = log_widths.iter().zip(c).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Log of [`grid_probabilities`].
pub fn log_grid_probabilities(c: &[f64], log_widths: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = log_widths.iter().zip(c).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Piecewise-constant density value on each cell (mass divided by width).
pub fn density_values(c: &[f64], log_widths: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = log_widths.iter().zip(c).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&logits);
    c.iter().map(|ci| (ci - lse).exp()).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensityDiagnostics {
    pub line_search_failures: usize,
    pub not_converged: usize,
}

/// Maximize the objective for one (component, attribute) pair from `Ĉ_k`.
pub fn maximize(obj: &LgpObjective<'_>, opts: &LbfgsOptions) -> lbfgs::LbfgsResult {
    let neg = |c: &[f64], g: &mut [f64]| {
        let v = lgp_objective_and_gradient(c, obj, g);
        g.iter_mut().for_each(|x| *x = -*x);
        -v
    };
    lbfgs::minimize(neg, obj.c_hat, opts)
}

/// Log-density values for every component and continuous attribute.
pub fn estimate_c(
    counts: &CountStats,
    c_hat: &[Table<f64>],
    priors: &[GridPrior],
    config: &Config,
) -> Result<(Vec<Table<f64>>, DensityDiagnostics)> {
    let opts = LbfgsOptions {
        memory: config.lbfgs_memory,
        max_iter: config.lbfgs_max_iter,
        grad_tol: config.lbfgs_tolerance,
        ..LbfgsOptions::default()
    };
    let mut diag = DensityDiagnostics::default();
    let mut out = Vec::with_capacity(c_hat.len());
    for (m, prior) in priors.iter().enumerate() {
        let hat = &c_hat[m];
        let mut table = Table::zeros(hat.rows(), hat.cols());
        for k in 0..hat.rows() {
            let obj = LgpObjective {
                counts: counts.n_grid[m].row(k),
                total: counts.n_k[k],
                c_hat: hat.row(k),
                prior,
            };
            let res = maximize(&obj, &opts);
            if res.x.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "density estimate for component {k}, attribute {m} is not finite"
                )));
            }
            diag.line_search_failures += usize::from(res.line_search_failed);
            diag.not_converged += usize::from(!res.converged);
            table.row_mut(k).copy_from_slice(&res.x);
        }
        out.push(table);
    }
    Ok((out, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_grid(g: usize) -> GridSpec {
        GridSpec::from_edges((0..=g).map(|i| i as f64).collect()).unwrap()
    }

    fn random_grid(g: usize, rng: &mut ChaCha8Rng) -> GridSpec {
        let mut e = 0.0;
        let edges = (0..=g)
            .map(|_| {
                e += 0.2 + rng.random::<f64>();
                e
            })
            .collect();
        GridSpec::from_edges(edges).unwrap()
    }

    /// Dense `log N(d; 0, K + σ² I)` and its gradient.
    fn dense_log_prior(grid: &GridSpec, ell: f64, sf2: f64, s2: f64, d: &[f64]) -> (f64, Vec<f64>) {
        let x = grid.centers();
        let n = x.len();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            ssm::matern32(x[i] - x[j], ell, sf2) + if i == j { s2 } else { 0.0 }
        });
        let chol = cov.cholesky().unwrap();
        let dv = DVector::from_column_slice(d);
        let alpha = chol.solve(&dv);
        let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let value = -0.5 * (n as f64 * LN_2PI + logdet + dv.dot(&alpha));
        (value, (-alpha).as_slice().to_vec())
    }

    #[test]
    fn kalman_prior_matches_dense_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = rng.random_range(2..40);
            let grid = random_grid(g, &mut rng);
            let ell = 0.5 + 5.0 * rng.random::<f64>();
            let sf2 = 0.3 + rng.random::<f64>();
            let s2 = 0.1 + rng.random::<f64>();
            let prior = GridPrior::new(&grid, ell, sf2, s2).unwrap();
            let d: Vec<f64> = (0..g).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let mut grad = vec![0.0; g];
            let mut r = vec![0.0; g];
            let v = prior.log_prior(&d, &mut grad, &mut r);
            let (dv, dg) = dense_log_prior(&grid, ell, sf2, s2, &d);
            assert!((v - dv).abs() < 1e-8 * dv.abs().max(1.0), "{v} vs {dv}");
            for i in 0..g {
                assert!((grad[i] - dg[i]).abs() < 1e-8, "{i}: {} vs {}", grad[i], dg[i]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let g = rng.random_range(2..=50);
            let grid = random_grid(g, &mut rng);
            let prior = GridPrior::new(&grid, 3.0, 1.0, 0.7).unwrap();
            let counts: Vec<u64> = (0..g).map(|_| rng.random_range(0..20)).collect();
            let total = counts.iter().sum();
            let c_hat: Vec<f64> = (0..g).map(|_| rng.random::<f64>() - 0.5).collect();
            let obj = LgpObjective {
                counts: &counts,
                total,
                c_hat: &c_hat,
                prior: &prior,
            };
            let c: Vec<f64> = (0..g).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mut grad = vec![0.0; g];
            lgp_objective_and_gradient(&c, &obj, &mut grad);
            let h = 1e-5;
            let mut scratch = vec![0.0; g];
            for i in 0..g {
                let mut cp = c.clone();
                cp[i] += h;
                let fp = lgp_objective_and_gradient(&cp, &obj, &mut scratch);
                cp[i] -= 2.0 * h;
                let fm = lgp_objective_and_gradient(&cp, &obj, &mut scratch);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-5, "{i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn prior_mode_has_zero_prior_gradient() {
        let grid = uniform_grid(6);
        let prior = GridPrior::new(&grid, 2.0, 1.0, 1.0).unwrap();
        let c_hat = vec![0.3, -0.1, 0.0, 0.5, 0.2, -0.4];
        let counts = vec![0; 6];
        let obj = LgpObjective {
            counts: &counts,
            total: 0,
            c_hat: &c_hat,
            prior: &prior,
        };
        let mut grad = vec![1.0; 6];
        lgp_objective_and_gradient(&c_hat, &obj, &mut grad);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
        let res = maximize(&obj, &LbfgsOptions::default());
        assert_eq!(res.x, c_hat);
    }

    #[test]
    fn data_gradient_sums_to_zero() {
        let grid = uniform_grid(5);
        // huge obs noise makes the prior gradient negligible
        let prior = GridPrior::new(&grid, 2.0, 1.0, 1e12).unwrap();
        let counts = vec![1, 4, 0, 2, 3];
        let c_hat = vec![0.0; 5];
        let obj = LgpObjective {
            counts: &counts,
            total: 10,
            c_hat: &c_hat,
            prior: &prior,
        };
        let mut grad = vec![0.0; 5];
        lgp_objective_and_gradient(&[0.4, -1.0, 2.0, 0.1, 0.0], &obj, &mut grad);
        assert!(grad.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn mode_lands_on_observed_cell() {
        let grid = uniform_grid(5);
        let prior = GridPrior::new(&grid, 1.0, 1.0, 1.0).unwrap();
        let counts = vec![0, 0, 0, 50, 0];
        let c_hat = vec![0.0; 5];
        let obj = LgpObjective {
            counts: &counts,
            total: 50,
            c_hat: &c_hat,
            prior: &prior,
        };
        let res = maximize(&obj, &LbfgsOptions::default());
        assert!(res.converged, "{res:?}");
        let p = grid_probabilities(&res.x, prior.log_widths());
        let argmax = (0..5).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 3);
        let again = maximize(&obj, &LbfgsOptions::default());
        assert_eq!(res.x, again.x);
    }

    #[test]
    fn probabilities_normalize_under_extreme_values() {
        let lw = vec![0.0, 1.0f64.ln(), 0.5f64.ln(), 3.0f64.ln()];
        for c in [
            vec![0.0; 4],
            vec![800.0, -800.0, 700.0, 0.0],
            vec![-1e3, -1e3, -1e3, -1e3],
        ] {
            let p = grid_probabilities(&c, &lw);
            assert!(p.iter().all(|x| x.is_finite()));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let dens = density_values(&c, &lw);
            let mass: f64 = dens.iter().zip(&lw).map(|(d, l)| d * l.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}

//! Component weight dynamics: Polya-Gamma augmented pseudo-observations
//! followed by Kalman filtering and RTS smoothing along the window.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Table;
use crate::sampling::sample_polya_gamma;
use crate::ssm::{self, GaussState, SsmKernel};

/// Per (timestamp, component) Gaussian belief on the weight `B_k(τ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPrior {
    pub mean: Table<f64>,
    pub var: Table<f64>,
}

impl WeightPrior {
    /// `μ = H m`, `σ² = H P Hᵀ + σ²_noise` from per-component state sequences.
    pub fn from_states(states: &[Vec<GaussState>], noise_var: f64) -> Self {
        let k = states.len();
        let tc = states.first().map_or(0, Vec::len);
        let mut mean = Table::zeros(tc, k);
        let mut var = Table::zeros(tc, k);
        for (c, seq) in states.iter().enumerate() {
            for (t, s) in seq.iter().enumerate() {
                mean.set(t, c, s.value());
                var.set(t, c, s.variance() + noise_var);
            }
        }
        Self { mean, var }
    }

    /// `log softmax_k(μ_t)` for every timestamp.
    pub fn log_softmax(&self) -> Table<f64> {
        let mut out = Table::zeros(self.mean.rows(), self.mean.cols());
        for t in 0..self.mean.rows() {
            let row = self.mean.row(t);
            let lse = super::density::log_sum_exp(row);
            for (o, m) in out.row_mut(t).iter_mut().zip(row) {
                *o = m - lse;
            }
        }
        out
    }
}

/// Where the window's weight filters start.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub states: Vec<GaussState>,
    pub time: f64,
}

impl Carry {
    /// GP prior at the first timestamp of the first window.
    pub fn stationary(kernel: &SsmKernel, components: usize, time: f64) -> Self {
        Self {
            states: vec![kernel.stationary_state(); components],
            time,
        }
    }
}

/// Propagate the carry state through the window without observations.
pub fn propagate(kernel: &SsmKernel, carry: &Carry, timestamps: &[f64]) -> Vec<Vec<GaussState>> {
    carry
        .states
        .iter()
        .map(|init| {
            let mut state = *init;
            let mut prev = carry.time;
            timestamps
                .iter()
                .map(|&t| {
                    state = ssm::predict(&state, &ssm::discretize(kernel, (t - prev).max(0.0)));
                    prev = t;
                    state
                })
                .collect()
        })
        .collect()
}

/// Gaussian pseudo-observations of the weights after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct PgPosterior {
    pub mean: Table<f64>,
    pub var: Table<f64>,
    pub omega: Table<f64>,
}

/// `ξ_{t,k} = log Σ_{j≠k} e^{μ_{t,j}}`, stable in log space.
pub fn exclusive_log_sum_exp(row: &[f64], k: usize) -> f64 {
    let m = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    m + s.ln()
}

/// Conditional Gaussian given a fixed augmentation draw `ω`.
/// Returns `(mean, variance)`.
pub fn pg_update(mu: f64, sigma2: f64, omega: f64, n_tk: u64, n_t: u64, xi: f64) -> (f64, f64) {
    let var = 1.0 / (1.0 / sigma2 + omega);
    let kappa = n_tk as f64 - 0.5 * n_t as f64;
    (var * (mu / sigma2 + kappa + omega * xi), var)
}

/// Draw `ω_{t,k}` and form the Gaussian pseudo-observations for all
/// timestamps and components. Requires at least two components.
pub fn pg_augmented_posterior<R: Rng + ?Sized>(
    n_tk: &Table<u64>,
    n_t: &[u64],
    prior: &WeightPrior,
    rng: &mut R,
) -> Result<PgPosterior> {
    let (tc, k) = (prior.mean.rows(), prior.mean.cols());
    let mut mean = Table::zeros(tc, k);
    let mut var = Table::zeros(tc, k);
    let mut omega = Table::zeros(tc, k);
    for t in 0..tc {
        let mu_row = prior.mean.row(t);
        for c in 0..k {
            let xi = exclusive_log_sum_exp(mu_row, c);
            if !xi.is_finite() {
                return Err(Error::Numeric(format!(
                    "log-sum-exp over other components is {xi} at slot {t}"
                )));
            }
            let mu = mu_row[c];
            let s2 = prior.var.get(t, c);
            if !(s2 > 0.0) {
                return Err(Error::Numeric(format!("prior variance {s2} at slot {t}")));
            }
            let count = n_tk.get(t, c);
            // The κ term N_tk − N_t/2 belongs to a binomial likelihood with
            // N_t trials, so the augmentation variable is PG(N_t, ·). Drawing
            // PG(N_tk, ·) instead leaves an uncompensated −N_t/2 pull on
            // every sparse component and collapses the mixture.
            let w = if n_t[t] == 0 {
                0.0
            } else {
                sample_polya_gamma(n_t[t] as f64, mu - xi, rng)?
            };
            let (m, v) = pg_update(mu, s2, w, count, n_t[t], xi);
            mean.set(t, c, m);
            var.set(t, c, v);
            omega.set(t, c, w);
        }
    }
    Ok(PgPosterior { mean, var, omega })
}

/// Filter and smooth each component's pseudo-observations.
///
/// Returns the smoothed state sequences and the number of smoother steps
/// that needed jitter.
pub fn estimate_b(
    post: &PgPosterior,
    timestamps: &[f64],
    kernel: &SsmKernel,
    carry: &Carry,
) -> Result<(Vec<Vec<GaussState>>, usize)> {
    let k = post.mean.cols();
    let mut out = Vec::with_capacity(k);
    let mut jittered = 0;
    let mut obs = vec![0.0; timestamps.len()];
    let mut obs_var = vec![0.0; timestamps.len()];
    for c in 0..k {
        for t in 0..timestamps.len() {
            obs[t] = post.mean.get(t, c);
            obs_var[t] = post.var.get(t, c);
        }
        let (_, sm) = ssm::smooth(kernel, &carry.states[c], carry.time, timestamps, &obs, &obs_var)?;
        jittered += sm.jittered;
        out.push(sm.states);
    }
    Ok((out, jittered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::RngHandle;

    #[test]
    fn fixed_omega_update() {
        let (m, v) = pg_update(0.0, 1.0, 1.0, 3, 4, 0.0);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_timestamp_keeps_prior() {
        let (m, v) = pg_update(0.7, 2.0, 0.0, 0, 0, 1.3);
        assert_eq!((m, v), (0.7, 2.0));
    }

    #[test]
    fn large_omega_collapses_variance() {
        let (_, v) = pg_update(0.0, 1.0, 1e12, 5, 5, 0.0);
        assert!(v < 1e-11);
    }

    #[test]
    fn exclusive_lse_matches_direct_sum() {
        let row = [0.5, -1.0, 2.0, 700.0];
        let direct: f64 = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((exclusive_log_sum_exp(&row, 3) - direct).abs() < 1e-12);
        assert!((exclusive_log_sum_exp(&row, 0) - 700.0).abs() < 1e-12);
        assert_eq!(exclusive_log_sum_exp(&[1.0], 0), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_timestamps_skip_the_draw() {
        let prior = WeightPrior {
            mean: Table::zeros(2, 3),
            var: Table::filled(2, 3, 1.0),
        };
        let mut n_tk = Table::zeros(2, 3);
        n_tk.set(0, 1, 4);
        let mut rng = RngHandle::new(1);
        let post = pg_augmented_posterior(&n_tk, &[4, 0], &prior, &mut rng).unwrap();
        // every component at a non-empty timestamp is augmented
        assert!(post.omega.get(0, 0) > 0.0);
        assert!(post.omega.get(0, 1) > 0.0);
        assert_eq!(post.omega.row(1), &[0.0, 0.0, 0.0]);
        // N_t = 0 and ω = 0 leave the prior untouched
        assert_eq!(post.mean.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(post.var.row(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_component_has_no_alternative() {
        let prior = WeightPrior {
            mean: Table::zeros(1, 1),
            var: Table::filled(1, 1, 1.0),
        };
        let mut rng = RngHandle::new(1);
        let n_tk = Table::filled(1, 1, 2);
        assert!(pg_augmented_posterior(&n_tk, &[2], &prior, &mut rng).is_err());
    }

    #[test]
    fn exact_observations_are_reproduced() {
        let kernel = ssm::matern32_ssm(3.0, 1.0).unwrap();
        let ts: Vec<f64> = (0..10).map(f64::from).collect();
        let post = PgPosterior {
            mean: Table::zeros(10, 1),
            var: Table::filled(10, 1, 1e-10),
            omega: Table::zeros(10, 1),
        };
        let carry = Carry::stationary(&kernel, 1, 0.0);
        let (states, _) = estimate_b(&post, &ts, &kernel, &carry).unwrap();
        assert!(states[0].iter().all(|s| s.value().abs() < 1e-8));
    }

    #[test]
    fn propagation_from_stationary_stays_stationary() {
        let kernel = ssm::matern32_ssm(2.0, 1.5).unwrap();
        let carry = Carry::stationary(&kernel, 2, 0.0);
        let seq = propagate(&kernel, &carry, &[0.0, 0.5, 3.0]);
        for s in seq.iter().flatten() {
            assert_eq!(s.value(), 0.0);
            assert!((s.variance() - 1.5).abs() < 1e-12);
        }
        let prior = WeightPrior::from_states(&seq, 0.1);
        assert!((prior.var.get(2, 1) - 1.6).abs() < 1e-12);
        let ls = prior.log_softmax();
        assert!((ls.get(0, 0) - 0.5f64.ln()).abs() < 1e-15);
    }
}

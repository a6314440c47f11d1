//! Gaussian-process priors in linear state-space form.
//!
//! A Matern-3/2 process `f` is represented exactly by the two-dimensional
//! state `x = (f, f')` driven by white noise, so GP regression on sorted
//! inputs reduces to a Kalman filter followed by a Rauch-Tung-Striebel
//! smoother in `O(n)` time. [`exact_gp_posterior`] solves the same problem
//! with a dense kernel matrix and serves as the reference implementation.

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JITTER: f64 = 1e-9;

/// Continuous-time state-space realization of a stationary GP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmKernel {
    /// Feedback matrix `F`.
    pub feedback: Matrix2<f64>,
    /// Noise-effect matrix `L` (a single column).
    pub noise_effect: Vector2<f64>,
    /// Observation row `H`.
    pub observation: RowVector2<f64>,
    /// Spectral density of the driving white noise.
    pub spectral_density: f64,
    /// Stationary covariance `P∞`.
    pub stationary_cov: Matrix2<f64>,
    pub lengthscale: f64,
    pub signal_var: f64,
    /// Derivative order `p`; the state has `p + 1` entries.
    pub order: usize,
}

/// Discrete transition between two inputs: `x' = Φ x + q`, `q ~ N(0, Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub phi: Matrix2<f64>,
    pub q: Matrix2<f64>,
}

/// Gaussian belief over the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussState {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }

    /// Mean of the observed coordinate, `H m`.
    pub fn value(&self) -> f64 {
        self.mean[0]
    }

    /// Variance of the observed coordinate, `H P Hᵀ`.
    pub fn variance(&self) -> f64 {
        self.cov[(0, 0)]
    }
}

/// Matern-3/2 kernel `σ²(1 + √3 r/ℓ) exp(-√3 r/ℓ)`.
pub fn matern32(r: f64, lengthscale: f64, signal_var: f64) -> f64 {
    let s = 3f64.sqrt() * r.abs() / lengthscale;
    signal_var * (1.0 + s) * (-s).exp()
}

/// Build the state-space form of a Matern-3/2 GP.
pub fn matern32_ssm(lengthscale: f64, signal_var: f64) -> Result<SsmKernel> {
    if !(lengthscale > 0.0 && lengthscale.is_finite()) {
        return Err(Error::Config(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    if !(signal_var > 0.0 && signal_var.is_finite()) {
        return Err(Error::Config(format!(
            "signal variance must be positive, got {signal_var}"
        )));
    }
    let lambda = 3f64.sqrt() / lengthscale;
    Ok(SsmKernel {
        feedback: Matrix2::new(0.0, 1.0, -lambda * lambda, -2.0 * lambda),
        noise_effect: Vector2::new(0.0, 1.0),
        observation: RowVector2::new(1.0, 0.0),
        spectral_density: 4.0 * lambda.powi(3) * signal_var,
        stationary_cov: Matrix2::new(signal_var, 0.0, 0.0, lambda * lambda * signal_var),
        lengthscale,
        signal_var,
        order: 1,
    })
}

impl SsmKernel {
    pub fn lambda(&self) -> f64 {
        3f64.sqrt() / self.lengthscale
    }

    /// Max-norm of `F P∞ + P∞ Fᵀ + L Qc Lᵀ`; zero for an exact stationary covariance.
    pub fn lyapunov_residual(&self) -> f64 {
        let f = self.feedback;
        let p = self.stationary_cov;
        let l = self.noise_effect;
        let r = f * p + p * f.transpose() + l * self.spectral_density * l.transpose();
        r.abs().max()
    }

    /// Prior state at any input.
    pub fn stationary_state(&self) -> GaussState {
        GaussState::new(Vector2::zeros(), self.stationary_cov)
    }
}

/// Discretize the SDE over a step `dt ≥ 0`.
pub fn discretize(kernel: &SsmKernel, dt: f64) -> Transition {
    debug_assert!(dt >= 0.0, "negative step {dt}");
    if dt <= 0.0 {
        return Transition {
            phi: Matrix2::identity(),
            q: Matrix2::zeros(),
        };
    }
    let lambda = kernel.lambda();
    let ld = lambda * dt;
    let e = (-ld).exp();
    // exp(F dt) for F = [[0, 1], [-λ², -2λ]] (repeated eigenvalue -λ)
    let phi = Matrix2::new(
        e * (1.0 + ld),
        e * dt,
        -e * lambda * lambda * dt,
        e * (1.0 - ld),
    );
    let p = kernel.stationary_cov;
    let q = symmetrize(p - phi * p * phi.transpose());
    Transition { phi, q }
}

/// Time update.
pub fn predict(prev: &GaussState, tr: &Transition) -> GaussState {
    GaussState::new(
        tr.phi * prev.mean,
        symmetrize(tr.phi * prev.cov * tr.phi.transpose() + tr.q),
    )
}

/// Measurement update of a predicted state with a scalar observation of `H x`.
///
/// Uses the Joseph form so the covariance stays symmetric positive semidefinite.
pub fn update(pred: &GaussState, obs: f64, obs_var: f64) -> Result<GaussState> {
    if !obs.is_finite() || !(obs_var > 0.0) || !obs_var.is_finite() {
        return Err(Error::Numeric(format!(
            "invalid observation {obs} with variance {obs_var}"
        )));
    }
    let p = pred.cov;
    let innovation_var = p[(0, 0)] + obs_var;
    let gain = Vector2::new(p[(0, 0)], p[(1, 0)]) / innovation_var;
    let mean = pred.mean + gain * (obs - pred.mean[0]);
    let ikh = Matrix2::new(1.0 - gain[0], 0.0, -gain[1], 1.0);
    let cov = ikh * p * ikh.transpose() + gain * obs_var * gain.transpose();
    Ok(GaussState::new(mean, symmetrize(cov)))
}

/// One predict + update step. Returns `(predicted, filtered)`.
pub fn kalman_step(
    prev: &GaussState,
    tr: &Transition,
    obs: f64,
    obs_var: f64,
) -> Result<(GaussState, GaussState)> {
    let pred = predict(prev, tr);
    let filt = update(&pred, obs, obs_var)?;
    Ok((pred, filt))
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPass {
    pub predicted: Vec<GaussState>,
    pub filtered: Vec<GaussState>,
    /// `transitions[i]` carries the state from input `i-1` (or the initial
    /// state) to input `i`.
    pub transitions: Vec<Transition>,
}

/// Kalman filter over sorted inputs.
///
/// `init` is the belief at `init_time ≤ inputs[0]`; pass the stationary
/// state at `inputs[0]` to start from the GP prior. Repeated inputs become
/// successive measurement updates (`Φ = I`, `Q = 0`).
pub fn filter(
    kernel: &SsmKernel,
    init: &GaussState,
    init_time: f64,
    inputs: &[f64],
    obs: &[f64],
    obs_var: &[f64],
) -> Result<FilterPass> {
    if inputs.len() != obs.len() || obs.len() != obs_var.len() {
        return Err(Error::Contract("filter inputs are not aligned".into()));
    }
    let n = inputs.len();
    let mut pass = FilterPass {
        predicted: Vec::with_capacity(n),
        filtered: Vec::with_capacity(n),
        transitions: Vec::with_capacity(n),
    };
    let mut state = *init;
    let mut prev_time = init_time;
    for i in 0..n {
        let dt = inputs[i] - prev_time;
        if dt < 0.0 {
            return Err(Error::Contract(format!("filter inputs unsorted at {i}")));
        }
        let tr = discretize(kernel, dt);
        let (pred, filt) = kalman_step(&state, &tr, obs[i], obs_var[i])?;
        pass.transitions.push(tr);
        pass.predicted.push(pred);
        pass.filtered.push(filt);
        state = filt;
        prev_time = inputs[i];
    }
    Ok(pass)
}

/// Result of a backward smoothing sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub states: Vec<GaussState>,
    /// Number of steps whose predicted covariance needed jitter to invert.
    pub jittered: usize,
}

/// Rauch-Tung-Striebel backward sweep.
///
/// `transitions` is aligned with `predicted` as produced by [`filter`].
pub fn rts_sweep(
    filtered: &[GaussState],
    predicted: &[GaussState],
    transitions: &[Transition],
) -> Result<Smoothed> {
    let n = filtered.len();
    if n == 0 || predicted.len() != n || transitions.len() != n {
        return Err(Error::Contract(
            "smoother inputs must be non-empty and aligned".into(),
        ));
    }
    let mut states = filtered.to_vec();
    let mut jittered = 0;
    for t in (0..n - 1).rev() {
        let phi = transitions[t + 1].phi;
        let pred_next = &predicted[t + 1];
        let (inv, jit) = invert_spd(&pred_next.cov)?;
        jittered += jit as usize;
        let filt = &filtered[t];
        let gain = filt.cov * phi.transpose() * inv;
        let next = states[t + 1];
        let mean = filt.mean + gain * (next.mean - pred_next.mean);
        let cov = filt.cov + gain * (next.cov - pred_next.cov) * gain.transpose();
        states[t] = GaussState::new(mean, symmetrize(cov));
    }
    Ok(Smoothed { states, jittered })
}

/// Filter and smooth in one call.
pub fn smooth(
    kernel: &SsmKernel,
    init: &GaussState,
    init_time: f64,
    inputs: &[f64],
    obs: &[f64],
    obs_var: &[f64],
) -> Result<(FilterPass, Smoothed)> {
    let pass = filter(kernel, init, init_time, inputs, obs, obs_var)?;
    if inputs.is_empty() {
        return Ok((
            pass,
            Smoothed {
                states: Vec::new(),
                jittered: 0,
            },
        ));
    }
    let sm = rts_sweep(&pass.filtered, &pass.predicted, &pass.transitions)?;
    Ok((pass, sm))
}

/// Dense GP regression with a Matern-3/2 kernel and zero prior mean.
///
/// Returns posterior means and variances of the latent function at `inputs`.
pub fn exact_gp_posterior(
    inputs: &[f64],
    obs: &[f64],
    obs_var: &[f64],
    lengthscale: f64,
    signal_var: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = inputs.len();
    if obs.len() != n || obs_var.len() != n {
        return Err(Error::Contract("GP inputs are not aligned".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let kxx = DMatrix::from_fn(n, n, |i, j| {
        matern32(inputs[i] - inputs[j], lengthscale, signal_var)
    });
    let mut sys = kxx.clone();
    for i in 0..n {
        sys[(i, i)] += obs_var[i];
    }
    let chol = match sys.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..n {
                sys[(i, i)] += JITTER;
            }
            sys.cholesky()
                .ok_or_else(|| Error::Numeric("GP kernel matrix is singular".into()))?
        }
    };
    let y = DVector::from_column_slice(obs);
    let mean = &kxx * chol.solve(&y);
    let v = chol.solve(&kxx);
    let means = mean.iter().copied().collect();
    let vars = (0..n)
        .map(|i| kxx[(i, i)] - (kxx.row(i) * v.column(i))[(0, 0)])
        .collect();
    Ok((means, vars))
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mid - rad, mid + rad)
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

fn invert_spd(m: &Matrix2<f64>) -> Result<(Matrix2<f64>, bool)> {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let det = m.determinant();
    if det > 1e-14 * scale * scale {
        if let Some(inv) = m.try_inverse() {
            return Ok((inv, false));
        }
    }
    (m + Matrix2::identity() * JITTER)
        .try_inverse()
        .map(|inv| (inv, true))
        .ok_or_else(|| Error::Numeric("predicted covariance is singular".into()))
}

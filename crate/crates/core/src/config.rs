//! Engine configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one Matern-3/2 prior.
///
/// A missing lengthscale is resolved from the data when the stream starts
/// (see [`Config::resolve_lengthscales`] and [`Config::density_lengthscale`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub lengthscale: Option<f64>,
    pub signal_var: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            lengthscale: None,
            signal_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Number of latent components `K`.
    pub components: usize,
    /// Grid count per continuous attribute. A single entry applies to all.
    pub grids: Vec<usize>,
    /// Gibbs epochs per window.
    pub epochs: usize,
    /// Distinct timestamps per window.
    pub window: usize,
    /// Dirichlet persistence per categorical attribute. Empty means `1/K`.
    pub alpha: Vec<f64>,
    /// Persistence variance of the log-density values.
    pub sigma2_c: f64,
    /// Observation noise added to the component-weight prior variance.
    pub sigma2_noise: f64,
    /// Prior on component weight dynamics (time axis).
    pub kernel_b: KernelSpec,
    /// Prior on log-density values (grid axis).
    pub kernel_c: KernelSpec,
    /// Derivative order of the state-space form; only 1 (Matern-3/2) exists.
    pub derivative_order: usize,
    pub lbfgs_max_iter: usize,
    pub lbfgs_memory: usize,
    pub lbfgs_tolerance: f64,
    pub p_value_threshold: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        default_config()
    }
}

/// Defaults: K=20, G=300, E=30, Tc=30, α=1/K.
pub fn default_config() -> Config {
    Config {
        components: 20,
        grids: vec![300],
        epochs: 30,
        window: 30,
        alpha: Vec::new(),
        sigma2_c: 1.0,
        sigma2_noise: 0.1,
        kernel_b: KernelSpec::default(),
        kernel_c: KernelSpec::default(),
        derivative_order: 1,
        lbfgs_max_iter: 100,
        lbfgs_memory: 10,
        lbfgs_tolerance: 1e-6,
        p_value_threshold: 0.05,
        seed: 0,
    }
}

impl Config {
    pub fn alpha(&self, m1: usize) -> f64 {
        match self.alpha.as_slice() {
            [] => 1.0 / self.components as f64,
            [single] => *single,
            many => many[m1],
        }
    }

    pub fn grid_count(&self, m2: usize) -> usize {
        match self.grids.as_slice() {
            [single] => *single,
            many => many[m2],
        }
    }

    /// Fill in a missing weight-dynamics lengthscale as 10x the median
    /// timestamp gap.
    pub fn resolve_lengthscales(&mut self, median_gap: f64) {
        if self.kernel_b.lengthscale.is_none() {
            self.kernel_b.lengthscale = Some(10.0 * positive_or_one(median_gap));
        }
    }

    /// Density lengthscale for one continuous attribute: the configured value,
    /// or 10x the attribute's median grid width.
    pub fn density_lengthscale(&self, median_width: f64) -> f64 {
        self.kernel_c
            .lengthscale
            .unwrap_or_else(|| 10.0 * positive_or_one(median_width))
    }

    /// Check the configuration against the attribute counts of a stream.
    pub fn validate(&self, n_categorical: usize, n_continuous: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.components == 0 {
            return bad("components must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.grids.is_empty() || (self.grids.len() > 1 && self.grids.len() != n_continuous) {
            return bad(format!(
                "grids lists {} entries for {n_continuous} continuous attributes",
                self.grids.len()
            ));
        }
        if let Some(g) = self.grids.iter().find(|&&g| g < 2) {
            return bad(format!("grid count {g} < 2"));
        }
        if self.alpha.len() > 1 && self.alpha.len() != n_categorical {
            return bad(format!(
                "alpha lists {} entries for {n_categorical} categorical attributes",
                self.alpha.len()
            ));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("alpha values must be positive".into());
        }
        for (name, v) in [
            ("sigma2_c", self.sigma2_c),
            ("sigma2_noise", self.sigma2_noise),
            ("kernel_b.signal_var", self.kernel_b.signal_var),
            ("kernel_c.signal_var", self.kernel_c.signal_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, l) in [
            ("kernel_b.lengthscale", self.kernel_b.lengthscale),
            ("kernel_c.lengthscale", self.kernel_c.lengthscale),
        ] {
            if let Some(l) = l {
                if !(l > 0.0 && l.is_finite()) {
                    return bad(format!("{name} must be positive, got {l}"));
                }
            }
        }
        if self.derivative_order != 1 {
            return bad(format!(
                "derivative order {} unsupported; the Matern-3/2 form has order 1",
                self.derivative_order
            ));
        }
        if self.lbfgs_max_iter == 0 || self.lbfgs_memory == 0 {
            return bad("L-BFGS iteration cap and memory must be >= 1".into());
        }
        if !(self.p_value_threshold > 0.0 && self.p_value_threshold < 1.0) {
            return bad("p-value threshold must lie in (0, 1)".into());
        }
        Ok(())
    }
}

fn positive_or_one(x: f64) -> f64 {
    if x.is_finite() && x > 0.0 {
        x
    } else {
        1.0
    }
}

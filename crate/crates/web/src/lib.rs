//! Browser bindings: GP smoothing of clicked points, a logistic-GP density
//! fit, and the detector on a synthetic stream with one burst.
//!
//! Every export returns a JSON string; the page parses it.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use groupwatch::config::default_config;
use groupwatch::harness::driver::Pipeline;
use groupwatch::harness::synth::{Burst, SynthSpec};
use groupwatch::inference::density::{density_values, maximize};
use groupwatch::inference::{GridPrior, LgpObjective};
use groupwatch::ingest;
use groupwatch::lbfgs::LbfgsOptions;
use groupwatch::ssm::{matern32_ssm, smooth};
use groupwatch::{Error, Result};

/// Observation variance of the plotting points merged into the inputs;
/// large enough that they do not pull the posterior.
const UNOBSERVED: f64 = 1e12;

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Posterior of a Matern-3/2 GP through `(xs, ys)` on `points` plotting
/// positions spanning `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn smooth_points(
    xs: &[f64],
    ys: &[f64],
    lengthscale: f64,
    signal_var: f64,
    noise_var: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Curve> {
    if xs.len() != ys.len() {
        return Err(Error::Contract("x and y differ in length".into()));
    }
    if hi.is_nan() || lo.is_nan() || hi <= lo || points < 2 {
        return Err(Error::Config("need hi > lo and at least two points".into()));
    }
    let kernel = matern32_ssm(lengthscale, signal_var)?;
    // (input, observation, variance, plotted)
    let mut rows: Vec<(f64, f64, f64, bool)> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (x, y, noise_var, false))
        .collect();
    let step = (hi - lo) / (points - 1) as f64;
    rows.extend((0..points).map(|i| (lo + step * i as f64, 0.0, UNOBSERVED, true)));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let inputs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let obs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let var: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (_, sm) = smooth(&kernel, &kernel.stationary_state(), inputs[0], &inputs, &obs, &var)?;

    let mut curve = Curve {
        x: Vec::with_capacity(points),
        mean: Vec::with_capacity(points),
        sd: Vec::with_capacity(points),
    };
    for (row, s) in rows.iter().zip(&sm.states) {
        if row.3 {
            curve.x.push(row.0);
            curve.mean.push(s.value());
            curve.sd.push(s.variance().max(0.0).sqrt());
        }
    }
    Ok(curve)
}

#[wasm_bindgen(js_name = smoothPoints)]
#[allow(clippy::too_many_arguments)]
pub fn smooth_points_js(
    xs: Vec<f64>,
    ys: Vec<f64>,
    lengthscale: f64,
    signal_var: f64,
    noise_var: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> std::result::Result<String, JsError> {
    to_js(smooth_points(&xs, &ys, lengthscale, signal_var, noise_var, lo, hi, points))
}

#[derive(Debug, Serialize)]
pub struct DensityFit {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub iterations: usize,
}

/// MAP log-density of `samples` on a `grids`-cell grid, starting from a
/// flat density. `lengthscale` is in units of the median cell width.
pub fn fit_density(samples: &[f64], grids: usize, lengthscale: f64) -> Result<DensityFit> {
    let grid = ingest::build_grid(samples, grids)?;
    let config = default_config();
    let prior = GridPrior::new(
        &grid,
        lengthscale * grid.median_width(),
        config.kernel_c.signal_var,
        config.sigma2_c,
    )?;
    let mut counts = vec![0u64; grid.count()];
    for &x in samples {
        counts[grid.locate(x)] += 1;
    }
    let flat = vec![0.0; grid.count()];
    let obj = LgpObjective {
        counts: &counts,
        total: samples.len() as u64,
        c_hat: &flat,
        prior: &prior,
    };
    let res = maximize(&obj, &LbfgsOptions::default());
    Ok(DensityFit {
        edges: grid.edges().to_vec(),
        density: density_values(&res.x, prior.log_widths()),
        counts,
        iterations: res.iterations,
    })
}

#[wasm_bindgen(js_name = fitDensity)]
pub fn fit_density_js(samples: Vec<f64>, grids: usize, lengthscale: f64) -> std::result::Result<String, JsError> {
    to_js(fit_density(&samples, grids, lengthscale))
}

#[derive(Debug, Serialize)]
pub struct WindowRow {
    pub window: usize,
    pub records: usize,
    pub burst_records: usize,
    pub score: f64,
    pub p_value: f64,
    pub anomaly: bool,
    pub component_mass: Vec<f64>,
}

const STREAM: &str = r#"{
    "timestamps": 400, "rate": 8, "window": 20,
    "components": [
        {"categorical": [[0.6, 0.4, 0, 0, 0, 0], [0.5, 0.5, 0, 0, 0, 0]],
         "continuous": [{"kind": "normal", "mean": 0, "sd": 1}]},
        {"categorical": [[0, 0, 0.6, 0.4, 0, 0], [0, 0, 0.5, 0.5, 0, 0]],
         "continuous": [{"kind": "normal", "mean": 5, "sd": 1}]},
        {"categorical": [[0, 0, 0, 0, 0.6, 0.4], [0, 0, 0, 0, 0.5, 0.5]],
         "continuous": [{"kind": "normal", "mean": 10, "sd": 1.5}]}]
}"#;

/// Run the detector over 20 windows of a three-component stream in which
/// `component` fires at `multiplier` times its rate during `burst_window`.
pub fn detect_burst(burst_window: usize, component: usize, multiplier: f64, seed: u64) -> Result<Vec<WindowRow>> {
    let mut spec: SynthSpec = serde_json::from_str(STREAM)?;
    spec.seed = seed;
    if multiplier > 1.0 {
        spec.bursts.push(Burst {
            window: burst_window,
            component,
            multiplier,
        });
    }
    spec.validate()?;
    let records = spec.generate()?;
    let events = records.iter().map(|r| r.to_event()).collect();
    let windows = ingest::window_stream(events, spec.window)?;

    let mut config = default_config();
    config.components = 3;
    config.grids = vec![50];
    config.epochs = 15;
    config.window = spec.window;
    config.seed = seed;
    let first = windows.first().ok_or_else(|| Error::Config("empty stream".into()))?;
    let mut pipeline = Pipeline::new(config, spec.units(), first)?;
    windows
        .iter()
        .map(|w| {
            let out = pipeline.step(w)?;
            Ok(WindowRow {
                window: w.index,
                records: w.n_events(),
                burst_records: w.iter_records().filter(|(_, r)| r.label == Some(true)).count(),
                score: out.verdict.score,
                p_value: out.verdict.p_value,
                anomaly: out.verdict.is_anomaly,
                component_mass: out.report.component_mass,
            })
        })
        .collect()
}

#[wasm_bindgen(js_name = detectBurst)]
pub fn detect_burst_js(
    burst_window: usize,
    component: usize,
    multiplier: f64,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(detect_burst(burst_window, component, multiplier, seed))
}

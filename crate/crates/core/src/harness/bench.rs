//! Runtime benchmarks: per-window time over a long run of identical windows,
//! and time against window size and component count.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest;
use crate::model::{CurrentTensor, EventRecord};

use super::driver::Pipeline;
use super::synth::SynthSpec;

fn default_windows() -> usize {
    50
}

fn default_scales() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

fn default_repeats() -> usize {
    3
}

fn default_trials() -> usize {
    3
}

/// JSON benchmark description. `stream` describes the records of one
/// window; its `timestamps` field is replaced by the model window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub stream: SynthSpec,
    #[serde(default)]
    pub model: Config,
    /// Measured windows in the stability run (one extra warm-up window runs first).
    #[serde(default = "default_windows")]
    pub windows: usize,
    /// Multipliers of the stream rate for the size sweep.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Component counts for the K sweep; skipped when empty.
    #[serde(default)]
    pub components: Vec<usize>,
    /// Measured windows per sweep point; the median is reported.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Timed passes over the windows; each window keeps its fastest time.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Directory for the CSV outputs.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl BenchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        if spec.windows < 2 || spec.repeats == 0 || spec.trials == 0 || spec.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "bench needs windows >= 2, repeats and trials >= 1, and positive scales".into(),
            ));
        }
        spec.stream.validate()?;
        Ok(spec)
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub records: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// Wall time of each measured window in the stability run.
    pub window_ms: Vec<f64>,
    /// Least-squares slope of time against window index, per 10 windows,
    /// as a fraction of the mean time.
    pub drift_per_10: f64,
    pub size_sweep: Vec<SweepPoint>,
    pub size_slope: f64,
    pub component_sweep: Vec<SweepPoint>,
    pub component_slope: Option<f64>,
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope in log-log space.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_slope(&lx, &ly)
}

/// Relative drift: slope per 10 windows divided by the mean.
pub fn drift_per_10(times: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..times.len()).map(|i| i as f64).collect();
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    10.0 * linear_slope(&xs, times) / mean
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Records of one window, repeated `copies` times back to back.
fn repeated_stream(stream: &SynthSpec, tc: usize, copies: usize) -> Result<Vec<CurrentTensor>> {
    let mut one = stream.clone();
    one.timestamps = tc;
    one.window = tc;
    one.bursts.clear();
    let base: Vec<EventRecord> = one.generate()?.iter().map(|r| r.to_event()).collect();
    let span = tc as f64 * one.step;
    let mut all = Vec::with_capacity(base.len() * copies);
    for c in 0..copies {
        all.extend(base.iter().map(|r| {
            let mut r = r.clone();
            r.timestamp += c as f64 * span;
            r
        }));
    }
    ingest::window_stream(all, tc)
}

/// Run `windows` in order, returning the wall time of each one in
/// milliseconds. The whole sequence is replayed `trials` times from a fresh
/// pipeline (the runs are identical) and each window keeps its fastest time.
/// Replaying the sequence, rather than repeating a window back to back,
/// spreads slow spells of the machine over different windows in each pass.
pub fn time_windows(
    config: &Config,
    units: Vec<usize>,
    windows: &[CurrentTensor],
    trials: usize,
) -> Result<Vec<f64>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Config("no windows to time".into()))?;
    let fresh = Pipeline::new(config.clone(), units, first)?;
    let mut times = vec![f64::INFINITY; windows.len()];
    for _ in 0..trials.max(1) {
        let mut pipeline = fresh.clone();
        for (w, best) in windows.iter().zip(times.iter_mut()) {
            let start = Instant::now();
            pipeline.process(w)?;
            *best = best.min(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(times)
}

fn sweep_point(config: &Config, spec: &BenchSpec, stream: &SynthSpec, value: f64) -> Result<SweepPoint> {
    let windows = repeated_stream(stream, config.window, spec.repeats + 1)?;
    let records = windows[0].n_events();
    let times = time_windows(config, stream.units(), &windows, spec.trials)?;
    Ok(SweepPoint {
        value,
        records,
        wall_ms: median(times[1..].to_vec()),
    })
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    let config = &spec.model;
    config.validate(spec.stream.n_categorical(), spec.stream.n_continuous())?;

    let windows = repeated_stream(&spec.stream, config.window, spec.windows + 1)?;
    let times = time_windows(config, spec.stream.units(), &windows, spec.trials)?;
    let window_ms = times[1..].to_vec();
    let drift = drift_per_10(&window_ms);

    let mut size_sweep = Vec::new();
    for &s in &spec.scales {
        let mut stream = spec.stream.clone();
        stream.rate *= s;
        size_sweep.push(sweep_point(config, spec, &stream, s)?);
    }
    let size_slope = loglog_slope(
        &size_sweep.iter().map(|p| p.records as f64).collect::<Vec<_>>(),
        &size_sweep.iter().map(|p| p.wall_ms).collect::<Vec<_>>(),
    );

    let mut component_sweep = Vec::new();
    for &k in &spec.components {
        let mut cfg = config.clone();
        cfg.components = k;
        component_sweep.push(sweep_point(&cfg, spec, &spec.stream, k as f64)?);
    }
    let component_slope = (component_sweep.len() >= 2).then(|| {
        loglog_slope(
            &component_sweep.iter().map(|p| p.value).collect::<Vec<_>>(),
            &component_sweep.iter().map(|p| p.wall_ms).collect::<Vec<_>>(),
        )
    });

    Ok(BenchReport {
        window_ms,
        drift_per_10: drift,
        size_sweep,
        size_slope,
        component_sweep,
        component_slope,
    })
}

/// Write `windows.csv`, `size_sweep.csv` and `component_sweep.csv`.
pub fn write_bench(dir: &std::path::Path, report: &BenchReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = fs::File::create(dir.join("windows.csv"))?;
    writeln!(w, "window,wall_ms")?;
    for (i, t) in report.window_ms.iter().enumerate() {
        writeln!(w, "{i},{t:.4}")?;
    }
    for (name, rows) in [
        ("size_sweep.csv", &report.size_sweep),
        ("component_sweep.csv", &report.component_sweep),
    ] {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        for p in rows {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes_of_exact_lines() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((linear_slope(&xs, &[3.0, 5.0, 7.0, 9.0]) - 2.0).abs() < 1e-12);
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 5.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
        assert_eq!(drift_per_10(&[2.0; 10]), 0.0);
        // +0.01 per window on a mean of 1.0 -> 10% per 10 windows
        let t: Vec<f64> = (0..11).map(|i| 0.95 + 0.01 * i as f64).collect();
        assert!((drift_per_10(&t) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn repeated_windows_are_identical() {
        let spec: SynthSpec = serde_json::from_str(
            r#"{"timestamps": 1, "rate": 4, "arrivals": "fixed",
                "components": [{"categorical": [[0.5, 0.5]], "continuous": [{"kind": "normal", "mean": 0, "sd": 1}]}]}"#,
        )
        .unwrap();
        let windows = repeated_stream(&spec, 5, 3).unwrap();
        assert_eq!(windows.len(), 3);
        for w in &windows[1..] {
            assert_eq!(w.n_events(), windows[0].n_events());
            assert_eq!(w.timestamps[0] - windows[0].timestamps[0], 5.0 * w.index as f64);
            let cats: Vec<_> = w.iter_records().map(|(_, r)| r.cat.clone()).collect();
            let cats0: Vec<_> = windows[0].iter_records().map(|(_, r)| r.cat.clone()).collect();
            assert_eq!(cats, cats0);
        }
    }

    #[test]
    fn small_bench_runs() {
        let text = r#"{
            "stream": {"timestamps": 1, "rate": 6, "arrivals": "fixed", "seed": 3,
                "components": [
                    {"categorical": [[0.9, 0.1]], "continuous": [{"kind": "normal", "mean": 0, "sd": 1}]},
                    {"categorical": [[0.1, 0.9]], "continuous": [{"kind": "normal", "mean": 5, "sd": 1}]}]},
            "model": {"components": 2, "grids": [8], "epochs": 2, "window": 4},
            "windows": 3, "scales": [1, 2], "components": [1, 2], "repeats": 1, "trials": 2
        }"#;
        let spec = BenchSpec::from_json(text).unwrap();
        let report = run_bench(&spec).unwrap();
        assert_eq!(report.window_ms.len(), 3);
        assert_eq!(report.size_sweep[1].records, 2 * report.size_sweep[0].records);
        assert!(report.component_slope.is_some());
        let dir = tempfile::tempdir().unwrap();
        write_bench(dir.path(), &report).unwrap();
        let sweep = fs::read_to_string(dir.path().join("size_sweep.csv")).unwrap();
        assert!(sweep.starts_with("value,records,wall_ms\n"));
    }
}

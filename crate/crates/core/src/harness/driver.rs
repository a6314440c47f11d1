//! The per-window detection loop and its file outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::detector::{degrees_of_freedom, judge, update_stats, AnomalyVerdict};
use crate::error::{Error, Result};
use crate::inference::density::{density_values, grid_probabilities};
use crate::inference::{component_mass, weight_matrix, Engine, InferenceDiagnostics};
use crate::ingest::{self, ColumnRoles, GridSpec, Vocab};
use crate::model::{CountStats, CurrentTensor, ModelParams, StreamStats};
use crate::sampling::RngHandle;

use super::metrics::{auc_pr, auc_roc, label_windows};
use super::runconfig::RunConfig;

/// One line of the JSONL report stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub start: f64,
    pub end: f64,
    pub records: usize,
    pub score: f64,
    pub dof: u64,
    pub p_value: f64,
    pub anomaly: bool,
    pub component_mass: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Everything produced for one window.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub report: WindowReport,
    pub verdict: AnomalyVerdict,
    pub z: Vec<usize>,
    pub counts: CountStats,
    pub diagnostics: InferenceDiagnostics,
    pub wall_ms: f64,
}

/// Detection state carried across windows.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub engine: Engine,
    pub grids: Vec<GridSpec>,
    pub params: ModelParams,
    pub stats: StreamStats,
    pub dof: u64,
    rng: RngHandle,
}

impl Pipeline {
    /// Fix grids and the weight lengthscale from the first window.
    pub fn new(mut config: Config, units: Vec<usize>, first: &CurrentTensor) -> Result<Self> {
        let n_continuous = first.iter_records().next().map_or(0, |(_, r)| r.cont.len());
        config.validate(units.len(), n_continuous)?;
        let counts: Vec<usize> = (0..n_continuous).map(|m| config.grid_count(m)).collect();
        let grids = ingest::grids_from_window(first, &counts)?;
        config.resolve_lengthscales(ingest::median_gap(&first.timestamps).unwrap_or(1.0));
        Self::with_grids(config, units, grids)
    }

    pub fn with_grids(config: Config, units: Vec<usize>, grids: Vec<GridSpec>) -> Result<Self> {
        let rng = RngHandle::new(config.seed);
        let engine = Engine::new(config, units, &grids)?;
        let dims = &engine.dims;
        let dof = degrees_of_freedom(dims.components, &dims.units, &dims.grids)?;
        Ok(Self {
            params: ModelParams::initial(dims),
            stats: StreamStats::new(dims),
            dof,
            grids,
            engine,
            rng,
        })
    }

    /// Process one window and record its wall time.
    pub fn process(&mut self, window: &CurrentTensor) -> Result<WindowOutcome> {
        let started = Instant::now();
        let mut outcome = self.step(window)?;
        outcome.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(outcome)
    }

    /// [`Pipeline::process`] without the clock, for targets that have none
    /// (`wall_ms` is left at zero).
    pub fn step(&mut self, window: &CurrentTensor) -> Result<WindowOutcome> {
        let encoded = ingest::encode(window, &self.grids);
        let out = self.engine.infer(&encoded, &self.params, &mut self.rng)?;
        let interval = encoded.interval;
        let verdict = judge(
            &out.counts,
            &self.stats,
            interval,
            self.dof,
            self.engine.config.p_value_threshold,
        )?;
        update_stats(&mut self.stats, &out.counts, interval, &verdict)?;
        self.params = out.params;
        self.params.snapshot();
        let report = WindowReport {
            window: window.index,
            start: window.timestamps.first().copied().unwrap_or(window.anchor),
            end: window.timestamps.last().copied().unwrap_or(window.anchor),
            records: window.n_events(),
            score: verdict.score,
            dof: verdict.dof,
            p_value: verdict.p_value,
            anomaly: verdict.is_anomaly,
            component_mass: component_mass(&self.params.b),
            wall_ms: None,
        };
        Ok(WindowOutcome {
            report,
            verdict,
            z: out.z,
            counts: out.counts,
            diagnostics: out.diagnostics,
            wall_ms: 0.0,
        })
    }
}

/// Totals returned by [`run_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub windows: usize,
    pub anomalies: usize,
    pub records: usize,
}

/// Run the whole pipeline described by a run configuration.
pub fn run_stream(rc: &RunConfig) -> Result<RunSummary> {
    let file = File::open(&rc.input)?;
    let parsed = ingest::read_events(std::io::BufReader::new(file), &rc.columns)?;
    let records = parsed.records.len();
    let windows = ingest::window_stream(parsed.records, rc.model.window)?;
    fs::create_dir_all(&rc.output)?;
    let mut reports = BufWriter::new(File::create(rc.output.join("reports.jsonl"))?);
    let mut dynamics = BufWriter::new(File::create(rc.output.join("dynamics.csv"))?);
    let mut timings = BufWriter::new(File::create(rc.output.join("timings.csv"))?);
    writeln!(timings, "window,records,wall_ms")?;

    let Some(first) = windows.first() else {
        reports.flush()?;
        return Ok(RunSummary {
            windows: 0,
            anomalies: 0,
            records,
        });
    };
    let mut pipeline = Pipeline::new(rc.model.clone(), parsed.vocab.sizes(), first)?;
    let k = pipeline.engine.dims.components;
    write!(dynamics, "window,timestamp")?;
    for c in 0..k {
        write!(dynamics, ",component{c}")?;
    }
    writeln!(dynamics)?;

    let mut anomalies = 0;
    for window in &windows {
        let mut outcome = pipeline.process(window)?;
        log::info!(
            "window {} records {} score {:.3} p {:.3e}{}",
            window.index,
            window.n_events(),
            outcome.verdict.score,
            outcome.verdict.p_value,
            if outcome.verdict.is_anomaly { " ANOMALY" } else { "" }
        );
        let diag = outcome.diagnostics.density;
        if diag.not_converged > 0 {
            log::debug!(
                "window {}: {} density fits hit the iteration cap",
                window.index,
                diag.not_converged
            );
        }
        if diag.line_search_failures > 0 {
            log::warn!(
                "window {}: {} density fits stopped on a line-search failure",
                window.index,
                diag.line_search_failures
            );
        }
        anomalies += usize::from(outcome.verdict.is_anomaly);
        if rc.report_wall_time {
            outcome.report.wall_ms = Some(outcome.wall_ms);
        }
        serde_json::to_writer(&mut reports, &outcome.report)?;
        writeln!(reports)?;
        writeln!(timings, "{},{},{:.3}", window.index, window.n_events(), outcome.wall_ms)?;
        let w = weight_matrix(&pipeline.params.b);
        for (t, ts) in pipeline.params.b_times.iter().enumerate() {
            write!(dynamics, "{},{}", window.index, ts)?;
            for v in w.row(t) {
                write!(dynamics, ",{v}")?;
            }
            writeln!(dynamics)?;
        }
    }
    reports.flush()?;
    dynamics.flush()?;
    timings.flush()?;

    write_summaries(&rc.output, &pipeline, &parsed.vocab, &rc.columns, rc.top_units)?;
    let snapshot = ModelSnapshot {
        config: &pipeline.engine.config,
        params: &pipeline.params,
        stats: &pipeline.stats,
        grids: &pipeline.grids,
        vocab: &parsed.vocab,
        origin: parsed.origin,
    };
    let mut model = BufWriter::new(File::create(rc.output.join("model.json"))?);
    serde_json::to_writer_pretty(&mut model, &snapshot)?;
    model.flush()?;
    Ok(RunSummary {
        windows: windows.len(),
        anomalies,
        records,
    })
}

#[derive(Serialize)]
struct ModelSnapshot<'a> {
    config: &'a Config,
    params: &'a ModelParams,
    stats: &'a StreamStats,
    grids: &'a [GridSpec],
    vocab: &'a Vocab,
    origin: f64,
}

/// Top units per (component, categorical attribute) and density curves per
/// (component, continuous attribute).
pub fn write_summaries(
    dir: &Path,
    pipeline: &Pipeline,
    vocab: &Vocab,
    columns: &ColumnRoles,
    top: usize,
) -> Result<()> {
    let mut units = csv::Writer::from_path(dir.join("top_units.csv"))?;
    units.write_record(["component", "attribute", "rank", "unit", "probability"])?;
    for (m, a) in pipeline.params.a.iter().enumerate() {
        for k in 0..a.rows() {
            let mut order: Vec<usize> = (0..a.cols()).collect();
            order.sort_by(|&i, &j| a.get(k, j).total_cmp(&a.get(k, i)).then(i.cmp(&j)));
            for (rank, &u) in order.iter().take(top).enumerate() {
                units.write_record([
                    k.to_string(),
                    columns.categorical[m].clone(),
                    (rank + 1).to_string(),
                    vocab.name(m, u).unwrap_or("?").to_string(),
                    format!("{:.6}", a.get(k, u)),
                ])?;
            }
        }
    }
    units.flush()?;

    let mut curves = csv::Writer::from_path(dir.join("densities.csv"))?;
    curves.write_record(["component", "attribute", "grid", "center", "width", "density", "mass"])?;
    for (m, c) in pipeline.params.c.iter().enumerate() {
        let grid = &pipeline.grids[m];
        let centers = grid.centers();
        let widths = grid.widths();
        let log_widths: Vec<f64> = widths.iter().map(|w| w.ln()).collect();
        for k in 0..c.rows() {
            let dens = density_values(c.row(k), &log_widths);
            let mass = grid_probabilities(c.row(k), &log_widths);
            for g in 0..grid.count() {
                curves.write_record([
                    k.to_string(),
                    columns.continuous[m].clone(),
                    g.to_string(),
                    format!("{:e}", centers[g]),
                    format!("{:e}", widths[g]),
                    format!("{:e}", dens[g]),
                    format!("{:e}", mass[g]),
                ])?;
            }
        }
    }
    curves.flush()?;
    Ok(())
}

/// Window-level evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub windows: usize,
    pub positive_windows: usize,
    pub auc_roc: f64,
    pub auc_pr: f64,
}

/// Read JSONL reports.
pub fn read_reports(text: &str) -> Result<Vec<WindowReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::schema(i + 1, format!("bad report line: {e}")))
        })
        .collect()
}

/// Anomalous records falling inside each report's timestamp range.
pub fn anomalous_per_window(reports: &[WindowReport], labeled: &[(f64, bool)]) -> Vec<usize> {
    reports
        .iter()
        .map(|r| {
            let lo = labeled.partition_point(|&(t, _)| t < r.start);
            let hi = labeled.partition_point(|&(t, _)| t <= r.end);
            labeled[lo..hi].iter().filter(|&&(_, l)| l).count()
        })
        .collect()
}

/// Score reports against a labeled stream.
pub fn evaluate(reports: &[WindowReport], labeled: &[(f64, bool)], threshold: usize) -> Result<Evaluation> {
    let counts = anomalous_per_window(reports, labeled);
    let labels = label_windows(&counts, threshold);
    let scores: Vec<f64> = reports.iter().map(|r| r.score).collect();
    Ok(Evaluation {
        windows: reports.len(),
        positive_windows: labels.iter().filter(|&&l| l).count(),
        auc_roc: auc_roc(&scores, &labels)?,
        auc_pr: auc_pr(&scores, &labels)?,
    })
}

/// Timestamps and labels of a CSV, normalized the same way as `run`.
pub fn read_labels(path: &Path, timestamp: &str, label: &str) -> Result<Vec<(f64, bool)>> {
    let roles = ColumnRoles {
        timestamp: timestamp.to_string(),
        categorical: Vec::new(),
        continuous: Vec::new(),
        label: Some(label.to_string()),
    };
    let parsed = ingest::read_events(std::io::BufReader::new(File::open(path)?), &roles)?;
    Ok(parsed
        .records
        .iter()
        .map(|r| (r.timestamp, r.label.unwrap_or(false)))
        .collect())
}

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use groupwatch::harness::bench::{run_bench, write_bench, BenchSpec};
use groupwatch::harness::driver::{evaluate, read_labels, read_reports, run_stream};
use groupwatch::harness::runconfig::RunConfig;
use groupwatch::harness::synth::{write_csv, SynthSpec};
use groupwatch::Result;

/// Log verbosity, in env_logger filter syntax (e.g. `info`, `groupwatch=debug`).
const LOG_ENV: &str = "GROUPWATCH_LOG";

#[derive(Parser)]
#[command(name = "groupwatch", version, about = "Group-anomaly detection over event streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a CSV stream window by window.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic labeled stream from a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window-level AUC-ROC / AUC-PR of reports against a labeled CSV.
    Evaluate {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// A window is anomalous when it holds more anomalous records than this.
        #[arg(long, default_value_t = 100)]
        threshold: usize,
        #[arg(long, default_value = "timestamp")]
        timestamp: String,
        #[arg(long, default_value = "label")]
        label: String,
    },
    /// Time windows over a long run and across window sizes.
    Bench {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let rc = RunConfig::load(&config)?;
            let summary = run_stream(&rc)?;
            println!(
                "{} windows, {} anomalous, {} records -> {}",
                summary.windows,
                summary.anomalies,
                summary.records,
                rc.output.display()
            );
        }
        Command::Generate { spec, out } => {
            let spec = SynthSpec::from_json(&fs::read_to_string(spec)?)?;
            let records = spec.generate()?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            write_csv(&records, spec.n_categorical(), spec.n_continuous(), &mut w)?;
            w.flush()?;
            let anomalous = records.iter().filter(|r| r.anomalous).count();
            println!("{} records ({anomalous} anomalous) -> {}", records.len(), out.display());
        }
        Command::Evaluate {
            reports,
            data,
            threshold,
            timestamp,
            label,
        } => {
            let reports = read_reports(&fs::read_to_string(reports)?)?;
            let labeled = read_labels(&data, &timestamp, &label)?;
            let ev = evaluate(&reports, &labeled, threshold)?;
            println!("{}", serde_json::to_string_pretty(&ev)?);
        }
        Command::Bench { spec } => {
            let text = fs::read_to_string(&spec)?;
            let bench = BenchSpec::from_json(&text)?;
            let report = run_bench(&bench)?;
            if let Some(dir) = &bench.output {
                let dir = spec.parent().map_or_else(|| dir.clone(), |p| p.join(dir));
                write_bench(&dir, &report)?;
            }
            let mean = report.window_ms.iter().sum::<f64>() / report.window_ms.len() as f64;
            println!("mean window time {mean:.3} ms, drift per 10 windows {:+.2}%", 100.0 * report.drift_per_10);
            println!("records,wall_ms");
            for p in &report.size_sweep {
                println!("{},{:.3}", p.records, p.wall_ms);
            }
            println!("log-log slope vs records {:.3}", report.size_slope);
            if let Some(s) = report.component_slope {
                println!("log-log slope vs components {s:.3}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

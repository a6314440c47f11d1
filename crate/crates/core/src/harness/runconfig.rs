//! Flat `key = value` run configuration files.
//!
//! ```text
//! # comments start with '#'
//! input = flows.csv
//! output = out
//! timestamp = time
//! categorical = proto, dst_port
//! continuous = bytes, duration
//! components = 20
//! grids = 300
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{default_config, Config};
use crate::error::{Error, Result};
use crate::ingest::ColumnRoles;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub columns: ColumnRoles,
    pub model: Config,
    /// Include per-window wall time in the JSONL reports (breaks byte-level
    /// reproducibility of that file).
    pub report_wall_time: bool,
    /// Units listed per (component, attribute) in the summary.
    pub top_units: usize,
}

pub const KEYS: &[&str] = &[
    "input",
    "output",
    "timestamp",
    "categorical",
    "continuous",
    "label",
    "components",
    "grids",
    "epochs",
    "window",
    "alpha",
    "sigma2_c",
    "sigma2_noise",
    "lengthscale_b",
    "signal_var_b",
    "lengthscale_c",
    "signal_var_c",
    "derivative_order",
    "lbfgs_max_iter",
    "lbfgs_memory",
    "lbfgs_tolerance",
    "p_value_threshold",
    "seed",
    "report_wall_time",
    "top_units",
];

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

fn list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    split_list(value)
        .into_iter()
        .map(|v| parse(line, key, &v))
        .collect()
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut model = default_config();
        let mut input = None;
        let mut output = None;
        let mut columns = ColumnRoles::default();
        let mut report_wall_time = false;
        let mut top_units = 10;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            match key {
                "input" => input = Some(base.join(value)),
                "output" => output = Some(base.join(value)),
                "timestamp" => columns.timestamp = value.to_string(),
                "categorical" => columns.categorical = split_list(value),
                "continuous" => columns.continuous = split_list(value),
                "label" => columns.label = Some(value.to_string()),
                "components" => model.components = parse(line, key, value)?,
                "grids" => model.grids = list(line, key, value)?,
                "epochs" => model.epochs = parse(line, key, value)?,
                "window" => model.window = parse(line, key, value)?,
                "alpha" => model.alpha = list(line, key, value)?,
                "sigma2_c" => model.sigma2_c = parse(line, key, value)?,
                "sigma2_noise" => model.sigma2_noise = parse(line, key, value)?,
                "lengthscale_b" => model.kernel_b.lengthscale = Some(parse(line, key, value)?),
                "signal_var_b" => model.kernel_b.signal_var = parse(line, key, value)?,
                "lengthscale_c" => model.kernel_c.lengthscale = Some(parse(line, key, value)?),
                "signal_var_c" => model.kernel_c.signal_var = parse(line, key, value)?,
                "derivative_order" => model.derivative_order = parse(line, key, value)?,
                "lbfgs_max_iter" => model.lbfgs_max_iter = parse(line, key, value)?,
                "lbfgs_memory" => model.lbfgs_memory = parse(line, key, value)?,
                "lbfgs_tolerance" => model.lbfgs_tolerance = parse(line, key, value)?,
                "p_value_threshold" => model.p_value_threshold = parse(line, key, value)?,
                "seed" => model.seed = parse(line, key, value)?,
                "report_wall_time" => report_wall_time = parse(line, key, value)?,
                "top_units" => top_units = parse(line, key, value)?,
                _ => unreachable!("key list checked above"),
            }
        }
        let input = input.ok_or_else(|| Error::Config("missing key `input`".into()))?;
        let output = output.ok_or_else(|| Error::Config("missing key `output`".into()))?;
        if columns.timestamp.is_empty() {
            return Err(Error::Config("missing key `timestamp`".into()));
        }
        model.validate(columns.categorical.len(), columns.continuous.len())?;
        Ok(Self {
            input,
            output,
            columns,
            model,
            report_wall_time,
            top_units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_kinds_of_values() {
        let text = "\
# sample
input = data/flows.csv
output = out   # trailing comment
timestamp = time
categorical = proto, port
continuous = bytes
label = is_attack
components = 4
grids = 50
alpha = 0.5, 0.25
lengthscale_b = 12.5
seed = 7
report_wall_time = true
";
        let rc = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(rc.input, PathBuf::from("/cfg/data/flows.csv"));
        assert_eq!(rc.output, PathBuf::from("/cfg/out"));
        assert_eq!(rc.columns.categorical, vec!["proto", "port"]);
        assert_eq!(rc.columns.label.as_deref(), Some("is_attack"));
        assert_eq!(rc.model.components, 4);
        assert_eq!(rc.model.alpha, vec![0.5, 0.25]);
        assert_eq!(rc.model.kernel_b.lengthscale, Some(12.5));
        assert_eq!(rc.model.epochs, 30);
        assert!(rc.report_wall_time);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        for text in [
            "input = a\noutput = b\ntimestamp = t\nbogus = 1\n",
            "input = a\noutput = b\ntimestamp = t\ncomponents = many\n",
            "input = a\noutput = b\n",
            "input = a\noutput = b\ntimestamp = t\ncomponents = 0\n",
            "input = a\ninput = b\n",
            "just words\n",
        ] {
            assert!(matches!(RunConfig::parse(text, base), Err(Error::Config(_))), "{text}");
        }
    }
}

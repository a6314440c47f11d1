//! Synthetic labeled event streams with planted components and bursts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EventRecord;
use crate::sampling::{sample_categorical, RngHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrivals {
    /// Records per (timestamp, component) are Poisson.
    #[default]
    Poisson,
    /// Records per (timestamp, component) are the rounded expected count.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Continuous {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    /// Unit probabilities, one vector per categorical attribute.
    #[serde(default)]
    pub categorical: Vec<Vec<f64>>,
    #[serde(default)]
    pub continuous: Vec<Continuous>,
}

/// Component weights in effect from timestamp index `from` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: usize,
    pub weights: Vec<f64>,
}

/// Rate multiplier applied to one component for a whole window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub window: usize,
    pub component: usize,
    pub multiplier: f64,
}

fn default_step() -> f64 {
    1.0
}

fn default_window() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    /// Number of distinct timestamps.
    pub timestamps: usize,
    /// Spacing between timestamps in seconds.
    #[serde(default = "default_step")]
    pub step: f64,
    /// First timestamp (epoch seconds).
    #[serde(default)]
    pub start: f64,
    /// Expected normal records per timestamp, summed over components.
    pub rate: f64,
    #[serde(default)]
    pub arrivals: Arrivals,
    pub components: Vec<ComponentSpec>,
    /// Piecewise-constant component weights; equal weights when empty.
    #[serde(default)]
    pub dynamics: Vec<Segment>,
    #[serde(default)]
    pub bursts: Vec<Burst>,
    /// Timestamps per window, used to place bursts.
    #[serde(default = "default_window")]
    pub window: usize,
}

/// One generated record with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub timestamp: f64,
    pub units: Vec<usize>,
    pub values: Vec<f64>,
    pub component: usize,
    pub anomalous: bool,
}

impl SynthRecord {
    pub fn to_event(&self) -> EventRecord {
        EventRecord {
            timestamp: self.timestamp,
            cat: self.units.clone(),
            cont: self.values.clone(),
            label: Some(self.anomalous),
        }
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_categorical(&self) -> usize {
        self.components.first().map_or(0, |c| c.categorical.len())
    }

    pub fn n_continuous(&self) -> usize {
        self.components.first().map_or(0, |c| c.continuous.len())
    }

    /// Unit count per categorical attribute.
    pub fn units(&self) -> Vec<usize> {
        self.components
            .first()
            .map_or_else(Vec::new, |c| c.categorical.iter().map(Vec::len).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let k = self.components.len();
        if k == 0 {
            return bad("synthetic spec needs at least one component".into());
        }
        if self.timestamps == 0 || self.window == 0 {
            return bad("timestamps and window must be >= 1".into());
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) || !(self.step > 0.0 && self.step.is_finite()) {
            return bad("rate and step must be positive".into());
        }
        let units = self.units();
        let m2 = self.n_continuous();
        for (i, c) in self.components.iter().enumerate() {
            if c.categorical.iter().map(Vec::len).collect::<Vec<_>>() != units || c.continuous.len() != m2 {
                return bad(format!("component {i} has a different attribute layout"));
            }
            for probs in &c.categorical {
                if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || probs.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("component {i} has invalid unit probabilities"));
                }
            }
            for d in &c.continuous {
                let ok = match *d {
                    Continuous::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
                    Continuous::Uniform { low, high } => low.is_finite() && high.is_finite() && high > low,
                };
                if !ok {
                    return bad(format!("component {i} has an invalid continuous distribution"));
                }
            }
        }
        for seg in &self.dynamics {
            if seg.weights.len() != k || seg.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || seg.weights.iter().sum::<f64>() <= 0.0 {
                return bad(format!("dynamics segment at {} needs {k} non-negative weights", seg.from));
            }
        }
        if self.dynamics.windows(2).any(|w| w[1].from <= w[0].from) {
            return bad("dynamics segments must have increasing `from`".into());
        }
        for b in &self.bursts {
            if b.component >= k || !(b.multiplier >= 1.0 && b.multiplier.is_finite()) {
                return bad(format!("burst in window {} is invalid", b.window));
            }
        }
        Ok(())
    }

    /// Normalized component weights at timestamp index `t`.
    pub fn weights_at(&self, t: usize) -> Vec<f64> {
        let k = self.components.len();
        let raw = self
            .dynamics
            .iter()
            .take_while(|s| s.from <= t)
            .last()
            .map_or_else(|| vec![1.0; k], |s| s.weights.clone());
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }

    /// Burst multiplier of component `k` at timestamp index `t` (1 when none).
    pub fn multiplier(&self, t: usize, k: usize) -> f64 {
        let w = t / self.window;
        self.bursts
            .iter()
            .filter(|b| b.window == w && b.component == k)
            .map(|b| b.multiplier)
            .fold(1.0, f64::max)
    }

    pub fn generator(&self) -> Generator<'_> {
        Generator {
            spec: self,
            rng: RngHandle::new(self.seed),
            next: 0,
        }
    }

    /// All records of the stream, sorted by timestamp.
    pub fn generate(&self) -> Result<Vec<SynthRecord>> {
        let mut out = Vec::new();
        for batch in self.generator() {
            out.extend(batch?);
        }
        Ok(out)
    }
}

/// Yields the records of one timestamp at a time.
pub struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: RngHandle,
    next: usize,
}

impl Generator<'_> {
    fn count(&mut self, mean: f64) -> Result<u64> {
        if mean <= 0.0 {
            return Ok(0);
        }
        Ok(match self.spec.arrivals {
            Arrivals::Fixed => mean.round() as u64,
            Arrivals::Poisson => {
                let d = Poisson::new(mean).map_err(|e| Error::Config(format!("poisson rate {mean}: {e}")))?;
                d.sample(&mut self.rng) as u64
            }
        })
    }

    fn record(&mut self, timestamp: f64, k: usize, anomalous: bool) -> Result<SynthRecord> {
        let comp = &self.spec.components[k];
        let units = comp
            .categorical
            .iter()
            .map(|p| sample_categorical(p, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let values = comp
            .continuous
            .iter()
            .map(|d| match *d {
                Continuous::Normal { mean, sd } => Normal::new(mean, sd)
                    .expect("validated normal")
                    .sample(&mut self.rng),
                Continuous::Uniform { low, high } => self.rng.random_range(low..high),
            })
            .collect();
        Ok(SynthRecord {
            timestamp,
            units,
            values,
            component: k,
            anomalous,
        })
    }

    fn batch(&mut self, t: usize) -> Result<Vec<SynthRecord>> {
        let spec = self.spec;
        let ts = spec.start + spec.step * t as f64;
        let weights = spec.weights_at(t);
        let mut out = Vec::new();
        for (k, w) in weights.iter().enumerate() {
            let base = spec.rate * w;
            for _ in 0..self.count(base)? {
                out.push(self.record(ts, k, false)?);
            }
            let extra = (spec.multiplier(t, k) - 1.0) * base;
            for _ in 0..self.count(extra)? {
                out.push(self.record(ts, k, true)?);
            }
        }
        if out.is_empty() {
            // keep every timestamp present so windows line up with the spec
            let k = sample_categorical(&weights, &mut self.rng)?;
            out.push(self.record(ts, k, false)?);
        }
        out.shuffle(&mut self.rng);
        Ok(out)
    }
}

impl Iterator for Generator<'_> {
    type Item = Result<Vec<SynthRecord>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.spec.timestamps {
            return None;
        }
        let t = self.next;
        self.next += 1;
        Some(self.batch(t))
    }
}

/// Write records as CSV with columns `timestamp, cat0.., x0.., component, label`.
pub fn write_csv<W: Write>(records: &[SynthRecord], n_categorical: usize, n_continuous: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend((0..n_categorical).map(|m| format!("cat{m}")));
    header.extend((0..n_continuous).map(|m| format!("x{m}")));
    header.push("component".into());
    header.push("label".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in records {
        row.clear();
        row.push(format!("{}", r.timestamp));
        row.extend(r.units.iter().map(|u| format!("u{u}")));
        row.extend(r.values.iter().map(|v| format!("{v}")));
        row.push(r.component.to_string());
        row.push(if r.anomalous { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

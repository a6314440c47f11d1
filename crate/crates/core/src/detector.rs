//! Chi-squared group-anomaly scoring of a window against the stream history.
//!
//! Under the null hypothesis each count of the current window has the same
//! rate as in all earlier normal windows, so its expectation is the pooled
//! count scaled by the window's share of the total normal time. The score is
//! the Pearson statistic summed over the component, component-unit and
//! component-grid count families.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{CountStats, StreamStats, Table};

/// Expected counts below this are floored when a count was observed.
pub const EXPECTED_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub score: f64,
    pub dof: u64,
    pub p_value: f64,
    pub is_anomaly: bool,
}

impl AnomalyVerdict {
    pub fn new(score: f64, dof: u64, threshold: f64) -> Self {
        let p = p_value(score, dof);
        Self {
            score,
            dof,
            p_value: p,
            is_anomaly: p < threshold,
        }
    }
}

/// Expected counts of every family under the null hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub e_k: Vec<f64>,
    pub e_mode: Vec<Table<f64>>,
    pub e_grid: Vec<Table<f64>>,
}

/// `E[N] = (N + S) δ / (T + δ)` for all three count families.
pub fn expected_counts(
    counts: &CountStats,
    stats: &StreamStats,
    interval: f64,
) -> Result<ExpectedCounts> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(Error::Contract(format!(
            "window interval must be positive, got {interval}"
        )));
    }
    let share = interval / (stats.normal_time + interval);
    let scale = |n: &[u64], s: &[u64]| -> Vec<f64> {
        n.iter()
            .zip(s)
            .map(|(&n, &s)| (n as f64 + s as f64) * share)
            .collect()
    };
    let table = |n: &Table<u64>, s: &Table<u64>| -> Table<f64> {
        let rows: Vec<Vec<f64>> = (0..n.rows())
            .map(|r| scale(n.row(r), s.row(r)))
            .collect();
        if rows.is_empty() {
            Table::zeros(0, n.cols())
        } else {
            Table::from_rows(&rows)
        }
    };
    Ok(ExpectedCounts {
        e_k: scale(&counts.n_k, &stats.s_k),
        e_mode: counts
            .n_mode
            .iter()
            .zip(&stats.s_mode)
            .map(|(n, s)| table(n, s))
            .collect(),
        e_grid: counts
            .n_grid
            .iter()
            .zip(&stats.s_grid)
            .map(|(n, s)| table(n, s))
            .collect(),
    })
}

/// Pearson contribution `Σ (o - e)² / e` over aligned cells.
pub fn pearson(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let o = o as f64;
            if e < EXPECTED_FLOOR {
                if o == 0.0 {
                    0.0
                } else {
                    (o - EXPECTED_FLOOR).powi(2) / EXPECTED_FLOOR
                }
            } else {
                (o - e).powi(2) / e
            }
        })
        .sum()
}

/// Anomaly score of a window.
pub fn chi_square_score(counts: &CountStats, expected: &ExpectedCounts) -> f64 {
    let mut score = pearson(&counts.n_k, &expected.e_k);
    for (n, e) in counts
        .n_mode
        .iter()
        .zip(&expected.e_mode)
        .chain(counts.n_grid.iter().zip(&expected.e_grid))
    {
        for r in 0..n.rows() {
            score += pearson(n.row(r), e.row(r));
        }
    }
    score
}

/// `K (ΣU + ΣG - M1 - M2 + 1) - 1`.
pub fn degrees_of_freedom(components: usize, units: &[usize], grids: &[usize]) -> Result<u64> {
    if components == 0 {
        return Err(Error::Config("at least one component is required".into()));
    }
    let k = components as i128;
    let cells: i128 = units.iter().chain(grids).map(|&c| c as i128).sum();
    let attrs = (units.len() + grids.len()) as i128;
    let dof = k * (cells - attrs + 1) - 1;
    if dof <= 0 {
        return Err(Error::Config(format!(
            "chi-squared reference has {dof} degrees of freedom"
        )));
    }
    u64::try_from(dof).map_err(|_| Error::Config("degrees of freedom overflow".into()))
}

/// Upper-tail probability of a chi-squared variable with `dof` degrees of freedom.
pub fn p_value(score: f64, dof: u64) -> f64 {
    if score.is_nan() {
        return f64::NAN;
    }
    if score <= 0.0 {
        return 1.0;
    }
    if score.is_infinite() {
        return 0.0;
    }
    regularized_gamma_q(0.5 * dof as f64, 0.5 * score)
}

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
///
/// Series expansion of `P` below `x = a + 1`, modified Lentz continued
/// fraction for `Q` above.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        1.0 - lower_series(a, x, log_prefactor)
    } else {
        upper_continued_fraction(a, x, log_prefactor)
    }
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 1_000_000;

fn lower_series(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    (sum.ln() + log_prefactor).exp()
}

fn upper_continued_fraction(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE / GAMMA_EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (h.ln() + log_prefactor).exp()
}

/// Fold a window into the stream statistics unless it was judged anomalous.
pub fn update_stats(
    stats: &mut StreamStats,
    counts: &CountStats,
    interval: f64,
    verdict: &AnomalyVerdict,
) -> Result<()> {
    if verdict.is_anomaly {
        return Ok(());
    }
    stats.accumulate(counts, interval)
}

/// Score a window and return the verdict.
pub fn judge(
    counts: &CountStats,
    stats: &StreamStats,
    interval: f64,
    dof: u64,
    threshold: f64,
) -> Result<AnomalyVerdict> {
    let expected = expected_counts(counts, stats, interval)?;
    let score = chi_square_score(counts, &expected);
    if !score.is_finite() {
        return Err(Error::Numeric(format!("anomaly score is {score}")));
    }
    Ok(AnomalyVerdict::new(score, dof, threshold))
}

//! Seeded random number generation, categorical draws and Polya-Gamma variates.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Seeded generator. The same seed and call sequence always yields the same
/// draws on every platform.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child generator for a worker.
    pub fn split(&mut self) -> RngHandle {
        RngHandle::new(self.inner.next_u64())
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw an index with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Numeric(format!("invalid categorical weight {w}")));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::Numeric("categorical weights sum to zero".into()));
    }
    Ok(pick(weights, total, rng))
}

/// Draw an index from unnormalized log-weights. Overwrites `log_weights`
/// with the normalized probabilities.
pub fn sample_log_categorical<R: Rng + ?Sized>(
    log_weights: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    let total = normalize_log(log_weights)?;
    Ok(pick(log_weights, total, rng))
}

/// Exponentiate log-weights in place after a max shift and divide by their
/// sum. Returns the sum of the normalized entries (1 up to rounding).
pub fn normalize_log(log_weights: &mut [f64]) -> Result<f64> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!(
            "non-finite log-probability (max {max})"
        )));
    }
    // Relative weights below the normal range are dropped: they cannot be
    // drawn, and subnormal arithmetic is orders of magnitude slower.
    let cutoff = f64::MIN_POSITIVE.ln();
    let mut sum = 0.0;
    for v in log_weights.iter_mut() {
        let d = *v - max;
        *v = if d < cutoff { 0.0 } else { d.exp() };
        sum += *v;
    }
    for v in log_weights.iter_mut() {
        *v /= sum;
    }
    Ok(log_weights.iter().sum())
}

fn pick<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}

const PG_TRUNC: f64 = 0.64;
const PG_SERIES_TERMS: usize = 200;
/// Above this shape the sum of exact draws is replaced by a moment-matched normal.
pub const PG_EXACT_LIMIT: f64 = 170.0;

/// Mean of PG(b, c): `b tanh(c/2) / (2c)`, `b/4` at `c = 0`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        b * (0.25 - c * c / 48.0)
    } else {
        b * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Variance of PG(b, c): `b (sinh c - c) / (4 c³ cosh²(c/2))`, `b/24` at `c = 0`.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1.0 {
        // (sinh c - c) / c³ by its power series, avoiding cancellation
        let c2 = c * c;
        let mut term = 1.0 / 6.0;
        let mut series = term;
        let mut k = 3.0;
        while term > 1e-18 {
            term *= c2 / ((k + 1.0) * (k + 2.0));
            series += term;
            k += 2.0;
        }
        return b * 2.0 * series / (4.0 * (c.cosh() + 1.0));
    }
    let e1 = (-c).exp();
    let e2 = e1 * e1;
    // 2 (sinh c - c) / (cosh c + 1), scaled by e^{-c} top and bottom
    let ratio = 2.0 * (0.5 * (1.0 - e2) - c * e1) / (0.5 * (1.0 + e2) + e1);
    b * ratio / (4.0 * c.powi(3))
}

/// Draw from the Polya-Gamma distribution PG(b, c).
///
/// Integer parts up to [`PG_EXACT_LIMIT`] are summed from exact PG(1, c)
/// draws; a fractional remainder uses the truncated gamma-series
/// representation; larger shapes use a normal approximation truncated at 0.
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Contract(format!("PG shape must be positive, got {b}")));
    }
    if !c.is_finite() {
        return Err(Error::Numeric(format!("PG tilt is not finite: {c}")));
    }
    if b > PG_EXACT_LIMIT {
        return Ok(pg_normal_approx(b, c, rng));
    }
    let whole = b.floor();
    let frac = b - whole;
    let mut x = 0.0;
    if whole >= 1.0 {
        let proposal = PgProposal::new(c);
        for _ in 0..whole as usize {
            x += proposal.draw(rng);
        }
    }
    if frac > 1e-12 {
        x += pg_gamma_series(frac, c, rng);
    }
    Ok(x)
}

fn pg_normal_approx<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> f64 {
    let mean = pg_mean(b, c);
    let sd = pg_variance(b, c).sqrt();
    for _ in 0..64 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + sd * z;
        if x > 0.0 {
            return x;
        }
    }
    mean
}

/// `PG(b, c) = 1/(2π²) Σ_k g_k / ((k - 1/2)² + c²/(4π²))`, truncated.
fn pg_gamma_series<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(b, 1.0).expect("shape is positive");
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let tilt = c * c / (4.0 * pi2);
    let mut sum = 0.0;
    for k in 1..=PG_SERIES_TERMS {
        let h = k as f64 - 0.5;
        sum += gamma.sample(rng) / (h * h + tilt);
    }
    sum / (2.0 * pi2)
}

/// Exact PG(1, c) by the alternating-series rejection sampler. The proposal
/// mixture depends only on `c`, so it is set up once per tilt.
struct PgProposal {
    z: f64,
    fz: f64,
    p_exp: f64,
}

impl PgProposal {
    fn new(c: f64) -> Self {
        use std::f64::consts::PI;
        let z = 0.5 * c.abs();
        let fz = 0.125 * PI * PI + 0.5 * z * z;
        Self {
            z,
            fz,
            p_exp: exponential_mass(z, fz),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.p_exp {
                let e: f64 = Exp1.sample(rng);
                PG_TRUNC + e / self.fz
            } else {
                truncated_inverse_gaussian(self.z, rng)
            };
            let mut s = series_coef(0, x);
            let y = rng.random::<f64>() * s;
            let mut n = 0;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series_coef(n, x);
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += series_coef(n, x);
                    if y > s {
                        break;
                    }
                }
            }
        }
    }
}

/// Probability of the exponential branch of the proposal mixture.
fn exponential_mass(z: f64, fz: f64) -> f64 {
    let t = PG_TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / std::f64::consts::PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to `(0, PG_TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    let mut x = t + 1.0;
    if z < 1.0 / t {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let d = 1.0 + e1 * t;
            x = t / (d * d);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mu_y = mu * y;
            x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// n-th coefficient of the alternating series for the J*(1) density.
fn series_coef(n: usize, x: f64) -> f64 {
    use std::f64::consts::PI;
    let h = n as f64 + 0.5;
    let k = h * PI;
    if x > PG_TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn log_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negligible_log_weights_become_zero() {
        let mut w = [0.0, -720.0, -1e4, -2.0];
        normalize_log(&mut w).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[2], 0.0);
        assert!((w[0] + w[3] - 1.0).abs() < 1e-15);
        let mut near = [0.0, -700.0];
        normalize_log(&mut near).unwrap();
        assert!(near[1].is_normal());
    }

    fn mc_mean(b: f64, c: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngHandle::new(seed);
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = sample_polya_gamma(b, c, &mut rng).unwrap();
            assert!(x > 0.0);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        (mean, sq / n as f64 - mean * mean)
    }

    #[test]
    fn deterministic_under_seed() {
        let mut a = RngHandle::new(9);
        let mut b = RngHandle::new(9);
        for _ in 0..100 {
            assert_eq!(
                sample_polya_gamma(3.0, 1.2, &mut a).unwrap().to_bits(),
                sample_polya_gamma(3.0, 1.2, &mut b).unwrap().to_bits()
            );
        }
        let (mut ca, mut cb) = (a.split(), b.split());
        assert_eq!(ca.next_u64(), cb.next_u64());
    }

    #[test]
    fn degenerate_categorical() {
        let mut rng = RngHandle::new(1);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn categorical_errors() {
        let mut rng = RngHandle::new(1);
        assert!(sample_categorical(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_categorical(&[1.0, f64::NAN], &mut rng).is_err());
        assert!(sample_categorical(&[1.0, f64::INFINITY], &mut rng).is_err());
        assert!(sample_categorical(&[1.0, -0.5], &mut rng).is_err());
        assert!(sample_log_categorical(&mut [f64::NEG_INFINITY; 3], &mut rng).is_err());
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = RngHandle::new(2);
        let n = 100_000;
        for weights in [vec![1.0, 1.0], vec![2.0, 1.0, 1.0]] {
            let total: f64 = weights.iter().sum();
            let mut hits = vec![0usize; weights.len()];
            for _ in 0..n {
                hits[sample_categorical(&weights, &mut rng).unwrap()] += 1;
            }
            for (h, w) in hits.iter().zip(&weights) {
                let p = w / total;
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                assert!((*h as f64 / n as f64 - p).abs() < 3.0 * sd, "{hits:?}");
            }
        }
    }

    #[test]
    fn log_categorical_normalizes() {
        let mut rng = RngHandle::new(3);
        let mut lw = [1000.0, 1000.0 + 2f64.ln(), f64::NEG_INFINITY];
        let i = sample_log_categorical(&mut lw, &mut rng).unwrap();
        assert!(i < 2);
        assert!((lw[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((lw[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(lw[2], 0.0);
    }

    #[test]
    fn closed_form_moments() {
        assert!((pg_mean(1.0, 2.0) - 0.190_398_538_988_941_2).abs() < 1e-12);
        assert_eq!(pg_mean(1.0, 0.0), 0.25);
        assert!((pg_variance(1.0, 0.0) - 1.0 / 24.0).abs() < 1e-15);
        // continuity across the series switch
        assert!((pg_variance(2.0, 1.0 + 1e-9) - pg_variance(2.0, 1.0 - 1e-9)).abs() < 1e-10);
        assert!((pg_variance(1.0, 0.5) - 0.039_659_800_808_458_56).abs() < 1e-15);
        assert!((pg_mean(2.0, 1.0001e-4) - pg_mean(2.0, 0.9999e-4)).abs() < 1e-10);
        // large tilt stays finite
        assert!(pg_variance(1.0, 2000.0).is_finite());
        assert!((pg_variance(1.0, 800.0) - 1.0 / (2.0 * 800f64.powi(3))).abs() < 1e-12);
    }

    #[test]
    fn pg_one_mean_at_two() {
        let n = 100_000;
        let (m, v) = mc_mean(1.0, 2.0, n, 5);
        let se = (pg_variance(1.0, 2.0) / n as f64).sqrt();
        assert!((m - pg_mean(1.0, 2.0)).abs() < 3.0 * se, "{m}");
        assert!((v / pg_variance(1.0, 2.0) - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn pg_one_mean_at_zero() {
        let n = 100_000;
        let (m, _) = mc_mean(1.0, 0.0, n, 6);
        let se = (pg_variance(1.0, 0.0) / n as f64).sqrt();
        assert!((m - 0.25).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn pg_symmetric_in_tilt() {
        let n = 50_000;
        let (mp, _) = mc_mean(2.0, 1.5, n, 7);
        let (mn, _) = mc_mean(2.0, -1.5, n, 8);
        let se = (2.0 * pg_variance(2.0, 1.5) / n as f64).sqrt();
        assert!((mp - mn).abs() < 3.0 * se);
    }

    #[test]
    fn pg_fractional_shape() {
        let n = 40_000;
        let (m, _) = mc_mean(2.5, 1.0, n, 10);
        let se = (pg_variance(2.5, 1.0) / n as f64).sqrt();
        // the truncated series is biased low by about 1/(2π² · 200 terms)
        assert!((m - pg_mean(2.5, 1.0)).abs() < 3.0 * se + 3e-4, "{m}");
    }

    #[test]
    fn pg_rejects_bad_shape() {
        let mut rng = RngHandle::new(1);
        assert!(sample_polya_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_polya_gamma(-1.0, 1.0, &mut rng).is_err());
        assert!(sample_polya_gamma(1.0, f64::NAN, &mut rng).is_err());
    }
}

//! Small statistics toolbox: percentile bootstrap and an exact sign test.

use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation percentile of a sorted sample, q in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap (2.5/97.5) of the mean over cluster-level values.
/// Deterministic per seed.
pub fn bootstrap_mean_ci(
    cluster_values: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    if cluster_values.is_empty() {
        return Err(Error::InvalidArgument("bootstrap over an empty sample".into()));
    }
    if resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 bootstrap resamples, got {resamples}"
        )));
    }
    let observed = mean(cluster_values);
    let n = cluster_values.len();
    let mut rng = CounterRng::new(seed);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut total = 0.0;
        for _ in 0..n {
            total += cluster_values[rng.gen_range(n)];
        }
        stats.push(total / n as f64);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap statistics"));
    Ok(BootstrapCi {
        mean: observed,
        lower: percentile_sorted(&stats, 0.025),
        upper: percentile_sorted(&stats, 0.975),
    })
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// One-sided exact sign test: P(X >= successes) for X ~ Binomial(n, 1/2).
pub fn sign_test_p_ge(successes: usize, n: usize) -> Result<f64> {
    if successes > n {
        return Err(Error::InvalidArgument(format!("{successes} successes out of {n}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sign test over zero trials".into()));
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let ln_n_fact = ln_factorial(n);
    let mut p = 0.0;
    for k in successes..=n {
        let ln_choose = ln_n_fact - ln_factorial(k) - ln_factorial(n - k);
        p += (ln_choose + ln_half_n).exp();
    }
    Ok(p.min(1.0))
}

//! Two-sample Wilcoxon rank-sum test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Combined sample sizes up to this use the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSum {
    /// Sum of the (mid)ranks of the first sample.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PMethod,
}

/// Midranks of the pooled sample, doubled so ties stay integral.
fn doubled_ranks(a: &[f64], b: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start+1..=end share their mean, doubled
        let doubled = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            ranks[k] = doubled;
        }
        start = end;
    }
    ranks
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(
            "rank-sum test needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Config("rank-sum samples must be finite".into()));
    }
    Ok(())
}

/// Exact two-sided p-value: the share of all size-|a| rank subsets whose sum
/// is at least as far from its mean as the observed one.
pub fn rank_sum_exact(a: &[f64], b: &[f64]) -> Result<RankSum> {
    check(a, b)?;
    let ranks = doubled_ranks(a, b);
    let n1 = a.len();
    let total: u64 = ranks.iter().sum();
    let observed: u64 = ranks[..n1].iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0.0f64; total as usize + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for (seen, &r) in ranks.iter().enumerate() {
        for k in (1..=n1.min(seen + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            for s in (r as usize..=total as usize).rev() {
                hi[0][s] += lo[k - 1][s - r as usize];
            }
        }
    }
    // E[W] on the doubled scale: n1·(N+1)
    let n = ranks.len() as i64;
    let centre = n1 as i64 * (n + 1);
    let dev = (observed as i64 - centre).abs();
    let (mut extreme, mut all) = (0.0, 0.0);
    for (s, &c) in counts[n1].iter().enumerate() {
        all += c;
        if (s as i64 - centre).abs() >= dev {
            extreme += c;
        }
    }
    Ok(RankSum {
        statistic: observed as f64 / 2.0,
        p_value: (extreme / all).min(1.0),
        method: PMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and a continuity
/// correction of one half.
pub fn rank_sum_normal(a: &[f64], b: &[f64]) -> Result<RankSum> {
    check(a, b)?;
    let ranks = doubled_ranks(a, b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let w: f64 = ranks[..a.len()].iter().map(|&r| r as f64 / 2.0).sum();
    let mean = n1 * (n + 1.0) / 2.0;

    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mut ties = 0.0;
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        ties += t * t * t - t;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let unit = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * (1.0 - unit.cdf(z))
    };
    Ok(RankSum {
        statistic: w,
        p_value: p.min(1.0),
        method: PMethod::Normal,
    })
}

/// Exact for combined size up to [`EXACT_MAX_N`], normal otherwise.
pub fn rank_sum(a: &[f64], b: &[f64]) -> Result<RankSum> {
    if a.len() + b.len() <= EXACT_MAX_N {
        rank_sum_exact(a, b)
    } else {
        rank_sum_normal(a, b)
    }
}

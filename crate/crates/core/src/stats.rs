//! Paired Wilcoxon signed-rank test.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples below this size use exact enumeration under [`WilcoxonMethod::Auto`].
pub const EXACT_THRESHOLD: usize = 20;
pub const MIN_PAIRS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Auto,
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub significant: bool,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Average ranks of `v` (1-based), plus tie group sizes.
fn rank(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// `P(W+ <= t)` and `P(W+ >= t)` under the null, by dynamic programming over
/// doubled ranks (which are integers even with ties).
fn exact_tails(doubled: &[usize], t: usize) -> (f64, f64) {
    let total: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        reach += r;
        for s in (0..=reach).rev() {
            let take = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * dist[s] + 0.5 * take;
        }
    }
    let lower = dist[..=t].iter().sum();
    let upper = dist[t..].iter().sum();
    (lower, upper)
}

/// Two-sided signed-rank test of `a - b`; significant iff `p < alpha`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<Wilcoxon> {
    wilcoxon_signed_rank_with(a, b, alpha, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    alpha: f64,
    method: WilcoxonMethod,
) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "wilcoxon: paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("wilcoxon: NaN in samples".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(Wilcoxon {
            statistic: 0.0,
            p_value: 1.0,
            significant: false,
            n,
            method,
        });
    }
    if n < MIN_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "wilcoxon: {n} nonzero differences, need at least {MIN_PAIRS}"
        )));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = rank(&abs);
    let w_plus = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let method = match method {
        WilcoxonMethod::Auto if n < EXACT_THRESHOLD => WilcoxonMethod::Exact,
        WilcoxonMethod::Auto => WilcoxonMethod::Normal,
        m => m,
    };
    let p = match method {
        WilcoxonMethod::Exact => {
            let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
            let t = libm::round(2.0 * w_plus) as usize;
            let (lo, hi) = exact_tails(&doubled, t);
            (2.0 * lo.min(hi)).min(1.0)
        }
        _ => {
            let nf = n as f64;
            let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
            if var <= 0.0 {
                1.0
            } else {
                let dev = ((w_plus - total / 2.0).abs() - 0.5).max(0.0);
                libm::erfc(dev / libm::sqrt(var) / core::f64::consts::SQRT_2).min(1.0)
            }
        }
    };
    Ok(Wilcoxon {
        statistic: w_plus.min(w_minus),
        p_value: p,
        significant: p < alpha,
        n,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force two-sided p over all 2^n sign assignments.
    fn enumerate_p(d: &[f64]) -> f64 {
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let (ranks, _) = rank(&abs);
        let obs: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let (mut lo, mut hi) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= obs + 1e-9 {
                lo += 1;
            }
            if w >= obs - 1e-9 {
                hi += 1;
            }
        }
        (2.0 * lo.min(hi) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let r = wilcoxon_signed_rank(&a, &a, 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn dominant_eight() {
        let a = [5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let b = [1.0, 2.5, 3.0, 4.0, 2.0, 1.5, 0.0, 3.3];
        let r = wilcoxon_signed_rank(&a, &b, 0.05).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert!((r.p_value - 2.0 / 256.0).abs() < 1e-15);
        assert!(r.significant);
        assert_eq!(r.statistic.to_bits(), 0f64.to_bits());
        assert!(!wilcoxon_signed_rank(&a, &b, 0.0).unwrap().significant);
    }

    #[test]
    fn rejects_small_or_mismatched() {
        assert!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.05).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 7], &[0.0; 6], 0.05).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        let (r, t) = rank(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, [3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, [1, 1, 2]);
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = 6 + trial % 8;
            let d: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(-4i32..=5) as f64) * 0.5)
                .map(|v| if v == 0.0 { 0.25 } else { v })
                .collect();
            let zeros = vec![0.0; n];
            let r = wilcoxon_signed_rank_with(&d, &zeros, 0.05, WilcoxonMethod::Exact).unwrap();
            assert!((r.p_value - enumerate_p(&d)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn normal_tracks_exact_at_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0) + 0.1).collect();
            let e = wilcoxon_signed_rank_with(&a, &b, 0.05, WilcoxonMethod::Exact).unwrap();
            let z = wilcoxon_signed_rank_with(&a, &b, 0.05, WilcoxonMethod::Normal).unwrap();
            assert!((e.p_value - z.p_value).abs() <= 0.01, "{} vs {}", e.p_value, z.p_value);
        }
    }
}

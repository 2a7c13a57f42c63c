//! Paired two-sided Wilcoxon signed-rank test.
//!
//! Zero differences are dropped and tied magnitudes receive midranks. The
//! statistic is `W = min(W+, W-)`. For up to [`EXACT_MAX_N`] nonzero pairs the
//! p-value is exact, from the null distribution of `W+` over all sign
//! assignments; beyond that a normal approximation with tie and continuity
//! corrections is used.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const EXACT_MAX_N: usize = 15;
pub const MIN_NONZERO: usize = 5;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Normal,
    /// Fewer than [`MIN_NONZERO`] nonzero differences; no p-value.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub method: Method,
}

impl WilcoxonResult {
    pub fn is_inconclusive(&self) -> bool {
        self.method == Method::Inconclusive
    }

    pub fn is_significant(&self) -> bool {
        self.p_value.is_some_and(significance)
    }
}

/// `p < 0.05`, strictly.
pub fn significance(p_value: f64) -> bool {
    p_value < SIGNIFICANCE_LEVEL
}

/// Midranks (1-based) of `values`, doubled so that every rank is an integer.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start+1..=end share (start + 1 + end) / 2.
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

/// Number of sign assignments with doubled `W+` at most `limit`.
fn count_at_most(doubled_ranks: &[u64], limit: u64) -> u128 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut ways = vec![0u128; total as usize + 1];
    ways[0] = 1;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (r..ways.len()).rev() {
            ways[s] += ways[s - r];
        }
    }
    ways.iter().take(limit as usize + 1).sum()
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if let Some(index) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&magnitudes);
    let plus2: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let minus2 = total2 - plus2;
    let stat2 = plus2.min(minus2);
    let (p_value, method) = if n < MIN_NONZERO {
        (None, Method::Inconclusive)
    } else if n <= EXACT_MAX_N {
        let tail = count_at_most(&ranks, stat2);
        let all = 1u128 << n;
        (Some((2 * tail).min(all) as f64 / all as f64), Method::Exact)
    } else {
        let nf = n as f64;
        let mut ties = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            ties += t * t * t - t;
        }
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let w = stat2 as f64 / 2.0;
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (Some(erfc(z / std::f64::consts::SQRT_2).min(1.0)), Method::Normal)
    };
    Ok(WilcoxonResult {
        n_nonzero: n,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        statistic: stat2 as f64 / 2.0,
        p_value,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerate every sign assignment of the observed ranks.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let d: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks: Vec<f64> = d
            .iter()
            .map(|x| {
                let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
                let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let observed_plus: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
        let observed = observed_plus.min(total - observed_plus);
        let n = d.len();
        let mut hits = 0u64;
        for signs in 0u64..(1 << n) {
            let plus: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
            if plus.min(total - plus) <= observed {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    fn test_diffs(d: &[f64]) -> WilcoxonResult {
        let zeros = vec![0.0; d.len()];
        wilcoxon_signed_rank(d, &zeros).unwrap()
    }

    #[test]
    fn six_positive_differences() {
        let r = test_diffs(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(0.03125));
        assert_eq!(r.method, Method::Exact);
        assert!(r.is_significant());
    }

    #[test]
    fn identical_lists_are_inconclusive() {
        let a = [0.3, 0.5, 0.7, 0.1, 0.9, 0.4];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.is_inconclusive());
        assert_eq!(r.p_value, None);
        assert!(!r.is_significant());
        assert!(test_diffs(&[1.0, -2.0, 3.0, 4.0]).is_inconclusive());
    }

    #[test]
    fn balanced_signs_large_n() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = test_diffs(&d);
        assert_eq!(r.method, Method::Normal);
        assert!(r.p_value.unwrap() > 0.8, "{:?}", r);
        let alternating: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(test_diffs(&alternating).p_value, Some(1.0));
    }

    #[test]
    fn normal_approximation_matches_reference() {
        // scipy.stats.wilcoxon(range(1, 21), correction=True, mode="approx"): W = 0.
        let d: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = test_diffs(&d);
        // z = (105 - 0.5) / sqrt(717.5)
        let expected = erfc(104.5 / 717.5f64.sqrt() / std::f64::consts::SQRT_2);
        assert!((r.p_value.unwrap() - expected).abs() < 1e-15);
        assert!((r.p_value.unwrap() - 9.5e-5).abs() < 5e-6);
    }

    #[test]
    fn ties_use_midranks() {
        let r = test_diffs(&[1.0, 1.0, -1.0, 2.0, 3.0]);
        // ranks 2,2,2,4,5 → W- = 2
        assert_eq!(r.w_minus, 2.0);
        assert_eq!(r.w_plus, 13.0);
        assert_eq!(r.p_value.unwrap(), brute_force_p(&[1.0, 1.0, -1.0, 2.0, 3.0]));
    }

    #[test]
    fn threshold_is_strict() {
        assert!(significance(0.049));
        assert!(!significance(0.05));
        assert!(!significance(1.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(d in proptest::collection::vec(-8i32..=8, 5..=12)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let r = test_diffs(&d);
            if !r.is_inconclusive() {
                prop_assert_eq!(r.p_value.unwrap(), brute_force_p(&d));
            }
        }

        #[test]
        fn symmetric_in_arguments(a in proptest::collection::vec(0.0f64..1.0, 1..30), shift in proptest::collection::vec(-0.5f64..0.5, 30)) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let ab = wilcoxon_signed_rank(&a, &b).unwrap();
            let ba = wilcoxon_signed_rank(&b, &a).unwrap();
            prop_assert_eq!(ab.statistic, ba.statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
        }
    }
}

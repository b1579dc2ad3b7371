use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// `W+ - W-` for differences `a - b`; flips sign when the inputs swap.
    pub signed: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub method: PMethod,
}

/// Largest sample size for which the exact null distribution is enumerated.
pub const EXACT_LIMIT: usize = 25;

/// Average 1-based ranks of `values`, ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of subsets of `{1..n}` with each possible sum, as `f64` counts.
fn subset_sum_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut c = vec![0.0; max + 1];
    c[0] = 1.0;
    for k in 1..=n {
        for s in (k..=max).rev() {
            c[s] += c[s - k];
        }
    }
    c
}

/// Two-sided paired signed-rank test on `a - b`.
///
/// Zero differences are dropped; tied magnitudes get average ranks. The p-value
/// is exact for up to [`EXACT_LIMIT`] differences without ties, otherwise a
/// normal approximation with continuity and tie corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain(format!(
            "paired samples need equal nonzero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite paired difference".into()));
    }
    if d.is_empty() {
        return Err(Error::UndefinedTest("every paired difference is zero".into()));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_value, method) = if n <= EXACT_LIMIT && ties.is_empty() {
        let counts = subset_sum_counts(n);
        let k = statistic.round() as usize;
        let tail: f64 = counts[..=k].iter().sum();
        ((2.0 * tail / 2f64.powi(n as i32)).min(1.0), PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = if var > 0.0 {
            ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt()
        } else {
            0.0
        };
        let normal = Normal::standard();
        ((2.0 * normal.sf(z)).min(1.0), PMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic,
        signed: w_plus - w_minus,
        p_value,
        n,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.signed, 15.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        assert_eq!(r.method, PMethod::Exact);
    }

    #[test]
    fn identical_is_undefined() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::UndefinedTest(_))
        ));
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
    }

    #[test]
    fn swap_negates_signed_and_keeps_p() {
        let a = [0.3, 0.9, 0.1, 0.7, 0.75, 0.2];
        let b = [0.5, 0.2, 0.0, 0.1, 0.3, 0.25];
        let x = wilcoxon_signed_rank(&a, &b).unwrap();
        let y = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(x.signed, -y.signed);
        assert_eq!(x.p_value, y.p_value);
        assert_eq!(x.statistic, y.statistic);
    }

    #[test]
    fn ties_use_average_ranks_and_normal() {
        let (r, t) = average_ranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(t, vec![2]);
        let res = wilcoxon_signed_rank(&[1.0, 1.0, -2.0, 3.0], &[0.0; 4]).unwrap();
        assert_eq!(res.method, PMethod::Normal);
        assert!(res.p_value > 0.0 && res.p_value <= 1.0);
    }

    #[test]
    fn large_sample_matches_normal_reference() {
        // 30 positive differences: z = (232.5 - 0.5) / sqrt(2363.75).
        let d: Vec<f64> = (1..=30).map(|x| x as f64).collect();
        let r = wilcoxon_signed_rank(&d, &[0.0; 30]).unwrap();
        let z: f64 = 232.0 / 2363.75f64.sqrt();
        let want = 2.0 * Normal::standard().sf(z);
        assert!((r.p_value - want).abs() < 1e-15);
        assert!(r.p_value < 1e-5);
    }
}

//! Paired two-sided Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{MetricsError, Result};

/// Largest non-zero difference count for which the exact null distribution
/// is enumerated.
pub const EXACT_MAX_N: usize = 25;

const MIN_PAIRS: usize = 5;

/// Two-sided p-value of the Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are discarded; if every difference is zero the p-value is 1.
/// Ties among absolute differences get average ranks.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::Shape(format!(
            "{} vs {} paired samples",
            a.len(),
            b.len()
        )));
    }
    if a.len() < MIN_PAIRS {
        return Err(MetricsError::Validation(format!(
            "paired test needs at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(1.0);
    }

    // doubled average ranks keep everything integral
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut doubled_rank = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let r2 = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            doubled_rank[idx] = r2;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus2: u64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| doubled_rank[i]).sum();

    let p = if n <= EXACT_MAX_N {
        exact_two_sided(&doubled_rank, w_plus2)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return Ok(1.0);
        }
        let w = w_plus2 as f64 / 2.0;
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * (1.0 - normal.cdf(z))
    };
    Ok(p.min(1.0))
}

/// Exact null distribution of the doubled positive-rank sum by subset-sum DP.
fn exact_two_sided(doubled_rank: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled_rank.iter().sum();
    let mut dist = vec![0.0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_rank {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let p = dist[s];
            if p != 0.0 {
                dist[s + r] += p * 0.5;
                dist[s] = p * 0.5;
            }
        }
        reach += r;
    }
    let obs = observed as usize;
    let lower: f64 = dist[..=obs].iter().sum();
    let upper: f64 = dist[obs..].iter().sum();
    2.0 * lower.min(upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates all 2^n sign assignments of the ranks 1..=n.
    fn sign_enumeration_p(ranks: &[f64], observed: f64) -> f64 {
        let n = ranks.len();
        let mut lower = 0u64;
        let mut upper = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                lower += 1;
            }
            if w >= observed - 1e-9 {
                upper += 1;
            }
        }
        let total = (1u64 << n) as f64;
        (2.0 * (lower.min(upper) as f64) / total).min(1.0)
    }

    #[test]
    fn identical_samples_give_one() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(paired_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn all_positive_differences_n10() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, v)| v + 0.1 + i as f64 * 0.01).collect();
        let p = paired_test(&a, &b).unwrap();
        let ranks: Vec<f64> = (1..=10).map(f64::from).collect();
        let oracle = sign_enumeration_p(&ranks, 55.0);
        assert!((oracle - 2.0 / 1024.0).abs() < 1e-15);
        assert!((p - oracle).abs() < 1e-15);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = [0.81, 0.77, 0.9, 0.65, 0.7, 0.88, 0.79];
        let b = [0.8, 0.79, 0.85, 0.66, 0.62, 0.8, 0.79];
        assert_eq!(paired_test(&a, &b).unwrap(), paired_test(&b, &a).unwrap());
    }

    #[test]
    fn exact_matches_enumeration_on_mixed_signs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let d = [0.5, -1.2, 2.0, 0.1, -0.3, 1.7, 0.9, -2.5, 1.1, 0.4, 3.0, -0.05];
        let b: Vec<f64> = a.iter().zip(&d).map(|(x, dd)| x - dd).collect();
        let p = paired_test(&a, &b).unwrap();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut by_abs: Vec<usize> = (0..12).collect();
        by_abs.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
        let mut ranks = vec![0.0; 12];
        for (r, &i) in by_abs.iter().enumerate() {
            ranks[i] = (r + 1) as f64;
        }
        let w: f64 = (0..12).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
        assert!((p - sign_enumeration_p(&ranks, w)).abs() < 1e-12);
    }

    #[test]
    fn ties_use_average_ranks() {
        let a = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let b = [0.0, 0.0, 2.0, 0.5, 0.5, 0.0];
        // |d| = 1,1,1,0.5,0.5,1 -> ranks 4.5,4.5,4.5,1.5,1.5,4.5
        let ranks = [4.5, 4.5, 4.5, 1.5, 1.5, 4.5];
        let w = 4.5 + 4.5 + 1.5 + 1.5 + 4.5;
        let p = paired_test(&a, &b).unwrap();
        assert!((p - sign_enumeration_p(&ranks, w)).abs() < 1e-12);
    }

    #[test]
    fn normal_approximation_for_large_n() {
        let n = 200;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let a: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.01 + 0.001 * (i % 7) as f64)
            .collect();
        let p = paired_test(&a, &b).unwrap();
        assert!(p < 1e-10);
        let c: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        assert!(paired_test(&c, &b).unwrap() > 0.5);
    }

    #[test]
    fn too_few_pairs() {
        assert!(paired_test(&[1.0; 4], &[0.0; 4]).is_err());
        assert!(paired_test(&[1.0; 5], &[0.0; 6]).is_err());
    }
}

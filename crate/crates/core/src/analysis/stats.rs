//! Rank correlation and permutation tests used by the measurement passes.

use crate::rng::StreamRng;

/// Ranks with average ties (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// One-sided permutation test for a negative Spearman correlation:
/// permutes x against y and reports P(ρ_perm ≤ ρ_observed).
pub fn spearman_negative_p(xs: &[f64], ys: &[f64], n_perm: usize, seed: u64) -> (f64, f64) {
    let observed = spearman(xs, ys);
    let mut rng = StreamRng::from_seed(seed);
    let mut shuffled = xs.to_vec();
    let mut at_most = 0usize;
    for _ in 0..n_perm {
        rng.shuffle(&mut shuffled);
        if spearman(&shuffled, ys) <= observed {
            at_most += 1;
        }
    }
    let p = (at_most + 1) as f64 / (n_perm + 1) as f64;
    (observed, p)
}

/// Paired one-sided permutation (sign-flip) test: given per-pair
/// differences, reports P(mean_perm ≥ mean_observed) under random sign
/// flips — small when the observed mean increase is real.
pub fn paired_increase_p(diffs: &[f64], n_perm: usize, seed: u64) -> (f64, f64) {
    let n = diffs.len() as f64;
    let observed = diffs.iter().sum::<f64>() / n;
    let mut rng = StreamRng::from_seed(seed);
    let mut at_least = 0usize;
    for _ in 0..n_perm {
        let mut s = 0.0;
        for &d in diffs {
            s += if rng.coin(0.5) { d } else { -d };
        }
        if s / n >= observed {
            at_least += 1;
        }
    }
    let p = (at_least + 1) as f64 / (n_perm + 1) as f64;
    (observed, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_detects_monotone_relations() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let inc = [2.0, 4.0, 5.0, 9.0, 11.0];
        let dec = [11.0, 9.0, 5.0, 4.0, 2.0];
        assert!((spearman(&xs, &inc) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &dec) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let rho = spearman(&xs, &ys);
        assert!(rho > 0.9, "{rho}");
    }

    #[test]
    fn negative_trend_has_small_p() {
        let xs: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, &x)| -x + 0.01 * (i as f64 % 3.0)).collect();
        let (rho, p) = spearman_negative_p(&xs, &ys, 1000, 9);
        assert!(rho < -0.9, "{rho}");
        assert!(p < 0.01, "{p}");
    }

    #[test]
    fn null_trend_has_large_p() {
        let mut rng = StreamRng::from_seed(3);
        let xs: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let ys: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let (_, p) = spearman_negative_p(&xs, &ys, 500, 9);
        assert!(p > 0.05, "{p}");
    }

    #[test]
    fn paired_test_catches_real_increases() {
        let diffs: Vec<f64> = (0..60).map(|i| 0.1 + 0.01 * ((i % 7) as f64 - 3.0)).collect();
        let (mean, p) = paired_increase_p(&diffs, 2000, 4);
        assert!(mean > 0.0);
        assert!(p < 0.01, "{p}");

        let null: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let (_, p_null) = paired_increase_p(&null, 2000, 4);
        assert!(p_null > 0.1, "{p_null}");
    }
}

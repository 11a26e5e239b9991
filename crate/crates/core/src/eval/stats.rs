use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::metrics::pearson;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Largest sample size for which the Wilcoxon null is computed exactly.
const WILCOXON_EXACT_MAX: usize = 25;
/// Largest sample size for which the Spearman null is enumerated.
const SPEARMAN_EXACT_MAX: usize = 9;

/// Midranks (1-based) of `values`; tied values share their mean rank.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn two_sided_normal(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.cdf(-z.abs())).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are discarded. The statistic is the rank sum of positive
/// differences. Up to 25 non-zero differences the null distribution is exact
/// (midranks included); above that a normal approximation with tie
/// correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            axis: "pairs",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 5 {
        return Err(Error::arg(format!("Wilcoxon test needs at least 5 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::contract("all paired differences are zero; Wilcoxon test undefined"));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    let p = if n <= WILCOXON_EXACT_MAX {
        // Doubled midranks are integers; count sign patterns per rank sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let total = 2f64.powi(n as i32);
        let w = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
        let upper: f64 = counts[w..].iter().sum::<f64>() / total;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            var -= (t * t * t - t) / 48.0;
            i = j + 1;
        }
        if var <= 0.0 {
            1.0
        } else {
            two_sided_normal((w_plus - mean) / var.sqrt())
        }
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value: p,
    })
}

/// Visits every permutation of `v` (Heap's algorithm).
fn for_each_permutation(v: &mut [f64], f: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    f(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            f(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Spearman rank correlation with a two-sided p-value: exact permutation null
/// up to 9 pairs, Student-t approximation above.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            axis: "pairs",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::arg(format!("Spearman correlation needs at least 3 pairs, got {n}")));
    }
    let rx = ndarray::Array1::from(midranks(x));
    let ry = midranks(y);
    let rho = pearson(rx.view(), ArrayView1::from(&ry))
        .ok_or_else(|| Error::contract("Spearman correlation undefined for a constant sample"))?;
    let p = if n <= SPEARMAN_EXACT_MAX {
        let (mut extreme, mut total) = (0u64, 0u64);
        let mut perm = ry.clone();
        for_each_permutation(&mut perm, &mut |p| {
            total += 1;
            let r = pearson(rx.view(), ArrayView1::from(p)).unwrap_or(0.0);
            if r.abs() >= rho.abs() - 1e-12 {
                extreme += 1;
            }
        });
        extreme as f64 / total as f64
    } else if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(TestResult {
        statistic: rho,
        p_value: p,
    })
}

/// Two-sided Welch t-test for a difference in means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::arg("Welch t-test needs at least 2 samples per group"));
    }
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, var)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(Error::contract("Welch t-test undefined: both groups are constant"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok(TestResult {
        statistic: t,
        p_value: (2.0 * dist.cdf(-t.abs())).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive two-sided p over all 2^n sign patterns of the ranks.
    fn enumerate_wilcoxon(d: &[f64]) -> f64 {
        let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
        let n = d.len();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let ranks = midranks(&abs);
        let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let total = (1u64 << n) as f64;
        (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
    }

    #[test]
    fn constant_shift_gives_doubled_extreme_tail() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 55.0);
        assert!((r.p_value - 2.0 * 2f64.powi(-10)).abs() < 1e-15);
    }

    #[test]
    fn exact_null_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 5..=12 {
            for _ in 0..5 {
                // Rounded values create ties and zeros.
                let a: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).round()).collect();
                let b: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).round()).collect();
                let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
                assert!((got - enumerate_wilcoxon(&d)).abs() < 1e-10, "n = {n}");
            }
        }
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 + if i % 3 == 0 { -0.5 } else { 0.8 }).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
    }

    #[test]
    fn all_zero_differences_rejected() {
        let a = [1.0; 6];
        assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::Contract(_))));
    }

    #[test]
    fn spearman_monotone_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [0.1, 0.5, 0.7, 3.0, 9.0];
        let r = spearman(&x, &y).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        // Exact two-sided null: 2 of 120 permutations are as extreme.
        assert!((r.p_value - 2.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_large_sample_t_approximation() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7).sin() + v * 0.1).collect();
        let r = spearman(&x, &y).unwrap();
        assert!(r.statistic > 0.5 && r.p_value < 0.01);
    }

    #[test]
    fn welch_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let r = welch_t_test(&a, &b).unwrap();
        // means 2.5, 6; variances 5/3, 10
        let se = (5.0 / 3.0 / 4.0 + 10.0 / 5.0f64).sqrt();
        assert!((r.statistic - (2.5 - 6.0) / se).abs() < 1e-12);
        assert!(r.p_value > 0.01 && r.p_value < 0.1);
        let same = welch_t_test(&a, &a).unwrap();
        assert!((same.p_value - 1.0).abs() < 1e-12);
    }
}

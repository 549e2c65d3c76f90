//! Small statistical helpers shared by the experiment harnesses: Hoeffding
//! confidence intervals at 99%, exact binomial tails, binary entropy, and
//! total-variation distance between empirical distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

/// Confidence level used throughout: 99%.
pub const CONFIDENCE: f64 = 0.99;

/// Hoeffding half-width for a [0,1]-valued mean estimate at 99% confidence:
/// `sqrt(ln(2/0.01) / (2 * trials))`.
pub fn hoeffding_halfwidth(trials: u64) -> f64 {
    assert!(trials > 0, "need at least one trial");
    ((2.0 / (1.0 - CONFIDENCE)).ln() / (2.0 * trials as f64)).sqrt()
}

/// A Monte-Carlo estimate of a probability with its 99% Hoeffding interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_halfwidth: f64,
}

impl Estimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        Estimate {
            successes,
            trials,
            rate: successes as f64 / trials as f64,
            ci_halfwidth: hoeffding_halfwidth(trials),
        }
    }

    /// Whether the estimate is consistent with a true value `p` (i.e. `p`
    /// lies inside the interval).
    pub fn consistent_with(&self, p: f64) -> bool {
        (self.rate - p).abs() <= self.ci_halfwidth
    }

    pub fn lower(&self) -> f64 {
        self.rate - self.ci_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.rate + self.ci_halfwidth
    }
}

/// `P[Bin(n, p) <= k]`, exactly (via statrs).
pub fn binomial_cdf(n: u64, p: f64, k: u64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    Binomial::new(p, n).expect("valid binomial").cdf(k)
}

/// `P[Bin(n, p) >= k]`, exactly.
pub fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    1.0 - binomial_cdf(n, p, k - 1)
}

/// Binary entropy `h2(x) = -x log2 x - (1-x) log2 (1-x)`, with `h2(0)=h2(1)=0`.
pub fn binary_entropy(x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "h2 argument out of range: {x}");
    if x == 0.0 || x == 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Total-variation distance between two empirical distributions given as
/// aligned count slices: `0.5 * sum |p_i - q_i|`.
pub fn tv_distance(counts_a: &[u64], counts_b: &[u64]) -> f64 {
    assert_eq!(counts_a.len(), counts_b.len());
    let na: u64 = counts_a.iter().sum();
    let nb: u64 = counts_b.iter().sum();
    assert!(na > 0 && nb > 0, "empty sample");
    0.5 * counts_a
        .iter()
        .zip(counts_b)
        .map(|(&a, &b)| (a as f64 / na as f64 - b as f64 / nb as f64).abs())
        .sum::<f64>()
}

/// Upper-tail p-value of a chi-square statistic with `df` degrees of freedom.
pub fn chi_square_pvalue(statistic: f64, df: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df).expect("valid df").cdf(statistic)
}

/// ln C(n, k) via lgamma, for ball-size estimates that overflow u128.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n);
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
        - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
        - statrs::function::gamma::ln_gamma((n - k) as f64 + 1.0)
}

/// C(n, k) saturating at `u128::MAX`.
pub fn choose_saturating(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) may overflow; detect via checked ops
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return u128::MAX,
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hoeffding_matches_formula() {
        // sqrt(ln(200) / 2e5) at 1e5 trials
        let hw = hoeffding_halfwidth(100_000);
        assert_relative_eq!(hw, (200.0f64.ln() / 200_000.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn binary_entropy_known_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_relative_eq!(binary_entropy(0.5), 1.0, epsilon = 1e-12);
        // h2(0.1) = 0.46899559...
        assert_relative_eq!(binary_entropy(0.1), 0.468995593589281, epsilon = 1e-12);
    }

    #[test]
    fn binomial_tail_sanity() {
        // P[Bin(100, 0.95) >= 100] = 0.95^100
        let p = binomial_upper_tail(100, 0.95, 100);
        assert_relative_eq!(p, 0.95f64.powi(100), epsilon = 1e-12);
        assert_relative_eq!(binomial_cdf(10, 0.5, 10), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn choose_values() {
        assert_eq!(choose_saturating(60, 6), 50_063_860);
        assert_eq!(choose_saturating(5, 0), 1);
        assert_eq!(choose_saturating(5, 6), 0);
        let ln = ln_choose(60, 6);
        assert_relative_eq!(ln, (50_063_860f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn tv_distance_extremes() {
        assert_eq!(tv_distance(&[10, 0], &[10, 0]), 0.0);
        assert_eq!(tv_distance(&[10, 0], &[0, 10]), 1.0);
    }
}

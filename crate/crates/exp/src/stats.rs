//! Binomial confidence intervals and tests for error-rate comparisons.

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// One-sided 95% standard-normal quantile.
pub const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The bounds are exactly 0 and 1 at the extremes; avoid cancellation.
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Half-width of the 95% Wilson interval.
pub fn wilson_half_width(k: usize, n: usize) -> f64 {
    let (lo, hi) = wilson_interval(k, n, Z95);
    (hi - lo) / 2.0
}

/// Pooled two-proportion z statistic for `p_b - p_a`.
pub fn two_proportion_z(k_a: usize, n_a: usize, k_b: usize, n_b: usize) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let pa = k_a as f64 / na;
    let pb = k_b as f64 / nb;
    let p = (k_a + k_b) as f64 / (na + nb);
    let se = (p * (1.0 - p) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return if pb > pa { f64::INFINITY } else { 0.0 };
    }
    (pb - pa) / se
}

/// One-sided test at 95% that rate `a` is below rate `b`.
pub fn significantly_less(k_a: usize, n_a: usize, k_b: usize, n_b: usize) -> bool {
    two_proportion_z(k_a, n_a, k_b, n_b) > Z95_ONE_SIDED
}

/// Each estimate lies inside the other's 95% Wilson interval.
pub fn mutually_within_ci(k_a: usize, n_a: usize, k_b: usize, n_b: usize) -> bool {
    let (la, ha) = wilson_interval(k_a, n_a, Z95);
    let (lb, hb) = wilson_interval(k_b, n_b, Z95);
    let pa = k_a as f64 / n_a as f64;
    let pb = k_b as f64 / n_b as f64;
    (lb..=hb).contains(&pa) && (la..=ha).contains(&pb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_reference_values() {
        // statsmodels proportion_confint(10, 100, method="wilson")
        let (lo, hi) = wilson_interval(10, 100, Z95);
        assert!((lo - 0.055_229_137_060_675_09).abs() < 1e-12, "{lo}");
        assert!((hi - 0.174_365_661_504_913_48).abs() < 1e-12, "{hi}");
        let (lo, hi) = wilson_interval(0, 50, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.071_347_599_133_358_74).abs() < 1e-12, "{hi}");
    }

    #[test]
    fn comparisons() {
        assert!(significantly_less(100, 100_000, 200, 100_000));
        assert!(!significantly_less(100, 100_000, 110, 100_000));
        assert!(!significantly_less(200, 100_000, 100, 100_000));
        assert!(mutually_within_ci(500, 10_000, 510, 10_000));
        assert!(!mutually_within_ci(500, 10_000, 700, 10_000));
        assert!((two_proportion_z(50, 1000, 80, 1000) - 2.721_095).abs() < 1e-5);
    }
}

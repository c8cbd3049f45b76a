//! Robust statistics: path-length normalization, median / MAD thresholds and
//! the two-sample Kolmogorov-Smirnov test.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Euler-Mascheroni constant, truncated to 10 significant digits.
pub const EULER_GAMMA: f64 = 0.5772156649;

/// Default MAD multiplier for drift thresholds.
pub const DEFAULT_MAD_K: f64 = 3.5;

/// Normal-consistency constant for users who want the MAD to estimate σ.
pub const NORMAL_CONSISTENCY: f64 = 1.4826;

/// Added to the threshold when all training scores coincide.
pub const EPSILON_FLOOR: f64 = 1e-9;

const KS_TERM_CUTOFF: f64 = 1e-12;
const KS_MAX_TERMS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("harmonic number is undefined for i = 0")]
    HarmonicDomain,
    #[error("{0} of an empty sample")]
    Empty(&'static str),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("invalid MAD multiplier {0}: must be finite and non-negative")]
    InvalidMultiplier(f64),
}

/// Harmonic number approximation `ln(i) + γ`.
pub fn harmonic<F: Scalar>(i: u64) -> Result<F, StatsError> {
    if i == 0 {
        return Err(StatsError::HarmonicDomain);
    }
    Ok(F::of((i as f64).ln() + EULER_GAMMA))
}

/// Average path length of an unsuccessful search in a binary search tree
/// built over `n` items. `c(2)` is pinned to 1 (exact `H(1)`), since the
/// logarithmic approximation is poor there.
pub fn c_factor<F: Scalar>(n: u64) -> F {
    match n {
        0 | 1 => F::zero(),
        2 => F::one(),
        _ => {
            let m = (n - 1) as f64;
            let h = m.ln() + EULER_GAMMA;
            F::of(2.0 * h - 2.0 * m / n as f64)
        }
    }
}

fn check_finite<F: Scalar>(xs: &[F]) -> Result<(), StatsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn sorted<F: Scalar>(xs: &[F]) -> Vec<F> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

fn median_of_sorted<F: Scalar>(v: &[F]) -> F {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / F::of(2.0)
    }
}

/// Middle order statistic; mean of the two middle values for even lengths.
pub fn median<F: Scalar>(xs: &[F]) -> Result<F, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty("median"));
    }
    check_finite(xs)?;
    Ok(median_of_sorted(&sorted(xs)))
}

/// Median / MAD summary of a score distribution with its one-sided upper
/// drift threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MadSummary<F> {
    pub median: F,
    /// Unscaled median of absolute deviations.
    pub mad: F,
    pub k: F,
    /// Multiplier applied to `mad` before `k`; 1 unless the caller opts into
    /// the normal-consistency convention.
    pub consistency: F,
    pub threshold: F,
    /// Set when `mad == 0`; the threshold then sits [`EPSILON_FLOOR`] above
    /// the median.
    pub degenerate: bool,
}

impl<F: Scalar> MadSummary<F> {
    /// Summary with an unscaled MAD.
    pub fn from_sample(xs: &[F], k: F) -> Result<Self, StatsError> {
        Self::with_consistency(xs, k, F::one())
    }

    pub fn with_consistency(xs: &[F], k: F, consistency: F) -> Result<Self, StatsError> {
        if xs.is_empty() {
            return Err(StatsError::Empty("MAD"));
        }
        if !k.is_finite() || k < F::zero() {
            return Err(StatsError::InvalidMultiplier(k.as_f64()));
        }
        if !consistency.is_finite() || consistency <= F::zero() {
            return Err(StatsError::InvalidMultiplier(consistency.as_f64()));
        }
        check_finite(xs)?;
        let med = median_of_sorted(&sorted(xs));
        let deviations: Vec<F> = xs.iter().map(|&x| (x - med).abs()).collect();
        let mad = median_of_sorted(&sorted(&deviations));
        let degenerate = mad == F::zero();
        let threshold = if degenerate {
            med + F::of(EPSILON_FLOOR)
        } else {
            med + k * consistency * mad
        };
        Ok(Self {
            median: med,
            mad,
            k,
            consistency,
            threshold,
            degenerate,
        })
    }

    /// Whether `score` lies at or beyond the threshold.
    #[inline]
    pub fn exceeds(&self, score: F) -> bool {
        score >= self.threshold
    }
}

/// `MadSummary::from_sample` as a free function.
pub fn mad_summary<F: Scalar>(xs: &[F], k: F) -> Result<MadSummary<F>, StatsError> {
    MadSummary::from_sample(xs, k)
}

/// Two-sample KS statistic `sup_t |F_a(t) - F_b(t)|`, evaluated exactly over
/// the merged sample. Tied values advance both ECDFs before comparing.
pub fn ks_statistic<F: Scalar>(a: &[F], b: &[F]) -> Result<F, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("KS statistic"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < na && a[i] == t {
            i += 1;
        }
        while j < nb && b[j] == t {
            j += 1;
        }
        let diff = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    // once one sample is exhausted the gap only shrinks toward zero
    Ok(F::of(d))
}

/// Asymptotic Kolmogorov tail probability for a two-sample statistic `d`.
pub fn ks_pvalue<F: Scalar>(d: F, n1: usize, n2: usize) -> F {
    let d = d.as_f64().clamp(0.0, 1.0);
    if d == 0.0 || n1 == 0 || n2 == 0 {
        return F::one();
    }
    let (n1, n2) = (n1 as f64, n2 as f64);
    let lambda = d * (n1 * n2 / (n1 + n2)).sqrt();
    F::of(kolmogorov_tail(lambda))
}

/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`, clamped to [0, 1].
///
/// Below λ = 0.2 the alternating series cannot converge within the term
/// budget and `Q` is 1 to within 1e-20, so it is returned directly.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=KS_MAX_TERMS {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * l2).exp();
        sum += sign * term;
        if term < KS_TERM_CUTOFF {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Result of a two-sample KS comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult<F> {
    pub d_statistic: F,
    pub p_value: F,
    pub n1: usize,
    pub n2: usize,
}

/// Statistic and asymptotic p-value in one call.
pub fn ks_test<F: Scalar>(a: &[F], b: &[F]) -> Result<KsResult<F>, StatsError> {
    let d = ks_statistic(a, b)?;
    Ok(KsResult {
        d_statistic: d,
        p_value: ks_pvalue(d, a.len(), b.len()),
        n1: a.len(),
        n2: b.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: evaluate both ECDFs at every sample point.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&x| x <= t).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn harmonic_values() {
        assert!(matches!(harmonic::<f64>(0), Err(StatsError::HarmonicDomain)));
        assert_eq!(harmonic::<f64>(1).unwrap(), EULER_GAMMA);
        assert!((harmonic::<f64>(255).unwrap() - 6.1184792100584255).abs() < 1e-12);
        assert!((harmonic::<f64>(10).unwrap() - 2.8798007578940457).abs() < 1e-12);
    }

    #[test]
    fn c_factor_values() {
        assert_eq!(c_factor::<f64>(0), 0.0);
        assert_eq!(c_factor::<f64>(1), 0.0);
        assert_eq!(c_factor::<f64>(2), 1.0);
        assert!((c_factor::<f64>(256) - 10.244770920116851).abs() < 1e-9);
        assert!((c_factor::<f64>(3) - 1.207392357586557).abs() < 1e-12);
        assert!((c_factor::<f32>(256) - 10.244771).abs() < 1e-5);
    }

    #[test]
    fn c_factor_non_decreasing() {
        let mut prev = c_factor::<f64>(2);
        for n in 3..5000 {
            let c = c_factor::<f64>(n);
            assert!(c >= prev, "c({n}) = {c} < {prev}");
            prev = c;
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[7.0]).unwrap(), 7.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median(&[0.44, 0.40, 0.42, 0.41, 0.43]).unwrap(), 0.42);
        assert!(matches!(median::<f64>(&[]), Err(StatsError::Empty(_))));
        assert!(matches!(median(&[1.0, f64::NAN]), Err(StatsError::NonFinite(1))));
    }

    #[test]
    fn mad_examples() {
        let s = mad_summary::<f64>(&[0.40, 0.41, 0.42, 0.43, 0.44], 3.5).unwrap();
        assert_eq!(s.median, 0.42);
        assert!((s.mad - 0.01).abs() < 1e-12);
        assert!((s.threshold - 0.455).abs() < 1e-12);
        assert!(!s.degenerate);

        let s = mad_summary(&[5.0, 5.0, 5.0], 3.5).unwrap();
        assert_eq!(s.mad, 0.0);
        assert!(s.degenerate);
        assert_eq!(s.threshold, 5.0 + EPSILON_FLOOR);
        assert!(!s.exceeds(5.0));

        let xs = [1.0, 2.0, 3.0, 4.0, 100.0];
        let s = mad_summary(&xs, 3.5).unwrap();
        assert_eq!((s.median, s.mad, s.threshold), (3.0, 1.0, 6.5));
        let over: Vec<f64> = xs.iter().copied().filter(|&x| s.exceeds(x)).collect();
        assert_eq!(over, vec![100.0]);
    }

    #[test]
    fn mad_rejects_bad_input() {
        assert!(matches!(mad_summary::<f64>(&[], 3.5), Err(StatsError::Empty(_))));
        assert!(matches!(
            mad_summary(&[1.0, 2.0], -1.0),
            Err(StatsError::InvalidMultiplier(_))
        ));
    }

    #[test]
    fn mad_consistency_scales_threshold_only() {
        let xs = [1.0, 2.0, 3.0, 4.0, 100.0];
        let s = MadSummary::with_consistency(&xs, 3.5, NORMAL_CONSISTENCY).unwrap();
        assert_eq!(s.mad, 1.0);
        assert!((s.threshold - (3.0 + 3.5 * 1.4826)).abs() < 1e-12);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert!(ks_statistic::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_ties_match_brute_force() {
        let a = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0];
        let b = [1.0, 2.0, 2.0, 4.0];
        assert_eq!(ks_statistic(&a, &b).unwrap(), ks_brute(&a, &b));
    }

    #[test]
    fn ks_pvalue_examples() {
        assert_eq!(ks_pvalue(0.0f64, 10, 10), 1.0);
        let p = ks_pvalue(0.2f64, 100, 100);
        assert!((p - 0.03663105270711935).abs() < 1e-12, "{p}");
        let p = ks_pvalue(1.0f64, 3, 3);
        assert!((p - 0.09956184831478034).abs() < 1e-12, "{p}");
    }

    proptest! {
        #[test]
        fn ks_matches_brute_and_is_symmetric(
            a in prop::collection::vec(-5i32..5, 1..30),
            b in prop::collection::vec(-5i32..5, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((d - ks_brute(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn ks_pvalue_monotone(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, n1 in 1usize..500, n2 in 1usize..500) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (p_lo, p_hi) = (ks_pvalue(lo, n1, n2), ks_pvalue(hi, n1, n2));
            prop_assert!((0.0..=1.0).contains(&p_lo));
            prop_assert!(p_hi <= p_lo + 1e-10);
        }

        #[test]
        fn mad_shift_and_scale(
            xs in prop::collection::vec(-100i32..100, 1..40),
            shift in -50i32..50,
            scale in -4i32..4,
        ) {
            // integer-valued data keeps the affine identities exact
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let base = mad_summary(&xs, 3.5).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + f64::from(shift)).collect();
            prop_assert_eq!(mad_summary(&shifted, 3.5).unwrap().mad, base.mad);
            let scaled: Vec<f64> = xs.iter().map(|x| x * f64::from(scale)).collect();
            prop_assert_eq!(mad_summary(&scaled, 3.5).unwrap().mad, f64::from(scale).abs() * base.mad);
        }

        #[test]
        fn median_within_range_and_threshold_monotone_in_k(
            xs in prop::collection::vec(-1e3f64..1e3, 1..50),
            k1 in 0.0f64..10.0,
            k2 in 0.0f64..10.0,
        ) {
            let m = median(&xs).unwrap();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= m && m <= hi);
            let (a, b) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let sa = mad_summary(&xs, a).unwrap();
            let sb = mad_summary(&xs, b).unwrap();
            prop_assert!(sa.threshold <= sb.threshold);
            prop_assert!(sa.mad >= 0.0 && sa.threshold >= sa.median);
        }
    }
}

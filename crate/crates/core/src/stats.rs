//! Gaussian CDF utilities and the Kolmogorov–Smirnov statistic, used by the
//! QQ/normality diagnostics on module error vectors.

use num_traits::Float;

use crate::scalar::Real;

/// Error function, accurate to about `1.2e-7` (rational `erfc`
/// approximation). Plenty for normality diagnostics; not used by any of the
/// high-precision denoiser math.
pub fn erf<T: Real>(x: T) -> T {
    T::one() - erfc(x)
}

/// Complementary error function, same accuracy as [`erf`].
pub fn erfc<T: Real>(x: T) -> T {
    let z = Float::abs(x);
    let t = T::one() / (T::one() + z * T::lit(0.5));
    // Chebyshev-fitted exponent polynomial.
    let poly = T::lit(-1.265_512_23)
        + t * (T::lit(1.000_023_68)
            + t * (T::lit(0.374_091_96)
                + t * (T::lit(0.096_784_18)
                    + t * (T::lit(-0.186_288_06)
                        + t * (T::lit(0.278_868_07)
                            + t * (T::lit(-1.135_203_98)
                                + t * (T::lit(1.488_515_87)
                                    + t * (T::lit(-0.822_152_23) + t * T::lit(0.170_872_77)))))))));
    let tau = t * Float::exp(-z * z + poly);
    if x >= T::zero() {
        tau
    } else {
        T::lit(2.0) - tau
    }
}

/// Standard normal CDF `Φ(x)`.
pub fn normal_cdf<T: Real>(x: T) -> T {
    erfc(-x / T::lit(std::f64::consts::SQRT_2)) * T::lit(0.5)
}

/// Standard normal quantile `Φ⁻¹(p)` (Acklam's rational approximation,
/// relative accuracy about `1.15e-9`). Panics are avoided: out-of-range `p`
/// returns `±∞` like a limiting quantile.
pub fn normal_quantile<T: Real>(p: T) -> T {
    if p <= T::zero() {
        return T::neg_infinity();
    }
    if p >= T::one() {
        return T::infinity();
    }
    let p_low = T::lit(0.02425);

    let tail = |q: T| -> T {
        // q = sqrt(-2 ln p_tail), valid for the lower tail; mirrored below.
        (((((T::lit(-7.784894002430293e-3) * q + T::lit(-3.223964580411365e-1)) * q
            + T::lit(-2.400758277161838))
            * q
            + T::lit(-2.549732539343734))
            * q
            + T::lit(4.374664141464968))
            * q
            + T::lit(2.938163982698783))
            / ((((T::lit(7.784695709041462e-3) * q + T::lit(3.224671290700398e-1)) * q
                + T::lit(2.445134137142996))
                * q
                + T::lit(3.754408661907416))
                * q
                + T::one())
    };

    if p < p_low {
        let q = Float::sqrt(T::lit(-2.0) * Float::ln(p));
        tail(q)
    } else if p <= T::one() - p_low {
        let q = p - T::lit(0.5);
        let r = q * q;
        (((((T::lit(-3.969683028665376e1) * r + T::lit(2.209460984245205e2)) * r
            + T::lit(-2.759285104469687e2))
            * r
            + T::lit(1.383577518672690e2))
            * r
            + T::lit(-3.066479806614716e1))
            * r
            + T::lit(2.506628277459239))
            * q
            / (((((T::lit(-5.447609879822406e1) * r + T::lit(1.615858368580409e2)) * r
                + T::lit(-1.556989798598866e2))
                * r
                + T::lit(6.680131188771972e1))
                * r
                + T::lit(-1.328068155288572e1))
                * r
                + T::one())
    } else {
        let q = Float::sqrt(T::lit(-2.0) * Float::ln(T::one() - p));
        -tail(q)
    }
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and the standard
/// normal: `sup_x |F_n(x) − Φ(x)|`.
///
/// The input does not need to be sorted or standardized; standardize first
/// if the test target is "Gaussian after matching mean/variance".
pub fn ks_statistic_normal<T: Real>(samples: &[T]) -> T {
    assert!(!samples.is_empty(), "KS statistic of an empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample in KS input"));
    let n = T::from_usize(sorted.len()).unwrap();
    let mut d = T::zero();
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        let hi = T::from_usize(i + 1).unwrap() / n;
        let lo = T::from_usize(i).unwrap() / n;
        d = Float::max(d, Float::max(Float::abs(hi - cdf), Float::abs(cdf - lo)));
    }
    d
}

/// Standardize a sample in place: subtract the mean, divide by the
/// (population) standard deviation. Returns the `(mean, std)` used.
pub fn standardize<T: Real>(samples: &mut [T]) -> (T, T) {
    assert!(samples.len() > 1, "cannot standardize fewer than two samples");
    let n = T::from_usize(samples.len()).unwrap();
    let mean = samples.iter().copied().sum::<T>() / n;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = Float::sqrt(var);
    assert!(std > T::zero(), "zero-variance sample cannot be standardized");
    for x in samples.iter_mut() {
        *x = (*x - mean) / std;
    }
    (mean, std)
}

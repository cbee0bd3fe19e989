//! Scalar abstraction: the numeric glue between `num-traits`, `nalgebra`,
//! and `rustdct` so the algorithms can run in either `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimal floating-point contract used by the scalar math in this crate
/// (quadrature, priors, transfer functions, seeded sampling).
///
/// `lit` converts an `f64` constant into `Self`; use it for algorithm
/// constants rather than sprinkling `from_f64(..).unwrap()` casts around.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Draw one standard-normal sample in this precision.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Convert an `f64` literal; panics only if the value is not
    /// representable at all (never for ordinary algorithm constants).
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("constant not representable in this precision")
    }

    /// Widen to `f64` (used for formatting and CSV output).
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite float always widens to f64")
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(StandardNormal)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(StandardNormal)
    }
}

/// Full scalar contract for the matrix-valued pipeline: everything in
/// [`Real`] plus what `nalgebra` factorizations and `rustdct` transforms
/// require.
///
/// Note: `nalgebra::RealField` also exposes methods named like the `Float`
/// ones (`abs`, `max`, ...). Inside generic code call them through the trait
/// (`Float::abs(x)`) when the compiler reports an ambiguity.
pub trait Scalar: Real + nalgebra::RealField + rustdct::DctNum {}

impl<T> Scalar for T where T: Real + nalgebra::RealField + rustdct::DctNum {}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(0.25f64.to_f64_lossy(), 0.25);
    }

    #[test]
    fn standard_normal_is_deterministic_per_seed() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let xa: f64 = Real::standard_normal(&mut a);
        let xb: f64 = Real::standard_normal(&mut b);
        assert_eq!(xa, xb);
        assert!(xa.is_finite());
    }

    #[test]
    fn standard_normal_moments_are_sane() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| Real::standard_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}

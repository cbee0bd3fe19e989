//! The sparse module: Bernoulli–Gaussian MMSE denoising (entrywise), a
//! soft-threshold alternative, and the extrinsic-message parameters
//! `(a_S, c_S, v_ext)` the engine passes onward.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{CrpcaError, Result};
use crate::message::MeanVarMessage;
use crate::scalar::{Real, Scalar};

/// Relative slack for the "denoiser learned nothing" clamp: posterior
/// variance within `δ·v` of the input variance makes the extrinsic algebra
/// singular, so the step passes the input through instead.
const NON_INFORMATIVE_DELTA: f64 = 1e-6;
/// Absolute cap on the extrinsic variance emitted by a clamped step.
const EXT_VAR_CAP: f64 = 1e6;
/// Floor applied to empirical extrinsic variances (they can round negative).
const EXT_VAR_FLOOR: f64 = 1e-12;

/// Bernoulli–Gaussian prior: `S = B·G` with `P[B=1] = rho`, `G ~ N(0, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SparsePrior<T> {
    pub rho: T,
    pub theta: T,
}

impl<T: Scalar> SparsePrior<T> {
    pub fn new(rho: T, theta: T) -> Result<Self> {
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(CrpcaError::InvalidParameter {
                name: "rho",
                reason: format!("nonzero probability must lie in (0, 1], got {rho}"),
            });
        }
        if theta <= T::zero() {
            return Err(CrpcaError::InvalidParameter {
                name: "theta",
                reason: format!("nonzero-component variance must be positive, got {theta}"),
            });
        }
        Ok(SparsePrior { rho, theta })
    }

    /// Matched prior for instances normalized to unit per-entry power:
    /// `θ = 1/ρ` so that `E[S²] = ρθ = 1`.
    pub fn unit_power(rho: T) -> Result<Self> {
        Self::new(rho, T::one() / rho)
    }

    /// Prior second moment `E[S²] = ρ·θ`.
    pub fn second_moment(&self) -> T {
        self.rho * self.theta
    }
}

/// Output of one sparse denoising step.
///
/// `extrinsic_mean = c·(posterior_mean − a·input_mean)` entrywise, except
/// under the `non_informative` clamp, where the input passes through
/// unchanged and `extrinsic_var` is capped.
#[derive(Debug, Clone)]
pub struct DenoiseResult<T> {
    pub posterior_mean: DMatrix<T>,
    /// Average per-entry posterior variance (the `v̂_S` estimate).
    pub posterior_var: T,
    pub a: T,
    pub c: T,
    pub extrinsic_mean: DMatrix<T>,
    pub extrinsic_var: T,
    pub non_informative: bool,
}

/// Scalar Bernoulli–Gaussian MMSE: posterior mean and variance of `S` given
/// `r = S + √v·N`, `N ~ N(0,1)`.
pub fn mmse_bg_scalar<T: Scalar>(r: T, v: T, prior: &SparsePrior<T>) -> Result<(T, T)> {
    if v <= T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "v",
            reason: format!("noise variance must be positive, got {v}"),
        });
    }
    Ok(mmse_bg_scalar_unchecked(r, v, prior))
}

/// The same computation with validation hoisted out (hot inner loop).
///
/// Responsibilities are computed in log-odds form so that large `|r|` and
/// extreme `ρ` saturate cleanly instead of overflowing:
/// `t = ln(ρ/(1−ρ)) − ½·ln((θ+v)/v) + (r²/2)·(1/v − 1/(θ+v))`, `π = σ(t)`.
#[inline]
pub(crate) fn mmse_bg_scalar_unchecked<T: Real>(r: T, v: T, prior: &SparsePrior<T>) -> (T, T) {
    let theta = prior.theta;
    let log_odds = Float::ln(prior.rho) - Float::ln(T::one() - prior.rho)
        - T::lit(0.5) * Float::ln((theta + v) / v)
        + T::lit(0.5) * r * r * (T::one() / v - T::one() / (theta + v));
    let pi = sigmoid(log_odds);
    let mu1 = r * theta / (theta + v);
    let var1 = theta * v / (theta + v);
    let mean = pi * mu1;
    let var = pi * (var1 + mu1 * mu1) - mean * mean;
    (mean, var)
}

#[inline]
fn sigmoid<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + Float::exp(-t))
    } else {
        let e = Float::exp(t);
        e / (T::one() + e)
    }
}

/// Entrywise MMSE denoising plus the Gaussian-message extrinsic
/// construction: `a = v̂/v`, `c = v/(v − v̂)`, `v_ext = (1/v̂ − 1/v)⁻¹`,
/// extrinsic mean `c·(post − a·in)` (equivalently `v_ext·(post/v̂ − in/v)`).
pub fn mmse_denoise<T: Scalar>(
    input: &MeanVarMessage<T>,
    prior: &SparsePrior<T>,
) -> Result<DenoiseResult<T>> {
    let v = positive_var(input)?;
    let n = T::from_usize(input.len()).unwrap();
    let mut posterior = input.mean.clone();
    let mut var_sum = T::zero();
    for entry in posterior.iter_mut() {
        let (mean, var) = mmse_bg_scalar_unchecked(*entry, v, prior);
        *entry = mean;
        var_sum += var;
    }
    let posterior_var = var_sum / n;

    if posterior_var >= (T::one() - T::lit(NON_INFORMATIVE_DELTA)) * v {
        let a = posterior_var / v;
        return Ok(non_informative_result(input, posterior, posterior_var, a));
    }

    let a = posterior_var / v;
    let c = v / (v - posterior_var);
    let extrinsic_var = posterior_var * v / (v - posterior_var);
    let extrinsic_mean = extrinsic_from(&posterior, &input.mean, a, c);
    Ok(DenoiseResult {
        posterior_mean: posterior,
        posterior_var,
        a,
        c,
        extrinsic_mean,
        extrinsic_var,
        non_informative: false,
    })
}

/// Soft-threshold denoising `η(r) = sign(r)·(|r| − λ√v)₊` with the
/// divergence-based `a = #{|r| > λ√v}/n` (Stein), and `c`/`v_ext` by the
/// empirical extrinsic formulas with expectations dropped.
///
/// The variance formula needs the signal power `E‖S‖²/n`; instances in this
/// crate are normalized to unit per-entry power, so it is fixed at 1 here.
pub fn soft_threshold_denoise<T: Scalar>(
    input: &MeanVarMessage<T>,
    lambda: T,
) -> Result<DenoiseResult<T>> {
    if lambda < T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "lambda",
            reason: format!("threshold must be nonnegative, got {lambda}"),
        });
    }
    let v = positive_var(input)?;
    let n = T::from_usize(input.len()).unwrap();
    let threshold = lambda * Float::sqrt(v);

    let mut posterior = input.mean.clone();
    let mut surviving = 0usize;
    for entry in posterior.iter_mut() {
        let r = *entry;
        let magnitude = Float::abs(r) - threshold;
        if magnitude > T::zero() {
            *entry = Float::signum(r) * magnitude;
            surviving += 1;
        } else {
            *entry = T::zero();
        }
    }
    let a = T::from_usize(surviving).unwrap() / n;
    // Stein-style proxy: the denoiser keeps an a-fraction of the degrees of
    // freedom, so its average posterior variance is a·v.
    let posterior_var = a * v;

    if posterior_var >= (T::one() - T::lit(NON_INFORMATIVE_DELTA)) * v {
        return Ok(non_informative_result(input, posterior, posterior_var, a));
    }

    let signal_power = T::one();
    let deflected = &posterior - &(input.mean.scale(a));
    let deflected_norm2 = deflected.norm_squared();
    let c = if deflected_norm2 > T::zero() {
        deflected.dot(&input.mean) / deflected_norm2
    } else {
        // post ≡ a·in (e.g. everything thresholded): any c reproduces the
        // zero deflection; 1 keeps the variance formula meaningful.
        T::one()
    };
    let cross = posterior.dot(&input.mean) / n;
    let extrinsic_var = Float::max(
        signal_power - c * cross + c * a * (signal_power + v),
        T::lit(EXT_VAR_FLOOR),
    );
    let extrinsic_mean = deflected.scale(c);
    Ok(DenoiseResult {
        posterior_mean: posterior,
        posterior_var,
        a,
        c,
        extrinsic_mean,
        extrinsic_var,
        non_informative: false,
    })
}

fn positive_var<T: Scalar>(input: &MeanVarMessage<T>) -> Result<T> {
    if input.var <= T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "input.var",
            reason: format!("message variance must be positive, got {}", input.var),
        });
    }
    Ok(input.var)
}

/// The clamp branch: `a` is reported as computed, `c` takes the clamped
/// ratio `1/δ`, the mean passes through unchanged (the `c`-amplified formula
/// would blow up rounding noise by 10⁶), and the variance is the
/// clamped-ratio value capped at 10⁶.
fn non_informative_result<T: Scalar>(
    input: &MeanVarMessage<T>,
    posterior: DMatrix<T>,
    posterior_var: T,
    a: T,
) -> DenoiseResult<T> {
    let delta = T::lit(NON_INFORMATIVE_DELTA);
    DenoiseResult {
        posterior_mean: posterior,
        posterior_var,
        a,
        c: T::one() / delta,
        extrinsic_mean: input.mean.clone(),
        extrinsic_var: Float::min((T::one() - delta) * input.var / delta, T::lit(EXT_VAR_CAP)),
        non_informative: true,
    }
}

fn extrinsic_from<T: Scalar>(post: &DMatrix<T>, input: &DMatrix<T>, a: T, c: T) -> DMatrix<T> {
    let mut out = post.clone();
    out.zip_apply(input, |p, i| *p = c * (*p - a * i));
    out
}

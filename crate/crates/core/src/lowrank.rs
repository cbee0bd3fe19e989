//! The low-rank module: spectral shrinkers (best-rank-r, singular-value
//! soft thresholding, smoothed hard thresholding), their divergences
//! (analytic and Monte Carlo), and the extrinsic construction `(a_L, c_L,
//! v_ext)`.
//!
//! Every shrinker acts on the *normalized* spectrum `σ̃ᵢ = σᵢ/√(n₂·v)` of
//! its input and rescales back by `√(n₂·v)`; the normalization puts the
//! noise bulk edge near a fixed location so thresholds are comparable
//! across `v`. Divergences are reported per coordinate (`div/n`), which is
//! exactly the Stein estimate of the linear-response coefficient `a_L`:
//! the analytic bracket of the normalized-spectrum denoiser is
//! scale-invariant, so no extra `√(n₂v)` factor appears, and the Monte
//! Carlo estimator below is its direct probe version.

use nalgebra::DMatrix;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{CrpcaError, Result};
use crate::message::MeanVarMessage;
use crate::quad::GlRule;
use crate::scalar::{Real, Scalar};
use crate::seeding::{mix2, rng_from};

/// Two singular values closer than this (relative to σ₁) make the pairwise
/// divergence terms singular; they get perturbed apart (with a warning).
const TIE_REL_TOL: f64 = 1e-12;
/// Size of the de-tying perturbation, relative to σ₁.
const TIE_PERTURB_REL: f64 = 1e-10;
/// Floor for the empirical extrinsic variance (it can round negative).
const EXT_VAR_FLOOR: f64 = 1e-12;
/// Pseudo-precision and variance cap of the non-informative passthrough,
/// matching the sparse module's constants.
const NON_INFORMATIVE_DELTA: f64 = 1e-6;
const EXT_VAR_CAP: f64 = 1e6;
/// Gauss–Legendre order for the smoothed-threshold bump integrals.
const BUMP_GL_ORDER: usize = 64;

/// Configuration of a spectral shrinker. `epsilon` for the smoothed kind is
/// *relative* to σ*: the absolute smoothing half-width is `ε·σ*`, with σ*
/// re-resolved from each input as the largest *discarded* normalized
/// singular value (the one just below the `rank`-th).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectralShrinker<T> {
    BestRankR { r: usize },
    Svst { omega: T },
    SmoothedHard { rank: usize, epsilon: T },
}

/// How the divergence (the `a_L` coefficient) is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceMode {
    /// Closed-form spectral-function divergence (exact; the default).
    Analytic,
    /// Probe estimator `(1/n)·⟨[D(R+εN) − D(R)]/ε, N⟩` averaged over
    /// unit-variance Gaussian probes `N`.
    MonteCarlo { probes: usize, epsilon: f64 },
}

/// A shrinker resolved against a concrete spectrum: a scalar map on
/// normalized singular values plus the derived kernels the asymptotic
/// analysis needs (`f'`, `g(x) = f(x)/x`, and the two-point kernel `H`).
#[derive(Debug, Clone)]
pub enum ShrinkMap<T> {
    /// Keep values `x ≥ σ*` (σ* sits at the r-th input singular value).
    Hard { sigma_star: T },
    /// Soft threshold `(x − ω)₊`.
    Soft { omega: T },
    Smoothed(SmoothedMap<T>),
}

impl<T: Scalar> SpectralShrinker<T> {
    /// Resolve against a (descending) normalized spectrum. Rank-based kinds
    /// read their σ* off the spectrum; SVST ignores it.
    pub fn resolve(&self, sigma_tilde: &[T]) -> Result<ShrinkMap<T>> {
        match *self {
            SpectralShrinker::BestRankR { r } => {
                let sigma_star = rank_pivot(sigma_tilde, r)?;
                Ok(ShrinkMap::Hard { sigma_star })
            }
            SpectralShrinker::Svst { omega } => {
                if omega < T::zero() {
                    return Err(CrpcaError::InvalidParameter {
                        name: "omega",
                        reason: format!("threshold must be nonnegative, got {omega}"),
                    });
                }
                Ok(ShrinkMap::Soft { omega })
            }
            SpectralShrinker::SmoothedHard { rank, epsilon } => {
                let kept = rank_pivot(sigma_tilde, rank)?;
                // The empirical (1−γ)-quantile is the whole interval between
                // the largest discarded and the smallest kept singular value;
                // anchor the window at its lower end so every retained value
                // stays strictly above the transition for any ε < 1 and the
                // map collapses onto the rank-`rank` truncation as ε → 0,
                // rather than half-attenuating the boundary value itself.
                let sigma_star = match sigma_tilde.get(rank) {
                    Some(&below) if below > T::zero() => below,
                    _ => kept * T::lit(0.5),
                };
                if sigma_star <= T::zero() {
                    return Err(CrpcaError::DegenerateExtrinsic(format!(
                        "smoothed-hard pivot σ* at rank {rank} is zero"
                    )));
                }
                if !(epsilon > T::zero() && epsilon < T::one()) {
                    return Err(CrpcaError::InvalidParameter {
                        name: "epsilon",
                        reason: format!("relative smoothing width must lie in (0,1), got {epsilon}"),
                    });
                }
                Ok(ShrinkMap::Smoothed(SmoothedMap::new(sigma_star, epsilon * sigma_star)?))
            }
        }
    }

    /// Rank parameter for rank-based kinds (`None` for SVST).
    pub fn rank(&self) -> Option<usize> {
        match *self {
            SpectralShrinker::BestRankR { r } => Some(r),
            SpectralShrinker::SmoothedHard { rank, .. } => Some(rank),
            SpectralShrinker::Svst { .. } => None,
        }
    }
}

fn rank_pivot<T: Scalar>(sigma_tilde: &[T], r: usize) -> Result<T> {
    if r == 0 || r > sigma_tilde.len() {
        return Err(CrpcaError::InvalidParameter {
            name: "r",
            reason: format!("rank must lie in [1, {}], got {r}", sigma_tilde.len()),
        });
    }
    Ok(sigma_tilde[r - 1])
}

impl<T: Scalar> ShrinkMap<T> {
    /// The scalar shrink map `f` on normalized singular values.
    pub fn f(&self, x: T) -> T {
        match self {
            ShrinkMap::Hard { sigma_star } => {
                if x >= *sigma_star {
                    x
                } else {
                    T::zero()
                }
            }
            ShrinkMap::Soft { omega } => Float::max(x - *omega, T::zero()),
            ShrinkMap::Smoothed(map) => map.f(x),
        }
    }

    /// Derivative `f'` (almost everywhere for the non-smooth kinds).
    pub fn f_prime(&self, x: T) -> T {
        match self {
            ShrinkMap::Hard { sigma_star } => {
                if x >= *sigma_star {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ShrinkMap::Soft { omega } => {
                if *omega == T::zero() || x > *omega {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ShrinkMap::Smoothed(map) => map.f_prime(x),
        }
    }

    /// `g(x) = f(x)/x`, extended by its limit `f'(0)` at `x = 0`.
    pub fn g(&self, x: T) -> T {
        if x == T::zero() {
            self.f_prime(T::zero())
        } else {
            self.f(x) / x
        }
    }

    /// The symmetric two-point kernel: `(x·f(x) − y·f(y))/(x² − y²)` off the
    /// diagonal, `(x·f'(x) + f(x))/(2x)` on it, and 0 at the origin.
    pub fn h(&self, x: T, y: T) -> T {
        let scale = Float::max(Float::max(Float::abs(x), Float::abs(y)), T::one());
        if Float::abs(x - y) <= T::lit(1e-9) * scale {
            let mid = (x + y) * T::lit(0.5);
            if mid == T::zero() {
                T::zero()
            } else {
                (mid * self.f_prime(mid) + self.f(mid)) / (T::lit(2.0) * mid)
            }
        } else {
            (x * self.f(x) - y * self.f(y)) / (x * x - y * y)
        }
    }
}

/// The bump-smoothed hard threshold: the hard cut at σ* convolved with the
/// normalized C∞ bump of half-width ε. Exactly 0 below `σ* − ε`, exactly
/// `x` above `σ* + ε`, and the convolution integral in between.
#[derive(Debug, Clone)]
pub struct SmoothedMap<T> {
    pub sigma_star: T,
    pub epsilon: T,
    rule: GlRule<T>,
    z: T,
}

/// The standard bump `B(u) = exp(1/(u²−1))` on `|u| < 1`, zero outside.
pub(crate) fn bump<T: Real>(u: T) -> T {
    if u * u < T::one() {
        Float::exp(T::one() / (u * u - T::one()))
    } else {
        T::zero()
    }
}

impl<T: Scalar> SmoothedMap<T> {
    pub fn new(sigma_star: T, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < sigma_star) {
            return Err(CrpcaError::InvalidParameter {
                name: "epsilon",
                reason: format!(
                    "smoothing width must satisfy 0 < ε < σ* (got ε = {epsilon}, σ* = {sigma_star})"
                ),
            });
        }
        let rule = GlRule::new(BUMP_GL_ORDER);
        let z = rule.integrate(-T::one(), T::one(), bump);
        Ok(SmoothedMap { sigma_star, epsilon, rule, z })
    }

    /// `f(x) = (1/Z)·∫_{−1}^{t} (x − εu)·B(u) du` with `t = (x−σ*)/ε` inside
    /// the window.
    pub fn f(&self, x: T) -> T {
        let t = (x - self.sigma_star) / self.epsilon;
        if t <= -T::one() {
            T::zero()
        } else if t >= T::one() {
            x
        } else {
            let eps = self.epsilon;
            self.rule.integrate(-T::one(), t, |u| (x - eps * u) * bump(u)) / self.z
        }
    }

    /// `f'(x) = (1/Z)·∫_{−1}^{t} B + σ*·B(t)/(ε·Z)` inside the window
    /// (Leibniz rule on the convolution), 0 below it, 1 above it.
    pub fn f_prime(&self, x: T) -> T {
        let t = (x - self.sigma_star) / self.epsilon;
        if t <= -T::one() {
            T::zero()
        } else if t >= T::one() {
            T::one()
        } else {
            let body = self.rule.integrate(-T::one(), t, bump) / self.z;
            body + self.sigma_star * bump(t) / (self.epsilon * self.z)
        }
    }

    /// Bump normalization `Z = ∫B` (exposed for diagnostics).
    pub fn normalization(&self) -> T {
        self.z
    }
}

/// Standalone evaluation of the smoothed hard threshold (ε here is the
/// *absolute* half-width, `0 < ε < σ*`).
pub fn smoothed_hard_f<T: Scalar>(x: T, sigma_star: T, epsilon: T) -> Result<T> {
    Ok(SmoothedMap::new(sigma_star, epsilon)?.f(x))
}

/// Derivative of [`smoothed_hard_f`] in `x`.
pub fn smoothed_hard_f_prime<T: Scalar>(x: T, sigma_star: T, epsilon: T) -> Result<T> {
    Ok(SmoothedMap::new(sigma_star, epsilon)?.f_prime(x))
}

/// SVD with singular values descending and a deterministic sign convention:
/// the largest-magnitude entry of each left singular vector is nonnegative.
pub struct SvdParts<T> {
    pub u: DMatrix<T>,
    pub sigma: Vec<T>,
    pub v_t: DMatrix<T>,
}

pub fn canonical_svd<T: Scalar>(mat: &DMatrix<T>) -> Result<SvdParts<T>> {
    let (rows, cols) = (mat.nrows(), mat.ncols());
    let svd = mat
        .clone()
        .try_svd(true, true, Float::epsilon(), 8192)
        .ok_or(CrpcaError::SvdFailure { rows, cols })?;
    let mut u = svd.u.expect("left vectors requested");
    let mut v_t = svd.v_t.expect("right vectors requested");
    let sigma: Vec<T> = svd.singular_values.iter().copied().collect();
    for j in 0..sigma.len() {
        let mut signed_peak = T::zero();
        let mut peak_abs = T::zero();
        for &val in u.column(j).iter() {
            if Float::abs(val) > peak_abs {
                peak_abs = Float::abs(val);
                signed_peak = val;
            }
        }
        if signed_peak < T::zero() {
            u.column_mut(j).neg_mut();
            v_t.row_mut(j).neg_mut();
        }
    }
    Ok(SvdParts { u, sigma, v_t })
}

/// Rebuild `U·diag(new_sigma)·Vᵀ`, skipping the zero tail (the shrinkers
/// preserve descending order, so nonzeros form a prefix).
fn reconstruct<T: Scalar>(parts: &SvdParts<T>, new_sigma: &[T]) -> DMatrix<T> {
    let k = new_sigma.iter().take_while(|&&s| s > T::zero()).count();
    if k == 0 {
        return DMatrix::zeros(parts.u.nrows(), parts.v_t.ncols());
    }
    let mut u_scaled = parts.u.columns(0, k).clone_owned();
    for j in 0..k {
        let s = new_sigma[j];
        for i in 0..u_scaled.nrows() {
            u_scaled[(i, j)] *= s;
        }
    }
    &u_scaled * parts.v_t.rows(0, k)
}

fn normalized_spectrum<T: Scalar>(sigma: &[T], n2: usize, v: T) -> Vec<T> {
    let scale = T::one() / Float::sqrt(T::from_usize(n2).unwrap() * v);
    sigma.iter().map(|&s| s * scale).collect()
}

/// Singular-value soft thresholding at level `ω` on the normalized spectrum.
pub fn svst<T: Scalar>(input: &MeanVarMessage<T>, omega: T) -> Result<DMatrix<T>> {
    shrink_posterior(&input.mean, input.var, &SpectralShrinker::Svst { omega })
}

/// Keep the top `r` singular triplets, zero the rest.
pub fn best_rank_r<T: Scalar>(input: &MeanVarMessage<T>, r: usize) -> Result<DMatrix<T>> {
    shrink_posterior(&input.mean, input.var, &SpectralShrinker::BestRankR { r })
}

/// Apply a shrinker to a raw matrix under noise variance `v`: SVD,
/// normalize the spectrum, map it, rescale, reassemble.
pub fn shrink_posterior<T: Scalar>(
    mat: &DMatrix<T>,
    v: T,
    shrinker: &SpectralShrinker<T>,
) -> Result<DMatrix<T>> {
    check_variance(v)?;
    let parts = canonical_svd(mat)?;
    let sigma_tilde = normalized_spectrum(&parts.sigma, mat.ncols(), v);
    let shrunk = shrunk_spectrum(&parts, &sigma_tilde, mat.ncols(), v, shrinker)?;
    Ok(reconstruct(&parts, &shrunk))
}

/// The shrunk (un-normalized) spectrum. Best-rank-r truncates by *index*,
/// which is its definition; the value-based Hard map coincides with it
/// except on exact ties at the pivot.
fn shrunk_spectrum<T: Scalar>(
    parts: &SvdParts<T>,
    sigma_tilde: &[T],
    n2: usize,
    v: T,
    shrinker: &SpectralShrinker<T>,
) -> Result<Vec<T>> {
    let back = Float::sqrt(T::from_usize(n2).unwrap() * v);
    match *shrinker {
        SpectralShrinker::BestRankR { r } => {
            rank_pivot(sigma_tilde, r)?;
            Ok(parts
                .sigma
                .iter()
                .enumerate()
                .map(|(i, &s)| if i < r { s } else { T::zero() })
                .collect())
        }
        _ => {
            let map = shrinker.resolve(sigma_tilde)?;
            Ok(sigma_tilde.iter().map(|&s| back * map.f(s)).collect())
        }
    }
}

fn check_variance<T: Scalar>(v: T) -> Result<T> {
    if v <= T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "input.var",
            reason: format!("message variance must be positive, got {v}"),
        });
    }
    Ok(v)
}

/// If the (descending) spectrum has near-ties, spread it by a strictly
/// decreasing ramp and warn; returns whether a perturbation happened.
fn perturb_ties<T: Scalar>(sigma: &mut [T], context: &str) -> bool {
    let top = sigma[0];
    if top <= T::zero() {
        return false;
    }
    let tol = T::lit(TIE_REL_TOL) * top;
    let tied = sigma.windows(2).any(|w| Float::abs(w[0] - w[1]) < tol);
    if tied {
        eprintln!(
            "warning: near-tied singular values in {context}; \
             perturbing the spectrum by {TIE_PERTURB_REL}·σ₁ to keep pairwise terms finite"
        );
        let step = T::lit(TIE_PERTURB_REL) * top;
        let len = sigma.len();
        for (i, s) in sigma.iter_mut().enumerate() {
            *s += T::from_usize(len - i).unwrap() * step;
        }
    }
    tied
}

/// Divergence per coordinate of a spectral function with scalar map `f`:
/// `(Σf'(σ̃ᵢ) + |n₁−n₂|·Σ g(σ̃ᵢ) + 2·Σ_{i<j} (σ̃ᵢf(σ̃ᵢ)−σ̃ⱼf(σ̃ⱼ))/(σ̃ᵢ²−σ̃ⱼ²)) / n`.
fn spectral_divergence_per_n<T: Scalar>(
    sigma_tilde: &[T],
    n1: usize,
    n2: usize,
    map: &ShrinkMap<T>,
    context: &str,
) -> T {
    if sigma_tilde.is_empty() || sigma_tilde[0] <= T::zero() {
        return T::zero();
    }
    let mut s = sigma_tilde.to_vec();
    perturb_ties(&mut s, context);
    let dim_gap = T::from_usize(n1.abs_diff(n2)).unwrap();
    let mut bracket = T::zero();
    for &x in &s {
        bracket += map.f_prime(x) + dim_gap * map.g(x);
    }
    for i in 0..s.len() {
        let fi = s[i] * map.f(s[i]);
        for j in (i + 1)..s.len() {
            let num = fi - s[j] * map.f(s[j]);
            if num != T::zero() {
                bracket += T::lit(2.0) * num / (s[i] * s[i] - s[j] * s[j]);
            }
        }
    }
    bracket / T::from_usize(n1 * n2).unwrap()
}

/// Analytic divergence (per coordinate) of SVST at level `ω` given the raw
/// singular values of the input and its noise variance.
pub fn divergence_svst<T: Scalar>(
    sigma: &[T],
    v: T,
    omega: T,
    n1: usize,
    n2: usize,
) -> Result<T> {
    check_variance(v)?;
    if omega < T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "omega",
            reason: format!("threshold must be nonnegative, got {omega}"),
        });
    }
    let sigma_tilde = normalized_spectrum(sigma, n2, v);
    Ok(spectral_divergence_per_n(&sigma_tilde, n1, n2, &ShrinkMap::Soft { omega }, "divergence_svst"))
}

/// Analytic divergence (per coordinate) of the best-rank-r denoiser. The
/// result is scale-invariant, so `v` only participates through the (noop)
/// normalization.
pub fn divergence_best_rank_r<T: Scalar>(
    sigma: &[T],
    v: T,
    r: usize,
    n1: usize,
    n2: usize,
) -> Result<T> {
    check_variance(v)?;
    if r == 0 {
        return Ok(T::zero());
    }
    if r > sigma.len() {
        return Err(CrpcaError::InvalidParameter {
            name: "r",
            reason: format!("rank must lie in [0, {}], got {r}", sigma.len()),
        });
    }
    let sigma_tilde = normalized_spectrum(sigma, n2, v);
    let map = ShrinkMap::Hard { sigma_star: sigma_tilde[r - 1] };
    Ok(spectral_divergence_per_n(&sigma_tilde, n1, n2, &map, "divergence_best_rank_r"))
}

/// Monte Carlo divergence per coordinate:
/// `(1/n)·avg_k ⟨[D(R + εN_k) − D(R)]/ε, N_k⟩` over unit-variance Gaussian
/// probes.
pub fn divergence_monte_carlo<T: Scalar>(
    denoiser: impl Fn(&DMatrix<T>) -> Result<DMatrix<T>>,
    input: &MeanVarMessage<T>,
    epsilon: T,
    num_probes: usize,
    seed: u64,
) -> Result<T> {
    if epsilon <= T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "epsilon",
            reason: format!("probe scale must be positive, got {epsilon}"),
        });
    }
    if num_probes == 0 {
        return Err(CrpcaError::InvalidParameter {
            name: "num_probes",
            reason: "need at least one probe".into(),
        });
    }
    let base = denoiser(&input.mean)?;
    let n = T::from_usize(input.len()).unwrap();
    let (n1, n2) = input.dims();
    let mut acc = T::zero();
    for k in 0..num_probes {
        let mut rng = rng_from(mix2(seed, k as u64));
        let probe = DMatrix::from_fn(n1, n2, |_, _| T::standard_normal(&mut rng));
        let perturbed = denoiser(&(&input.mean + probe.scale(epsilon)))?;
        let delta = (perturbed - &base).scale(T::one() / epsilon);
        acc += delta.dot(&probe) / n;
    }
    Ok(acc / T::from_usize(num_probes).unwrap())
}

/// Output of a full low-rank denoising step.
#[derive(Debug, Clone)]
pub struct LowRankDenoiseResult<T> {
    pub posterior_mean: DMatrix<T>,
    /// The Stein coefficient `â_L = div/n`.
    pub divergence_per_n: T,
    pub c: T,
    pub extrinsic_mean: DMatrix<T>,
    pub extrinsic_var: T,
}

/// Extrinsic construction from a posterior and its divergence coefficient:
/// `c = ⟨post − a·in, in⟩/‖post − a·in‖²_F`, extrinsic mean `c·(post − a·in)`,
/// and the empirical variance
/// `(‖in‖²‖post‖² − ⟨in,post⟩²)/(n·‖post − a·in‖²) − v_in` (floored).
pub fn lowrank_extrinsic<T: Scalar>(
    input: &MeanVarMessage<T>,
    posterior: DMatrix<T>,
    a: T,
) -> Result<LowRankDenoiseResult<T>> {
    let v = check_variance(input.var)?;
    let n = T::from_usize(input.len()).unwrap();
    let deflected = &posterior - &input.mean.scale(a);
    let deflected_norm2 = deflected.norm_squared();
    if deflected_norm2 <= T::zero() {
        return Err(CrpcaError::DegenerateExtrinsic(
            "low-rank posterior is an exact multiple of its input; no extrinsic direction left"
                .into(),
        ));
    }
    let c = deflected.dot(&input.mean) / deflected_norm2;
    let in2 = input.mean.norm_squared();
    let post2 = posterior.norm_squared();
    let cross = input.mean.dot(&posterior);
    let extrinsic_var = Float::max(
        (in2 * post2 - cross * cross) / (n * deflected_norm2) - v,
        T::lit(EXT_VAR_FLOOR),
    );
    let extrinsic_mean = deflected.scale(c);
    Ok(LowRankDenoiseResult {
        posterior_mean: posterior,
        divergence_per_n: a,
        c,
        extrinsic_mean,
        extrinsic_var,
    })
}

/// The full low-rank step: shrink, estimate the divergence in the requested
/// mode, and form the extrinsic message.
pub fn denoise<T: Scalar>(
    input: &MeanVarMessage<T>,
    shrinker: &SpectralShrinker<T>,
    mode: &DivergenceMode,
    seed: u64,
) -> Result<LowRankDenoiseResult<T>> {
    let v = check_variance(input.var)?;
    let parts = canonical_svd(&input.mean)?;
    let n2 = input.mean.ncols();
    let sigma_tilde = normalized_spectrum(&parts.sigma, n2, v);
    let shrunk = shrunk_spectrum(&parts, &sigma_tilde, n2, v, shrinker)?;
    let posterior = reconstruct(&parts, &shrunk);

    let a = match *mode {
        DivergenceMode::Analytic => {
            let map = shrinker.resolve(&sigma_tilde)?;
            spectral_divergence_per_n(
                &sigma_tilde,
                input.mean.nrows(),
                n2,
                &map,
                "low-rank analytic divergence",
            )
        }
        DivergenceMode::MonteCarlo { probes, epsilon } => divergence_monte_carlo(
            |mat| shrink_posterior(mat, v, shrinker),
            input,
            T::lit(epsilon),
            probes,
            seed,
        )?,
    };
    // A posterior with no extrinsic direction (all-zero input, or a shrinker
    // that killed everything) degrades to a non-informative passthrough so
    // the surrounding iteration can carry on, mirroring the sparse module.
    if (&posterior - &input.mean.scale(a)).norm_squared() <= T::zero() {
        let delta = T::lit(NON_INFORMATIVE_DELTA);
        return Ok(LowRankDenoiseResult {
            posterior_mean: posterior,
            divergence_per_n: a,
            c: T::one() / delta,
            extrinsic_mean: input.mean.clone(),
            extrinsic_var: Float::min((T::one() - delta) * v / delta, T::lit(EXT_VAR_CAP)),
        });
    }
    lowrank_extrinsic(input, posterior, a)
}

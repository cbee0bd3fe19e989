//! State evolution: the scalar recursion predicting the per-iteration
//! message variances of the engine in the large-system limit.
//!
//! Three transfer functions map an input error variance to an extrinsic
//! output MSE — ψ for the linear module (closed forms), φ̄ for the sparse
//! module (quadrature over the Bernoulli–Gaussian channel), and φ for the
//! low-rank module (a Monte Carlo table, the analytic spectral form serving
//! as a cross-check). The recursion, from state `(τ_S, τ_L)`:
//!
//! `τ_X = ψ(τ_S + τ_L)`, then `τ_S ← φ̄(τ_X + τ_L)`, `τ_L ← φ(τ_X + τ_S)`,
//!
//! both updates reading the *previous* state. Also here: the asymptotic
//! low-rank MSE functional and the Stieltjes fixed point characterizing the
//! limiting spectrum of the noisy low-rank matrix.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrpcaError, Result};
use crate::instances::generate_low_rank;
use crate::lowrank::{self, DivergenceMode, SpectralShrinker};
use crate::message::MeanVarMessage;
use crate::quad::adaptive_simpson;
use crate::scalar::Scalar;
use crate::seeding::{mix2, mix3, rng_from};
use crate::sparse::{mmse_bg_scalar_unchecked, SparsePrior};

const STIELTJES_MAX_ITERS: usize = 10_000;

/// ψ for operators with orthonormal rows: `(1/α − 1)·v + σ²/α`.
pub fn psi_partial_orthonormal<T: Scalar>(v: T, alpha: T, sigma_n_sq: T) -> Result<T> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(CrpcaError::InvalidParameter {
            name: "alpha",
            reason: format!("sampling ratio must lie in (0, 1], got {alpha}"),
        });
    }
    Ok((T::one() / alpha - T::one()) * v + sigma_n_sq / alpha)
}

/// ψ for a general spectrum: `1/(α·E[θ/(θv + σ²)]) − v`, the expectation
/// over an empirical eigenvalue sample `θ` of `AAᵀ`.
pub fn psi_general<T: Scalar>(v: T, theta_sample: &[T], alpha: T, sigma_n_sq: T) -> Result<T> {
    if theta_sample.is_empty() {
        return Err(CrpcaError::InvalidParameter {
            name: "theta_sample",
            reason: "eigenvalue sample is empty".into(),
        });
    }
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(CrpcaError::InvalidParameter {
            name: "alpha",
            reason: format!("sampling ratio must lie in (0, 1], got {alpha}"),
        });
    }
    if v == T::zero() && sigma_n_sq == T::zero() {
        return Ok(T::zero()); // limit of the closed form
    }
    let mut acc = T::zero();
    for &theta in theta_sample {
        if theta > T::zero() {
            acc += theta / (theta * v + sigma_n_sq);
        }
    }
    let mean = acc / T::from_usize(theta_sample.len()).unwrap();
    if !(mean > T::zero()) {
        return Err(CrpcaError::Numerical(
            "degenerate eigenvalue sample: E[θ/(θv+σ²)] is not positive".into(),
        ));
    }
    Ok(T::one() / (alpha * mean) - v)
}

/// `MSE_S(v) = E[(E[S | S + √v·N] − S)²]` for the Bernoulli–Gaussian prior,
/// by adaptive quadrature: the outer expectation splits over the mixture,
/// `∫ p(r)·Var(S|r) dr` with `p = (1−ρ)·N(0,v) + ρ·N(0,θ+v)`.
pub fn mse_sparse_mmse<T: Scalar>(v: T, prior: &SparsePrior<T>) -> T {
    let rho = prior.rho;
    let theta = prior.theta;
    let half = T::lit(0.5);
    let two_pi = T::lit(std::f64::consts::TAU);
    let r_max = T::lit(10.0) * Float::sqrt(theta + v);
    let tol = T::lit(1e-12) * v;

    let gauss = move |r: T, var: T| Float::exp(-half * r * r / var) / Float::sqrt(two_pi * var);
    let posterior_var = move |r: T| mmse_bg_scalar_unchecked(r, v, prior).1;

    // Var(S|r) is even in r: integrate [0, R] and double.
    let spike = adaptive_simpson(
        &move |r| gauss(r, v) * posterior_var(r),
        T::zero(),
        r_max,
        tol,
    );
    let slab = adaptive_simpson(
        &move |r| gauss(r, theta + v) * posterior_var(r),
        T::zero(),
        r_max,
        tol,
    );
    T::lit(2.0) * ((T::one() - rho) * spike + rho * slab)
}

/// The sparse transfer function `φ̄(v) = (1/MSE_S(v) − 1/v)⁻¹`, i.e. the
/// extrinsic MSE after the posterior MSE is deconvolved from the input.
pub fn varphi_mmse<T: Scalar>(v: T, prior: &SparsePrior<T>) -> Result<T> {
    if v <= T::zero() {
        return Ok(T::zero());
    }
    let mse = mse_sparse_mmse(v, prior);
    if !(mse > T::zero() && mse < v) {
        return Err(CrpcaError::Numerical(format!(
            "posterior MSE {mse} not inside (0, v = {v}); quadrature breakdown"
        )));
    }
    Ok(mse * v / (v - mse))
}

/// Piecewise-linear transfer table on a strictly increasing positive grid.
/// Below the grid it falls linearly through the origin (transfer functions
/// vanish at 0); above it clamps to the last value with a one-time warning.
#[derive(Debug, Serialize, Deserialize)]
pub struct TransferTable<T> {
    grid: Vec<T>,
    values: Vec<T>,
    #[serde(skip)]
    clamp_warned: AtomicBool,
}

impl<T: Clone> Clone for TransferTable<T> {
    fn clone(&self) -> Self {
        TransferTable {
            grid: self.grid.clone(),
            values: self.values.clone(),
            clamp_warned: AtomicBool::new(self.clamp_warned.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Scalar> TransferTable<T> {
    pub fn new(grid: Vec<T>, values: Vec<T>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(CrpcaError::InvalidParameter {
                name: "grid",
                reason: format!(
                    "need ≥ 2 matching grid/value pairs, got {}/{}",
                    grid.len(),
                    values.len()
                ),
            });
        }
        if !(grid[0] > T::zero()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CrpcaError::InvalidParameter {
                name: "grid",
                reason: "grid must be positive and strictly increasing".into(),
            });
        }
        if values.iter().any(|x| !Float::is_finite(*x) || *x < T::zero()) {
            return Err(CrpcaError::InvalidParameter {
                name: "values",
                reason: "table values must be finite and nonnegative".into(),
            });
        }
        Ok(TransferTable { grid, values, clamp_warned: AtomicBool::new(false) })
    }

    pub fn v_min(&self) -> T {
        self.grid[0]
    }

    pub fn v_max(&self) -> T {
        *self.grid.last().unwrap()
    }

    pub fn eval(&self, x: T) -> T {
        if x <= T::zero() {
            return T::zero();
        }
        if x < self.grid[0] {
            return self.values[0] * x / self.grid[0];
        }
        let last = self.grid.len() - 1;
        if x >= self.grid[last] {
            if x > self.grid[last] && !self.clamp_warned.swap(true, Ordering::Relaxed) {
                eprintln!(
                    "warning: transfer table evaluated at {:.3e} above its domain max {:.3e}; clamping",
                    x.to_f64_lossy(),
                    self.grid[last].to_f64_lossy()
                );
            }
            return self.values[last];
        }
        let i = self.grid.partition_point(|&g| g <= x) - 1;
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[i] * (T::one() - t) + self.values[i + 1] * t
    }

    /// CSV with columns `v,phi_v`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "v,phi_v")?;
        for (g, val) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{},{}", g.to_f64_lossy(), val.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// A scalar transfer function in one of its concrete guises.
#[derive(Debug, Clone)]
pub enum TransferFunction<T> {
    /// `slope·v + intercept` — ψ for orthonormal rows, and synthetic test
    /// transfers.
    Affine { slope: T, intercept: T },
    /// φ̄ evaluated by quadrature.
    SparseMmse { prior: SparsePrior<T> },
    /// Monte Carlo (or otherwise tabulated) transfer.
    Table(TransferTable<T>),
    /// ψ against an empirical `AAᵀ` eigenvalue sample.
    PsiGeneral { theta: Vec<T>, alpha: T, sigma_n_sq: T },
}

impl<T: Scalar> TransferFunction<T> {
    /// ψ for a partial-orthonormal operator as an [`TransferFunction::Affine`].
    pub fn psi_orthonormal(alpha: T, sigma_n_sq: T) -> Result<Self> {
        // Validation shared with the free function.
        psi_partial_orthonormal(T::zero(), alpha, sigma_n_sq)?;
        Ok(TransferFunction::Affine {
            slope: T::one() / alpha - T::one(),
            intercept: sigma_n_sq / alpha,
        })
    }

    pub fn is_table(&self) -> bool {
        matches!(self, TransferFunction::Table(_))
    }

    pub fn eval(&self, v: T) -> T {
        match self {
            TransferFunction::Affine { slope, intercept } => *slope * v + *intercept,
            TransferFunction::SparseMmse { prior } => varphi_mmse(v, prior)
                .expect("Bernoulli-Gaussian posterior MSE left (0, v): quadrature breakdown"),
            TransferFunction::Table(table) => table.eval(v),
            TransferFunction::PsiGeneral { theta, alpha, sigma_n_sq } => {
                psi_general(v, theta, *alpha, *sigma_n_sq)
                    .expect("validated spectrum sample became degenerate")
            }
        }
    }
}

/// Monte Carlo construction of the low-rank transfer table: for each grid
/// `v`, average the realized extrinsic MSE `(1/n)·‖c·(D(L+√v·N) − â·input) −
/// L‖²_F` over fresh `(L, N)` pairs. Grid points run in parallel; seeds are
/// per-(point, trial), so the result is independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn phi_lowrank_table<T: Scalar>(
    shrinker: &SpectralShrinker<T>,
    rank: usize,
    v_min: T,
    v_max: T,
    step: T,
    trials: usize,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<TransferTable<T>> {
    if !(v_min > T::zero() && v_max > v_min && step > T::zero()) {
        return Err(CrpcaError::InvalidParameter {
            name: "grid",
            reason: format!("need 0 < v_min < v_max and step > 0, got [{v_min}, {v_max}] step {step}"),
        });
    }
    if trials == 0 {
        return Err(CrpcaError::InvalidParameter {
            name: "trials",
            reason: "need at least one trial per grid point".into(),
        });
    }
    let mut grid = Vec::new();
    let mut v = v_min;
    while v <= v_max + step * T::lit(1e-9) {
        grid.push(v);
        v += step;
    }
    let n = T::from_usize(n1 * n2).unwrap();
    let values = grid
        .par_iter()
        .enumerate()
        .map(|(gi, &v)| -> Result<T> {
            let mut acc = T::zero();
            for trial in 0..trials {
                let inst_seed = mix3(seed, gi as u64, trial as u64);
                let l = generate_low_rank::<T>(n1, n2, rank, mix2(inst_seed, 0xA))?;
                let mut rng = rng_from(mix2(inst_seed, 0xB));
                let sqrt_v = Float::sqrt(v);
                let noisy = DMatrix::from_fn(n1, n2, |i, j| {
                    l[(i, j)] + sqrt_v * T::standard_normal(&mut rng)
                });
                let out = lowrank::denoise(
                    &MeanVarMessage::new(noisy, v),
                    shrinker,
                    &DivergenceMode::Analytic,
                    inst_seed,
                )?;
                acc += (&out.extrinsic_mean - &l).norm_squared() / n;
            }
            Ok(acc / T::from_usize(trials).unwrap())
        })
        .collect::<Result<Vec<T>>>()?;
    TransferTable::new(grid, values)
}

/// Tabulate the asymptotic low-rank transfer function on an arbitrary
/// positive, strictly increasing grid: one spectral sample per point (a
/// single SVD) pushed through [`phi_lowrank_analytic`]. The same `(L, N)`
/// pair is reused across the whole grid, so the table is smooth in `v` and
/// safe to difference numerically — unlike the per-trial Monte Carlo table.
pub fn phi_lowrank_table_analytic<T: Scalar>(
    shrinker: &SpectralShrinker<T>,
    rank: usize,
    n1: usize,
    n2: usize,
    grid: Vec<T>,
    seed: u64,
) -> Result<TransferTable<T>> {
    let beta = T::from_usize(n1.min(n2)).unwrap() / T::from_usize(n1.max(n2)).unwrap();
    let values = grid
        .par_iter()
        .map(|&v| {
            let measure = sample_spectral_measure::<T>(rank, n1, n2, v, seed)?;
            Ok(Float::max(phi_lowrank_analytic(v, shrinker, &measure, beta)?, T::zero()))
        })
        .collect::<Result<Vec<T>>>()?;
    TransferTable::new(grid, values)
}

/// One empirical sample of the limiting singular-value measure of
/// `(L + √v·N)/√(n₂·v)`: generate, add noise, take one SVD. Descending.
pub fn sample_spectral_measure<T: Scalar>(
    rank: usize,
    n1: usize,
    n2: usize,
    v: T,
    seed: u64,
) -> Result<Vec<T>> {
    if v <= T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "v",
            reason: format!("noise variance must be positive, got {v}"),
        });
    }
    let l = generate_low_rank::<T>(n1, n2, rank, mix2(seed, 0xA))?;
    let mut rng = rng_from(mix2(seed, 0xB));
    let sqrt_v = Float::sqrt(v);
    let noisy =
        DMatrix::from_fn(n1, n2, |i, j| l[(i, j)] + sqrt_v * T::standard_normal(&mut rng));
    let back = Float::sqrt(T::from_usize(n2).unwrap() * v);
    Ok(noisy.singular_values().iter().map(|&s| s / back).collect())
}

struct SpectralMoments<T> {
    e_s2: T,
    e_f2: T,
    e_sf: T,
    e_fs_diff2: T,
    e_g: T,
    e_h: T,
}

fn spectral_moments<T: Scalar>(
    shrinker: &SpectralShrinker<T>,
    measure: &[T],
    context: &'static str,
) -> Result<SpectralMoments<T>> {
    if measure.len() < 2 {
        return Err(CrpcaError::InvalidParameter {
            name: "measure",
            reason: format!("{context}: need at least two spectral samples"),
        });
    }
    let map = shrinker.resolve(measure)?;
    let k = measure.len();
    let kf = T::from_usize(k).unwrap();
    let f: Vec<T> = measure.iter().map(|&s| map.f(s)).collect();
    let mut e_s2 = T::zero();
    let mut e_f2 = T::zero();
    let mut e_sf = T::zero();
    let mut e_fs_diff2 = T::zero();
    let mut e_g = T::zero();
    for (&s, &fs) in measure.iter().zip(&f) {
        e_s2 += s * s;
        e_f2 += fs * fs;
        e_sf += s * fs;
        e_fs_diff2 += (fs - s) * (fs - s);
        e_g += map.g(s);
    }
    e_s2 /= kf;
    e_f2 /= kf;
    e_sf /= kf;
    e_fs_diff2 /= kf;
    e_g /= kf;

    // Off-diagonal mean of the symmetric kernel H, with the precomputed f
    // values; near-ties fall back to the kernel's diagonal limit.
    let mut h_sum = T::zero();
    for i in 0..k {
        for j in (i + 1)..k {
            let (x, y) = (measure[i], measure[j]);
            let scale = Float::max(Float::max(x, y), T::one());
            let h = if Float::abs(x - y) <= T::lit(1e-9) * scale {
                map.h(x, y)
            } else {
                (x * f[i] - y * f[j]) / (x * x - y * y)
            };
            h_sum += h + h;
        }
    }
    let e_h = h_sum / (kf * (kf - T::one()));
    Ok(SpectralMoments { e_s2, e_f2, e_sf, e_fs_diff2, e_g, e_h })
}

/// The analytic low-rank transfer function against an empirical spectral
/// sample (taken at the same `v`):
/// `φ(v) = (E[σ²]E[f²] − E[σf]²)/E[(f − a_∞σ)²]·v − v` with
/// `a_∞ = (1−β)E[g] + β·E[H(σᵢ,σⱼ)]_{i≠j}`.
pub fn phi_lowrank_analytic<T: Scalar>(
    v: T,
    shrinker: &SpectralShrinker<T>,
    measure: &[T],
    beta: T,
) -> Result<T> {
    validate_beta(beta)?;
    let m = spectral_moments(shrinker, measure, "phi_lowrank_analytic")?;
    let a_inf = (T::one() - beta) * m.e_g + beta * m.e_h;
    let mut denom = T::zero();
    let map = shrinker.resolve(measure)?;
    for &s in measure {
        let d = map.f(s) - a_inf * s;
        denom += d * d;
    }
    denom /= T::from_usize(measure.len()).unwrap();
    if denom < T::lit(1e-14) {
        return Err(CrpcaError::DegenerateExtrinsic(
            "shrinker acts as a multiple of the identity on this spectrum; \
             extrinsic denominator vanished"
                .into(),
        ));
    }
    Ok((m.e_s2 * m.e_f2 - m.e_sf * m.e_sf) / denom * v - v)
}

/// Asymptotic posterior (pre-extrinsic) MSE of the spectral denoiser:
/// `v·(E[(f−σ)²] + 2(1−β)E[g] + 2β·E[H] − 1)`.
pub fn mse_lowrank_asymptotic<T: Scalar>(
    v: T,
    shrinker: &SpectralShrinker<T>,
    measure: &[T],
    beta: T,
) -> Result<T> {
    validate_beta(beta)?;
    let m = spectral_moments(shrinker, measure, "mse_lowrank_asymptotic")?;
    let two = T::lit(2.0);
    Ok(v * (m.e_fs_diff2 + two * (T::one() - beta) * m.e_g + two * beta * m.e_h - T::one()))
}

fn validate_beta<T: Scalar>(beta: T) -> Result<()> {
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(CrpcaError::InvalidParameter {
            name: "beta",
            reason: format!("aspect ratio must lie in (0, 1], got {beta}"),
        });
    }
    Ok(())
}

/// Damped fixed-point solve of the limiting-spectrum Stieltjes transform:
/// `m(z) = E_t[1/(t/(1+vβm) − (1+vβm)z + v(1−β))]` with `t` drawn from the
/// (normalized) eigenvalue sample of `LLᵀ`.
pub fn stieltjes_fixed_point<T: Scalar>(
    z: Complex<T>,
    t_sample: &[T],
    v: T,
    beta: T,
    damping: T,
    tol: T,
) -> Result<Complex<T>> {
    if !(z.im > T::zero()) {
        return Err(CrpcaError::InvalidParameter {
            name: "z",
            reason: "the Stieltjes transform is defined for Im z > 0".into(),
        });
    }
    if t_sample.is_empty() {
        return Err(CrpcaError::InvalidParameter {
            name: "t_sample",
            reason: "eigenvalue sample is empty".into(),
        });
    }
    if v < T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "v",
            reason: "noise variance must be nonnegative".into(),
        });
    }
    validate_beta(beta)?;
    if !(damping > T::zero() && damping <= T::one()) || !(tol > T::zero()) {
        return Err(CrpcaError::InvalidParameter {
            name: "damping/tol",
            reason: "damping must lie in (0,1] and tol must be positive".into(),
        });
    }

    let one = Complex::new(T::one(), T::zero());
    let kf = T::from_usize(t_sample.len()).unwrap();
    let mut m = -one / z; // exact for a point mass at 0 and v = 0
    for _ in 0..STIELTJES_MAX_ITERS {
        let q = one + Complex::new(v * beta, T::zero()) * m;
        let shift = q * z - Complex::new(v * (T::one() - beta), T::zero());
        let mut next = Complex::new(T::zero(), T::zero());
        for &t in t_sample {
            next += one / (Complex::new(t, T::zero()) / q - shift);
        }
        next /= Complex::new(kf, T::zero());
        let updated = m + (next - m).scale(damping);
        if (updated - m).norm() < tol {
            return Ok(updated);
        }
        m = updated;
    }
    Err(CrpcaError::NonConvergence {
        what: "stieltjes fixed point",
        iterations: STIELTJES_MAX_ITERS,
    })
}

/// One point of the scalar dynamical system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEState<T> {
    pub tau_s: T,
    pub tau_l: T,
}

/// Run the two-variable recursion for `steps` steps, recording every state
/// (the initial one included). Negative transfer outputs are floored at 0.
pub fn se_iterate<T: Scalar>(
    init: SEState<T>,
    psi: &TransferFunction<T>,
    varphi: &TransferFunction<T>,
    phi: &TransferFunction<T>,
    steps: usize,
) -> Vec<SEState<T>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(init);
    let mut st = init;
    for _ in 0..steps {
        let tau_x = Float::max(psi.eval(st.tau_s + st.tau_l), T::zero());
        let tau_s = Float::max(varphi.eval(tau_x + st.tau_l), T::zero());
        let tau_l = Float::max(phi.eval(tau_x + st.tau_s), T::zero());
        st = SEState { tau_s, tau_l };
        states.push(st);
    }
    states
}

/// CSV with columns `t,tau_S,tau_L`.
pub fn write_se_csv<T: Scalar, W: Write>(states: &[SEState<T>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,tau_S,tau_L")?;
    for (t, st) in states.iter().enumerate() {
        writeln!(w, "{},{},{}", t, st.tau_s.to_f64_lossy(), st.tau_l.to_f64_lossy())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn psi_orthonormal_closed_form_values() {
        assert_abs_diff_eq!(psi_partial_orthonormal(1.0, 1.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(psi_partial_orthonormal(1.0, 0.5, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(psi_partial_orthonormal(0.0, 0.4, 1e-5).unwrap(), 2.5e-5);
        assert!(psi_partial_orthonormal(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn psi_general_specializes_to_the_orthonormal_form() {
        let ones = vec![1.0f64; 64];
        for &v in &[0.1, 0.7, 2.5] {
            let got = psi_general(v, &ones, 0.4, 0.02).unwrap();
            let want = psi_partial_orthonormal(v, 0.4, 0.02).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
        // v → ∞ dominance: ψ(v)/v → (1 − α)/α.
        let big = 1e8;
        let ratio = psi_general(big, &ones, 0.25, 0.0).unwrap() / big;
        assert_abs_diff_eq!(ratio, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn psi_general_rejects_degenerate_samples() {
        assert!(psi_general(1.0, &[], 0.4, 0.0).is_err());
        assert!(psi_general(1.0, &[0.0, 0.0], 0.4, 0.1).is_err());
        assert_eq!(psi_general(0.0, &[1.0], 0.4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn varphi_reduces_to_the_gaussian_prior_closed_form() {
        // ρ = 1: MSE = θv/(θ+v), so φ̄ ≡ θ.
        let prior = SparsePrior::new(1.0f64, 2.5).unwrap();
        for &v in &[0.3, 1.0, 2.0] {
            let got = varphi_mmse(v, &prior).unwrap();
            assert_abs_diff_eq!(got, 2.5, epsilon = 1e-8 * 2.5);
        }
    }

    #[test]
    fn varphi_vanishes_at_zero_and_saturates_at_the_prior_power() {
        let prior = SparsePrior::unit_power(0.05f64).unwrap();
        assert_eq!(varphi_mmse(0.0, &prior).unwrap(), 0.0);
        let mut prev = 0.0;
        for &v in &[0.01, 0.05, 0.2, 0.8, 3.0, 10.0] {
            let val = varphi_mmse(v, &prior).unwrap();
            assert!(val > prev, "not increasing at v = {v}");
            prev = val;
        }
        // Asymptote ρθ = 1.
        let far = varphi_mmse(500.0, &prior).unwrap();
        assert!(far < 1.0 && far > 0.9, "asymptote approach: {far}");
    }

    #[test]
    fn transfer_table_interpolates_clamps_and_extrapolates() {
        let table = TransferTable::new(vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 9.0]).unwrap();
        assert_abs_diff_eq!(table.eval(1.5), 3.0);
        assert_abs_diff_eq!(table.eval(2.5), 6.5);
        assert_abs_diff_eq!(table.eval(2.0), 4.0);
        // Below the grid: linear through the origin.
        assert_abs_diff_eq!(table.eval(0.5), 1.0);
        assert_eq!(table.eval(0.0), 0.0);
        assert_eq!(table.eval(-1.0), 0.0);
        // Above: clamped.
        assert_abs_diff_eq!(table.eval(10.0), 9.0);
        assert_eq!((table.v_min(), table.v_max()), (1.0, 3.0));
    }

    #[test]
    fn transfer_table_validates_its_grid() {
        assert!(TransferTable::new(vec![1.0], vec![1.0]).is_err());
        assert!(TransferTable::new(vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(TransferTable::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(TransferTable::new(vec![1.0, 2.0], vec![1.0, -2.0]).is_err());
        assert!(TransferTable::new(vec![1.0, 2.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn phi_table_construction_produces_a_usable_transfer() {
        let table = phi_lowrank_table(
            &SpectralShrinker::BestRankR { r: 2 },
            2,
            0.2f64,
            1.0,
            0.4,
            2,
            40,
            40,
            7,
        )
        .unwrap();
        assert_eq!((table.v_min(), table.v_max()), (0.2, 1.0));
        for &v in &[0.05, 0.2, 0.6, 1.0, 2.0] {
            let val = table.eval(v);
            assert!(val.is_finite() && val >= 0.0, "phi({v}) = {val}");
        }
        // Deterministic under the same seed.
        let again = phi_lowrank_table(
            &SpectralShrinker::BestRankR { r: 2 },
            2,
            0.2f64,
            1.0,
            0.4,
            2,
            40,
            40,
            7,
        )
        .unwrap();
        assert_eq!(table.eval(0.6), again.eval(0.6));
    }

    #[test]
    fn spectral_measure_sample_is_normalized_and_sorted() {
        let sample = sample_spectral_measure::<f64>(3, 48, 40, 0.5, 11).unwrap();
        assert_eq!(sample.len(), 40);
        assert!(sample.windows(2).all(|w| w[0] >= w[1]));
        assert!(sample.iter().all(|&s| s >= 0.0));
        // The rank-3 signal pokes above the noise bulk edge (≈ 2 at β ≈ 1).
        assert!(sample[0] > 2.0, "top normalized singular value {}", sample[0]);
    }

    #[test]
    fn phi_analytic_rejects_the_identity_shrinker() {
        let measure = sample_spectral_measure::<f64>(2, 32, 32, 0.5, 13).unwrap();
        let err =
            phi_lowrank_analytic(0.5, &SpectralShrinker::Svst { omega: 0.0 }, &measure, 1.0)
                .unwrap_err();
        assert!(matches!(err, CrpcaError::DegenerateExtrinsic(_)));
    }

    #[test]
    fn asymptotic_mse_matches_the_two_degenerate_shrinkers() {
        let (n1, n2, v) = (128usize, 128usize, 0.5f64);
        let measure = sample_spectral_measure::<f64>(6, n1, n2, v, 17).unwrap();
        // f = identity: MSE = v exactly (E[(f−σ)²] = 0, g ≡ 1, H ≡ 1).
        let id = mse_lowrank_asymptotic(v, &SpectralShrinker::Svst { omega: 0.0 }, &measure, 1.0)
            .unwrap();
        assert_abs_diff_eq!(id, v, epsilon = 1e-12);
        // f ≡ 0: MSE ≈ signal power ‖L‖²/n = 1.
        let zero =
            mse_lowrank_asymptotic(v, &SpectralShrinker::Svst { omega: 1e6 }, &measure, 1.0)
                .unwrap();
        assert!((zero - 1.0).abs() < 0.1, "zero-shrinker MSE {zero}");
    }

    #[test]
    fn asymptotic_mse_scales_linearly_in_v_for_a_fixed_spectrum() {
        let measure = sample_spectral_measure::<f64>(4, 64, 64, 0.3, 19).unwrap();
        let shrinker = SpectralShrinker::BestRankR { r: 4 };
        let at1 = mse_lowrank_asymptotic(0.3, &shrinker, &measure, 1.0).unwrap();
        let at2 = mse_lowrank_asymptotic(0.6, &shrinker, &measure, 1.0).unwrap();
        assert_abs_diff_eq!(at2, 2.0 * at1, epsilon = 1e-12 * at1.abs());
    }

    #[test]
    fn stieltjes_matches_the_marchenko_pastur_golden_value() {
        // Point mass at 0, β = 1, v = 1: m(z) solves m²z + mz + 1 = 0, so
        // m(−1) = (√5 − 1)/2.
        let z = Complex::new(-1.0f64, 1e-6);
        let m = stieltjes_fixed_point(z, &[0.0], 1.0, 1.0, 0.5, 1e-12).unwrap();
        assert_abs_diff_eq!(m.re, (5.0f64.sqrt() - 1.0) / 2.0, epsilon = 1e-4);
    }

    #[test]
    fn stieltjes_is_herglotz_and_recovers_the_resolvent_at_zero_noise() {
        let sample = vec![0.5f64, 1.0, 2.0, 4.0];
        let z = Complex::new(-1.0f64, 0.5);
        let m = stieltjes_fixed_point(z, &sample, 0.0, 0.8, 0.5, 1e-13).unwrap();
        assert!(m.im > 0.0);
        // v = 0: plain resolvent mean 1/(t − z).
        let want: Complex<f64> =
            sample.iter().map(|&t| (Complex::new(t, 0.0) - z).inv()).sum::<Complex<f64>>() / 4.0;
        assert!((m - want).norm() < 1e-10);
    }

    #[test]
    fn stieltjes_validates_its_arguments() {
        let sample = [1.0f64];
        assert!(stieltjes_fixed_point(Complex::new(-1.0, -0.1), &sample, 1.0, 1.0, 0.5, 1e-10)
            .is_err());
        assert!(stieltjes_fixed_point(Complex::new(-1.0, 0.1), &[], 1.0, 1.0, 0.5, 1e-10).is_err());
        assert!(
            stieltjes_fixed_point(Complex::new(-1.0, 0.1), &sample, 1.0, 1.0, 0.0, 1e-10).is_err()
        );
    }

    #[test]
    fn se_iteration_tracks_the_hand_computed_affine_recursion() {
        let psi = TransferFunction::Affine { slope: 1.5f64, intercept: 0.0 };
        let varphi = TransferFunction::Affine { slope: 0.2, intercept: 0.0 };
        let phi = TransferFunction::Affine { slope: 0.1, intercept: 0.0 };
        let states = se_iterate(SEState { tau_s: 1.0, tau_l: 1.0 }, &psi, &varphi, &phi, 2);
        // Step 1: τ_X = 1.5·2 = 3; τ_S = 0.2·(3+1) = 0.8; τ_L = 0.1·(3+1) = 0.4.
        assert_abs_diff_eq!(states[1].tau_s, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(states[1].tau_l, 0.4, epsilon = 1e-15);
        // Step 2: τ_X = 1.5·1.2 = 1.8; τ_S = 0.2·2.2 = 0.44; τ_L = 0.1·2.6 = 0.26.
        assert_abs_diff_eq!(states[2].tau_s, 0.44, epsilon = 1e-15);
        assert_abs_diff_eq!(states[2].tau_l, 0.26, epsilon = 1e-15);
        assert_eq!(states.len(), 3);
    }

    #[test]
    fn se_origin_is_a_fixed_point_without_noise() {
        let psi = TransferFunction::psi_orthonormal(0.4f64, 0.0).unwrap();
        let varphi =
            TransferFunction::SparseMmse { prior: SparsePrior::unit_power(0.05).unwrap() };
        let phi = TransferFunction::Table(
            TransferTable::new(vec![0.5, 1.0], vec![0.1, 0.3]).unwrap(),
        );
        let states =
            se_iterate(SEState { tau_s: 0.0, tau_l: 0.0 }, &psi, &varphi, &phi, 4);
        for st in states {
            assert_eq!((st.tau_s, st.tau_l), (0.0, 0.0));
        }
    }

    #[test]
    fn csv_writers_emit_the_pinned_headers() {
        let states = vec![SEState { tau_s: 1.0f64, tau_l: 2.0 }];
        let mut buf = Vec::new();
        write_se_csv(&states, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,tau_S,tau_L\n0,1,2"));

        let table = TransferTable::new(vec![1.0f64, 2.0], vec![3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("v,phi_v\n1,3"));
    }
}

//! Convergence-threshold analysis of the state-evolution recursion.
//!
//! For a sampling ratio α, the recursion with the noiseless orthonormal-row
//! ψ contracts or stalls depending on how α compares against three sufficient
//! thresholds and one necessary one:
//!
//! * `α₁`/`α₂` — slope conditions on the sparse/low-rank transfer alone:
//!   `sup_v f′(v)/(f′(v) + 1)`;
//! * `α₃` — a joint condition built from the per-module fixed-point maps Ψ₁
//!   and Ψ₂: the smallest α for which `x ≥ Ψ₁(Ψ₂(x, α), α)` on the whole
//!   reachable range;
//! * `α_nec` — a converse: below `sup_x (φ̄(x) + φ(x))/(φ̄(x) + φ(x) + x)`
//!   the recursion provably cannot reach zero.
//!
//! α above all three sufficient thresholds guarantees convergence; α at or
//! below the necessary one guarantees failure; in between the analysis is
//! silent.

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrpcaError, Result};
use crate::scalar::Scalar;
use crate::se::TransferFunction;

/// Width of the moving-average window applied to tabulated transfers before
/// differentiating (Monte Carlo tables are noisy; closed forms are not).
const TABLE_SMOOTHING_WINDOW: usize = 5;
/// Sign-scan resolution for the Ψ fixed-point bracket.
const PSI_SCAN_POINTS: usize = 32;
/// Absolute bisection tolerance for a Ψ fixed point.
const PSI_TOL: f64 = 1e-12;
/// Bisection tolerance for the α₃ search.
const ALPHA3_TOL: f64 = 1e-3;
/// The α₃ feasibility check samples at most this many grid abscissae.
const ALPHA3_MAX_ABSCISSAE: usize = 64;

/// Logarithmically spaced evaluation grid for the threshold suprema.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogGrid<T> {
    pub lo: T,
    pub hi: T,
    pub points: usize,
}

impl<T: Scalar> LogGrid<T> {
    pub fn new(lo: T, hi: T, points: usize) -> Result<Self> {
        if !(lo > T::zero() && hi > lo) || points < 8 {
            return Err(CrpcaError::InvalidParameter {
                name: "grid",
                reason: format!("need 0 < lo < hi and ≥ 8 points, got [{lo}, {hi}] × {points}"),
            });
        }
        Ok(LogGrid { lo, hi, points })
    }

    pub fn abscissae(&self) -> Vec<T> {
        let n = self.points;
        let ratio = self.hi / self.lo;
        (0..n)
            .map(|i| {
                let t = T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap();
                self.lo * Float::powf(ratio, t)
            })
            .collect()
    }
}

/// `sup_v f′(v)/(f′(v) + 1)` by central differences on the log grid, the
/// derivative clamped at zero. Tabulated transfers are smoothed first.
pub fn alpha_from_derivative<T: Scalar>(
    transfer: &TransferFunction<T>,
    grid: &LogGrid<T>,
) -> Result<T> {
    let xs = grid.abscissae();
    let mut ys: Vec<T> = xs.par_iter().map(|&x| transfer.eval(x)).collect();
    if transfer.is_table() {
        ys = moving_average(&ys, TABLE_SMOOTHING_WINDOW);
    }
    let n = xs.len();
    let mut d_max = T::zero();
    for i in 0..n {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        let d = (ys[hi] - ys[lo]) / (xs[hi] - xs[lo]);
        if d > d_max {
            d_max = d;
        }
    }
    Ok(d_max / (d_max + T::one()))
}

fn moving_average<T: Scalar>(ys: &[T], window: usize) -> Vec<T> {
    let half = window / 2;
    let n = ys.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut acc = T::zero();
            for &y in &ys[lo..=hi] {
                acc += y;
            }
            acc / T::from_usize(hi - lo + 1).unwrap()
        })
        .collect()
}

/// The converse threshold `sup_x (φ̄(x) + φ(x))/(φ̄(x) + φ(x) + x)`.
pub fn alpha_nec<T: Scalar>(
    varphi: &TransferFunction<T>,
    phi: &TransferFunction<T>,
    grid: &LogGrid<T>,
) -> Result<T> {
    let sup = grid
        .abscissae()
        .par_iter()
        .map(|&x| {
            let total = Float::max(varphi.eval(x), T::zero()) + Float::max(phi.eval(x), T::zero());
            total / (total + x)
        })
        .reduce(|| T::zero(), Float::max);
    Ok(sup)
}

/// Solve `τ_S = φ̄((1/α − 1)·τ_S + τ_L/α)` for τ_S: the sparse branch of the
/// noiseless fixed-point system at low-rank residual τ_L. A log sign scan
/// brackets the root; exactly one bracket is accepted.
pub fn psi1_fixed_point<T: Scalar>(
    tau_l: T,
    alpha: T,
    varphi: &TransferFunction<T>,
) -> Result<T> {
    psi_fixed_point(tau_l, alpha, varphi, "psi1")
}

/// Solve `τ_L = φ((1/α − 1)·τ_L + τ_S/α)` for τ_L, the low-rank branch.
pub fn psi2_fixed_point<T: Scalar>(tau_s: T, alpha: T, phi: &TransferFunction<T>) -> Result<T> {
    psi_fixed_point(tau_s, alpha, phi, "psi2")
}

fn psi_fixed_point<T: Scalar>(
    other: T,
    alpha: T,
    transfer: &TransferFunction<T>,
    context: &'static str,
) -> Result<T> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(CrpcaError::InvalidParameter {
            name: "alpha",
            reason: format!("sampling ratio must lie in (0, 1], got {alpha}"),
        });
    }
    if other <= T::zero() {
        return Ok(T::zero()); // transfers vanish at the origin
    }
    let slope = T::one() / alpha - T::one();
    let g = |x: T| transfer.eval(slope * x + other / alpha) - x;

    let scale = transfer.eval(other / alpha);
    if !(scale > T::zero()) {
        // g(0⁺) = φ(other/α) = 0: the root sits at the origin.
        return Ok(T::zero());
    }
    let span = T::lit(1e6);
    let scan = LogGrid::new(scale / span, scale * span, PSI_SCAN_POINTS)?.abscissae();

    let mut bracket: Option<(T, T)> = None;
    let mut crossings = 0usize;
    let mut prev_x = scan[0];
    let mut prev_g = g(prev_x);
    if prev_g == T::zero() {
        return Ok(prev_x);
    }
    for &x in &scan[1..] {
        let gx = g(x);
        if gx == T::zero() {
            return Ok(x);
        }
        if (gx > T::zero()) != (prev_g > T::zero()) {
            crossings += 1;
            if bracket.is_none() {
                bracket = Some((prev_x, x));
            }
        }
        prev_x = x;
        prev_g = gx;
    }
    if crossings > 1 {
        return Err(CrpcaError::NoUniqueFixedPoint(format!(
            "{context}: {crossings} sign changes while solving at residual {other}, alpha {alpha}"
        )));
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        CrpcaError::Numerical(format!(
            "{context}: no fixed-point bracket at residual {other}, alpha {alpha}; \
             the transfer dominates the identity on the whole scan range"
        ))
    })?;

    let tol = T::lit(PSI_TOL);
    let mut g_lo = g(lo);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = T::lit(0.5) * (lo + hi);
        let g_mid = g(mid);
        if g_mid == T::zero() {
            return Ok(mid);
        }
        if (g_mid > T::zero()) == (g_lo > T::zero()) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Ok(T::lit(0.5) * (lo + hi))
}

/// The joint sufficient threshold: the smallest `α ∈ (lo, 1]` for which
/// `x ≥ Ψ₁(Ψ₂(x, α), α)` across the reachable sparse residuals
/// `x ∈ grid ∩ (0, sup φ̄]`. Returns `(1, false)` when even α = 1 fails.
pub fn alpha3<T: Scalar>(
    varphi: &TransferFunction<T>,
    phi: &TransferFunction<T>,
    lo: T,
    grid: &LogGrid<T>,
) -> Result<(T, bool)> {
    let one = T::one();
    let tol = T::lit(ALPHA3_TOL);
    if lo >= one - tol {
        return Ok((one, false));
    }

    let xs = grid.abscissae();
    let sup_varphi = xs
        .par_iter()
        .map(|&x| varphi.eval(x))
        .reduce(|| T::zero(), Float::max);
    let stride = xs.len().div_ceil(ALPHA3_MAX_ABSCISSAE);
    let candidates: Vec<T> = xs
        .iter()
        .copied()
        .step_by(stride.max(1))
        .filter(|&x| x <= sup_varphi)
        .collect();
    if candidates.is_empty() {
        return Err(CrpcaError::InvalidParameter {
            name: "grid",
            reason: "no grid abscissae fall inside the reachable sparse-residual range".into(),
        });
    }

    let holds = |alpha: T| -> bool {
        candidates.par_iter().all(|&x| {
            let tau_l = match psi2_fixed_point(x, alpha, phi) {
                Ok(t) => t,
                Err(_) => return false,
            };
            let tau_s = match psi1_fixed_point(tau_l, alpha, varphi) {
                Ok(t) => t,
                Err(_) => return false,
            };
            x + T::lit(1e-12) * (x + one) >= tau_s
        })
    };

    if !holds(one) {
        return Ok((one, false));
    }
    let (mut a_lo, mut a_hi) = (lo, one);
    while a_hi - a_lo > tol {
        let mid = T::lit(0.5) * (a_lo + a_hi);
        if holds(mid) {
            a_hi = mid;
        } else {
            a_lo = mid;
        }
    }
    Ok((a_hi, true))
}

/// The full threshold set for one `(φ̄, φ)` pair, with the grid it was
/// computed on.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceThresholds<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub alpha3: T,
    /// False when even α = 1 fails the joint condition; `alpha3` is then 1.
    pub alpha3_attained: bool,
    pub alpha_nec: T,
    pub grid_lo: T,
    pub grid_hi: T,
    pub grid_points: usize,
    /// Whether a tabulated transfer was smoothed before differentiation.
    pub table_smoothing: bool,
}

pub fn compute_thresholds<T: Scalar>(
    varphi: &TransferFunction<T>,
    phi: &TransferFunction<T>,
    grid: &LogGrid<T>,
) -> Result<ConvergenceThresholds<T>> {
    let alpha1 = alpha_from_derivative(varphi, grid)?;
    let alpha2 = alpha_from_derivative(phi, grid)?;
    let nec = alpha_nec(varphi, phi, grid)?;
    let (a3, attained) = alpha3(varphi, phi, Float::max(alpha1, alpha2), grid)?;
    Ok(ConvergenceThresholds {
        alpha1,
        alpha2,
        alpha3: a3,
        alpha3_attained: attained,
        alpha_nec: nec,
        grid_lo: grid.lo,
        grid_hi: grid.hi,
        grid_points: grid.points,
        table_smoothing: varphi.is_table() || phi.is_table(),
    })
}

/// Verdict for one sampling ratio against a threshold set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLabel {
    Guaranteed,
    Indeterminate,
    Impossible,
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegionLabel::Guaranteed => "guaranteed",
            RegionLabel::Indeterminate => "indeterminate",
            RegionLabel::Impossible => "impossible",
        })
    }
}

pub fn classify<T: Scalar>(alpha: T, thresholds: &ConvergenceThresholds<T>) -> RegionLabel {
    let sufficient = Float::max(
        Float::max(thresholds.alpha1, thresholds.alpha2),
        thresholds.alpha3,
    );
    if thresholds.alpha3_attained && alpha > sufficient {
        RegionLabel::Guaranteed
    } else if alpha <= thresholds.alpha_nec {
        RegionLabel::Impossible
    } else {
        RegionLabel::Indeterminate
    }
}

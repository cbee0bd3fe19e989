//! Scalar quadrature: Gauss–Legendre rules and adaptive Simpson.
//!
//! Two consumers with different needs share this module. The smoothed
//! spectral shrinker evaluates many integrals of one fixed smooth bump, so
//! it wants a reusable fixed-order rule ([`GlRule`]). The sparse-prior
//! transfer function integrates Gaussian-mixture tails to high accuracy, so
//! it wants an adaptive method with an explicit tolerance
//! ([`adaptive_simpson`]).

use num_traits::Float;

use crate::scalar::Real;

/// A Gauss–Legendre rule of fixed order on `[-1, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_n`, found by Newton
/// iteration on the three-term recurrence; weights are
/// `2 / ((1 - x²) P'_n(x)²)`. Exact for polynomials of degree `2n - 1`.
#[derive(Debug, Clone)]
pub struct GlRule<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GlRule<T> {
    pub fn new(order: usize) -> Self {
        assert!(order >= 2, "Gauss–Legendre order must be at least 2");
        let mut nodes = vec![T::zero(); order];
        let mut weights = vec![T::zero(); order];
        let n_f = T::from_usize(order).unwrap();
        let tol = T::epsilon() * T::lit(8.0);

        // Roots come in ± pairs; solve for the non-negative half and mirror.
        for i in 0..order.div_ceil(2) {
            // Tricomi's initial guess is accurate enough for Newton to
            // converge in a handful of steps at any order we use.
            let theta = std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5);
            let mut x = T::lit(theta.cos());
            let mut dp = T::one();
            for _ in 0..100 {
                // Evaluate P_n and P_{n-1} by upward recurrence.
                let mut p_prev = T::one();
                let mut p = x;
                for k in 1..order {
                    let k_f = T::from_usize(k).unwrap();
                    let p_next = ((T::lit(2.0) * k_f + T::one()) * x * p - k_f * p_prev)
                        / (k_f + T::one());
                    p_prev = p;
                    p = p_next;
                }
                dp = n_f * (x * p - p_prev) / (x * x - T::one());
                let dx = p / dp;
                x = x - dx;
                if Float::abs(dx) <= tol {
                    break;
                }
            }
            let w = T::lit(2.0) / ((T::one() - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[order - 1 - i] = x;
            weights[order - 1 - i] = w;
        }
        GlRule { nodes, weights }
    }

    /// Integrate `f` over `[a, b]` by affinely mapping the rule.
    pub fn integrate<F: Fn(T) -> T>(&self, a: T, b: T, f: F) -> T {
        let half = (b - a) * T::lit(0.5);
        let mid = (b + a) * T::lit(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Subdivisions forced before the error estimate may stop the recursion.
/// Guards against a narrow bump sliding between the first sample points and
/// masquerading as an already-converged (near-zero) integral.
const MIN_DEPTH: u32 = 6;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`, with Richardson extrapolation at each acceptance test.
///
/// Recursion depth is capped at 48; past that the current estimate is
/// accepted, which for the smooth integrands in this crate only triggers on
/// tolerances at or below rounding noise.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    let m = (a + b) * T::lit(0.5);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48, MIN_DEPTH)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: u32,
    force: u32,
) -> T {
    let m = (a + b) * T::lit(0.5);
    let lm = (a + m) * T::lit(0.5);
    let rm = (m + b) * T::lit(0.5);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || (force == 0 && Float::abs(delta) <= T::lit(15.0) * tol) {
        left + right + delta / T::lit(15.0)
    } else {
        let half_tol = tol * T::lit(0.5);
        let deeper = force.saturating_sub(1);
        simpson_step(f, a, m, fa, flm, fm, left, half_tol, depth - 1, deeper)
            + simpson_step(f, m, b, fm, frm, fb, right, half_tol, depth - 1, deeper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gl_rule_is_exact_for_polynomials_up_to_degree_2n_minus_1() {
        let rule = GlRule::<f64>::new(4);
        // Degree 7 = 2·4 - 1; ∫_{-1}^{1} x⁶ dx = 2/7, odd powers vanish.
        let got = rule.integrate(-1.0, 1.0, |x| x.powi(7) + 3.0 * x.powi(6));
        assert_abs_diff_eq!(got, 3.0 * 2.0 / 7.0, epsilon = 1e-13);
    }

    #[test]
    fn gl64_integrates_cos_to_machine_precision() {
        let rule = GlRule::<f64>::new(64);
        let got = rule.integrate(0.0, std::f64::consts::FRAC_PI_2, |x| x.cos());
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gl_rule_nodes_are_symmetric_and_weights_sum_to_two() {
        let rule = GlRule::<f64>::new(33); // odd order exercises the middle node
        let total: f64 = rule.weights.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
        for i in 0..rule.order() {
            assert_abs_diff_eq!(rule.nodes[i], -rule.nodes[rule.order() - 1 - i], epsilon = 1e-15);
        }
    }

    #[test]
    fn gl_rule_works_in_f32() {
        let rule = GlRule::<f32>::new(16);
        let got = rule.integrate(0.0f32, 1.0, |x| x * x);
        assert!((got - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn simpson_matches_exp_antiderivative() {
        let f = |x: f64| x.exp();
        let got = adaptive_simpson(&f, 0.0, 1.0, 1e-13);
        assert_abs_diff_eq!(got, std::f64::consts::E - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn simpson_captures_a_narrow_gaussian() {
        // N(0, 0.01) over [-8, 8] integrates to 1; the spike at 0 forces
        // genuine adaptivity.
        let s2 = 0.01f64;
        let f = |x: f64| (-x * x / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        let got = adaptive_simpson(&f, -8.0, 8.0, 1e-12);
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-10);
    }
}

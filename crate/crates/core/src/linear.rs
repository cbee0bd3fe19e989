//! The linear module: LMMSE estimation of `X` from `y = A·vec(X) + n`
//! given a Gaussian input message `(R, v)`, plus its extrinsic output.
//!
//! Posterior mean: `vec(X̂) = vec(R) + v·Aᵀ(v·AAᵀ + σ²I)⁻¹(y − A·vec(R))`.
//! For subsampled-orthonormal operators `AAᵀ = I` collapses the inner solve
//! to a scalar; for dense operators the solve goes through a cached SVD of
//! `A` (never a dense inverse). The extrinsic message has the closed form
//!
//! `v_ext = n/Σᵢ(σᵢ²/(v·σᵢ² + σ²)) − v`,
//!
//! which for orthonormal rows reduces to `((n−m)/m)·v + (n/m)·σ²` with
//! extrinsic mean `R + (n/m)·unvec(Aᵀ(y − A·vec(R)))`.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{CrpcaError, Result};
use crate::message::MeanVarMessage;
use crate::operators::LinearOperator;
use crate::scalar::Scalar;

/// Relative Tikhonov floor used when `σ² = 0` meets a non-orthonormal
/// operator (the inner solve would otherwise be singular for `m > rank`).
const SIGMA_REG_REL: f64 = 1e-12;
const EXT_VAR_FLOOR: f64 = 1e-12;

/// Extrinsic output of the LMMSE module.
#[derive(Debug, Clone)]
pub struct LinearExtrinsic<T> {
    pub a: T,
    pub c: T,
    pub extrinsic_mean: DMatrix<T>,
    pub extrinsic_var: T,
    pub posterior_mean: DMatrix<T>,
    pub posterior_var: T,
}

/// LMMSE solver bound to one operator. Orthonormal-row kinds need no
/// preparation; dense kinds get their SVD computed once and reused across
/// iterations.
pub struct LmmseSolver<'a, T: Scalar> {
    op: &'a LinearOperator<T>,
    svd: Option<CachedSvd<T>>,
}

struct CachedSvd<T> {
    /// Left singular vectors of `A` (m × k, k = min(m, n)).
    u: DMatrix<T>,
    /// Squared singular values, descending.
    s2: Vec<T>,
}

impl<'a, T: Scalar> LmmseSolver<'a, T> {
    pub fn new(op: &'a LinearOperator<T>) -> Result<Self> {
        let svd = if op.rows_orthonormal() {
            None
        } else {
            let matrix = op.dense_matrix().expect("non-orthonormal operators are dense");
            let svd = matrix.clone().try_svd(true, false, Float::epsilon(), 8192).ok_or(
                CrpcaError::SvdFailure { rows: matrix.nrows(), cols: matrix.ncols() },
            )?;
            Some(CachedSvd {
                u: svd.u.expect("left vectors requested"),
                s2: svd.singular_values.iter().map(|&s| s * s).collect(),
            })
        };
        Ok(LmmseSolver { op, svd })
    }

    pub fn operator(&self) -> &LinearOperator<T> {
        self.op
    }

    fn validate(&self, y: &DVector<T>, input: &MeanVarMessage<T>, sigma_n_sq: T) -> Result<T> {
        if y.len() != self.op.m() {
            return Err(CrpcaError::DimensionMismatch {
                context: "lmmse measurement length",
                expected: self.op.m().to_string(),
                got: y.len().to_string(),
            });
        }
        if input.dims() != (self.op.n1(), self.op.n2()) {
            return Err(CrpcaError::DimensionMismatch {
                context: "lmmse input message",
                expected: format!("{}x{}", self.op.n1(), self.op.n2()),
                got: format!("{}x{}", input.mean.nrows(), input.mean.ncols()),
            });
        }
        if !(sigma_n_sq >= T::zero()) || !Float::is_finite(sigma_n_sq) {
            return Err(CrpcaError::InvalidParameter {
                name: "sigma_n_sq",
                reason: format!("noise variance must be finite and ≥ 0, got {sigma_n_sq}"),
            });
        }
        if input.var <= T::zero() {
            return Err(CrpcaError::InvalidParameter {
                name: "input.var",
                reason: format!("message variance must be positive, got {}", input.var),
            });
        }
        Ok(sigma_n_sq)
    }

    /// `w = (v·AAᵀ + σ²I)⁻¹·z`.
    fn inner_solve(&self, z: &DVector<T>, v: T, sigma_sq: T) -> DVector<T> {
        match &self.svd {
            None => z.scale(T::one() / (v + sigma_sq)),
            Some(cached) => {
                // AAᵀ = U·diag(s²)·Uᵀ (+ zero on the complement of col(U)).
                let mut w = cached.u.tr_mul(z);
                let m = self.op.m();
                let k = cached.s2.len();
                if k == m {
                    // U is square: the decomposition is complete.
                    for (i, &s2) in cached.s2.iter().enumerate() {
                        w[i] /= v * s2 + sigma_sq;
                    }
                    &cached.u * w
                } else {
                    // m > n: handle the orthogonal complement through σ²,
                    // folding it in as a rank-k correction to z/σ².
                    for (i, &s2) in cached.s2.iter().enumerate() {
                        w[i] = w[i] * (T::one() / (v * s2 + sigma_sq) - T::one() / sigma_sq);
                    }
                    (&cached.u * w) + z.scale(T::one() / sigma_sq)
                }
            }
        }
    }

    /// Effective noise variance: regularized away from exact zero for
    /// non-orthonormal operators.
    fn effective_sigma_sq(&self, sigma_n_sq: T, v: T) -> T {
        if sigma_n_sq == T::zero() && !self.op.rows_orthonormal() {
            T::lit(SIGMA_REG_REL) * v
        } else {
            sigma_n_sq
        }
    }

    /// `Σᵢ σᵢ²/(v·σᵢ² + σ²)` over the operator spectrum.
    fn spectrum_sum(&self, v: T, sigma_sq: T) -> T {
        match &self.svd {
            None => T::from_usize(self.op.m()).unwrap() / (v + sigma_sq),
            Some(cached) => {
                cached.s2.iter().map(|&s2| s2 / (v * s2 + sigma_sq)).sum()
            }
        }
    }

    /// Posterior mean only.
    pub fn posterior(
        &self,
        y: &DVector<T>,
        input: &MeanVarMessage<T>,
        sigma_n_sq: T,
    ) -> Result<DMatrix<T>> {
        let sigma_sq = self.validate(y, input, sigma_n_sq)?;
        let v = input.var;
        let sigma_eff = self.effective_sigma_sq(sigma_sq, v);
        let residual = y - self.op.apply(&input.mean)?;
        let w = self.inner_solve(&residual, v, sigma_eff);
        let back = self.op.apply_adjoint(&w)?;
        Ok(&input.mean + back.scale(v))
    }

    /// Full extrinsic output. Dispatches to the closed orthonormal form when
    /// the operator's rows are orthonormal, the general spectrum form
    /// otherwise; the two coincide on all-ones spectra.
    pub fn extrinsic(
        &self,
        y: &DVector<T>,
        input: &MeanVarMessage<T>,
        sigma_n_sq: T,
    ) -> Result<LinearExtrinsic<T>> {
        let sigma_sq = self.validate(y, input, sigma_n_sq)?;
        let v = input.var;
        let sigma_eff = self.effective_sigma_sq(sigma_sq, v);
        let n = T::from_usize(self.op.n()).unwrap();

        let residual = y - self.op.apply(&input.mean)?;
        let w = self.inner_solve(&residual, v, sigma_eff);
        let back = self.op.apply_adjoint(&w)?;
        let posterior_mean = &input.mean + back.scale(v);

        let spectrum_sum = self.spectrum_sum(v, sigma_eff);
        if !(spectrum_sum > T::zero()) {
            return Err(CrpcaError::Numerical(
                "LMMSE spectrum sum vanished; operator spectrum degenerate".into(),
            ));
        }
        let posterior_var = v - v * v * spectrum_sum / n;
        let a = posterior_var / v;
        let c = n / (v * spectrum_sum);
        let extrinsic_var = Float::max(n / spectrum_sum - v, T::lit(EXT_VAR_FLOOR));
        // c·(post − a·in) = R + c·v·unvec(Aᵀw), since c·(1−a) = 1.
        let extrinsic_mean = &input.mean + back.scale(c * v);

        Ok(LinearExtrinsic { a, c, extrinsic_mean, extrinsic_var, posterior_mean, posterior_var })
    }
}

/// One-shot LMMSE posterior mean (builds a throwaway solver; iterative
/// callers should hold an [`LmmseSolver`]).
pub fn lmmse_posterior<T: Scalar>(
    op: &LinearOperator<T>,
    y: &DVector<T>,
    input: &MeanVarMessage<T>,
    sigma_n_sq: T,
) -> Result<DMatrix<T>> {
    LmmseSolver::new(op)?.posterior(y, input, sigma_n_sq)
}

/// One-shot extrinsic output through the general spectrum path.
pub fn lmmse_extrinsic_general<T: Scalar>(
    op: &LinearOperator<T>,
    y: &DVector<T>,
    input: &MeanVarMessage<T>,
    sigma_n_sq: T,
) -> Result<LinearExtrinsic<T>> {
    LmmseSolver::new(op)?.extrinsic(y, input, sigma_n_sq)
}

/// Closed-form extrinsic output for operators with orthonormal rows:
/// `v_ext = ((n−m)/m)·v + (n/m)·σ²`, mean `R + (n/m)·unvec(Aᵀ(y − A·vec R))`.
pub fn lmmse_extrinsic_partial_orthonormal<T: Scalar>(
    op: &LinearOperator<T>,
    y: &DVector<T>,
    input: &MeanVarMessage<T>,
    sigma_n_sq: T,
) -> Result<LinearExtrinsic<T>> {
    if !op.rows_orthonormal() {
        return Err(CrpcaError::InvalidParameter {
            name: "op",
            reason: format!("{:?} does not have orthonormal rows", op.kind()),
        });
    }
    let solver = LmmseSolver::new(op)?;
    let sigma_sq = solver.validate(y, input, sigma_n_sq)?;
    let v = input.var;
    let n = T::from_usize(op.n()).unwrap();
    let m = T::from_usize(op.m()).unwrap();

    let residual = y - op.apply(&input.mean)?;
    let back = op.apply_adjoint(&residual)?;
    let extrinsic_mean = &input.mean + back.scale(n / m);
    let extrinsic_var = Float::max(
        (n - m) / m * v + n / m * sigma_sq,
        T::lit(EXT_VAR_FLOOR),
    );
    let posterior_mean = &input.mean + back.scale(v / (v + sigma_sq));
    let posterior_var = v - m / n * v * v / (v + sigma_sq);
    let a = posterior_var / v;
    let c = v / (v - posterior_var);
    Ok(LinearExtrinsic { a, c, extrinsic_mean, extrinsic_var, posterior_mean, posterior_var })
}

//! Orthonormal 1-D DCT-II wrapper.
//!
//! `rustdct` computes the unnormalized cosine transforms; the measurement
//! model needs the *orthonormal* DCT matrix `W` (rows `W[k][i] = s_k·
//! cos(πk(2i+1)/(2N))`, `s_0 = √(1/N)`, `s_k = √(2/N)`), so that `W Wᵀ = I`
//! and the adjoint is the inverse. This wrapper owns the plan and applies
//! the scaling; [`dense_dct_matrix`] materializes `W` for small-size oracle
//! checks.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_traits::Float;
use rustdct::{DctPlanner, TransformType2And3};

use crate::scalar::Scalar;

/// A planned orthonormal DCT-II of fixed length and its adjoint (= inverse).
#[derive(Clone)]
pub struct OrthonormalDct<T> {
    len: usize,
    plan: Arc<dyn TransformType2And3<T>>,
    s0: T,
    sk: T,
}

impl<T> std::fmt::Debug for OrthonormalDct<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrthonormalDct").field("len", &self.len).finish()
    }
}

impl<T: Scalar> OrthonormalDct<T> {
    pub fn new(len: usize) -> Self {
        assert!(len >= 2, "DCT length must be at least 2");
        let plan = DctPlanner::new().plan_dct2(len);
        let n = T::from_usize(len).unwrap();
        OrthonormalDct {
            len,
            plan,
            s0: Float::sqrt(T::one() / n),
            sk: Float::sqrt(T::lit(2.0) / n),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward transform: `buf ← W·buf`.
    pub fn forward(&self, buf: &mut [T]) {
        debug_assert_eq!(buf.len(), self.len);
        self.plan.process_dct2(buf);
        buf[0] *= self.s0;
        for x in &mut buf[1..] {
            *x *= self.sk;
        }
    }

    /// In-place adjoint (inverse) transform: `buf ← Wᵀ·buf`.
    ///
    /// Uses the DCT-III identity `Wᵀy = C3(z)` with `z_0 = 2·s_0·y_0`,
    /// `z_k = s_k·y_k`, which absorbs rustdct's `z_0/2` convention.
    pub fn adjoint(&self, buf: &mut [T]) {
        debug_assert_eq!(buf.len(), self.len);
        buf[0] *= self.s0 * T::lit(2.0);
        for x in &mut buf[1..] {
            *x *= self.sk;
        }
        self.plan.process_dct3(buf);
    }
}

/// The orthonormal DCT-II matrix `W` as a dense matrix (row `k` = frequency
/// `k`). O(n²) memory: test oracle and small-problem material only.
pub fn dense_dct_matrix<T: Scalar>(n: usize) -> DMatrix<T> {
    let s0 = Float::sqrt(T::one() / T::from_usize(n).unwrap());
    let sk = Float::sqrt(T::lit(2.0) / T::from_usize(n).unwrap());
    DMatrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 { s0 } else { sk };
        let angle = std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n as f64);
        scale * T::lit(angle.cos())
    })
}

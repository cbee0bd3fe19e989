//! Measurement operators: partial DCT, partial Haar, and i.i.d. Gaussian.
//!
//! All three expose the same surface — forward `A·vec(X)`, adjoint
//! `unvec(Aᵀy)`, and the singular spectrum of `A` that the LMMSE formulas
//! consume. Vectorization is column-stacking throughout the crate, which is
//! exactly `nalgebra`'s column-major storage, so `vec(X)` is `X.as_slice()`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dct::OrthonormalDct;
use crate::error::{CrpcaError, Result};
use crate::scalar::Scalar;
use crate::seeding::{mix2, rng_from};

/// Cap on dense payload entries (`n·n` for Haar, `m·n` for Gaussian):
/// 2²⁴ entries = 128 MiB in f64. Construction fails above it rather than
/// letting a typo'd dimension eat the machine.
pub const DENSE_ENTRY_CAP: usize = 1 << 24;

// Seed-stream labels, so selection and payload draws never alias.
const STREAM_SELECTION: u64 = 0x5e1;
const STREAM_PAYLOAD: u64 = 0xde4;

/// Which measurement ensemble an operator was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    PartialDct,
    PartialHaar,
    Gaussian,
}

/// The JSON-serializable identity of an operator; the payload regenerates
/// from the seed, it is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub kind: OperatorKind,
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug)]
enum OperatorBody<T> {
    /// `A = P·W` with `W` the n×n orthonormal DCT-II and `P` a row
    /// selection; applied via the fast transform, never materialized.
    PartialDct {
        selection: Vec<usize>,
        dct: OrthonormalDct<T>,
    },
    /// Dense `m×n` matrix; `rows_orthonormal` records `A·Aᵀ = I` (Haar).
    Dense {
        matrix: DMatrix<T>,
        rows_orthonormal: bool,
    },
}

/// An immutable measurement map `A: n₁×n₂ matrices → ℝ^m`.
///
/// Construction is deterministic in `(kind, n1, n2, m, seed)`; application
/// is re-entrant, so operators can be shared across threads freely.
#[derive(Debug)]
pub struct LinearOperator<T> {
    desc: OperatorDescriptor,
    body: OperatorBody<T>,
    spectrum: OnceLock<Vec<T>>,
}

impl<T: Scalar> LinearOperator<T> {
    /// `A = P·W`, `W` the orthonormal type-II DCT of length `n = n1·n2`,
    /// `P` a uniform row selection without repetition (Fisher–Yates).
    pub fn make_partial_dct(n1: usize, n2: usize, m: usize, seed: u64) -> Result<Self> {
        let desc = OperatorDescriptor { kind: OperatorKind::PartialDct, n1, n2, m, seed };
        validate_dims(&desc)?;
        let n = n1 * n2;
        let mut rng = rng_from(mix2(seed, STREAM_SELECTION));
        let selection = sample_distinct(n, m, &mut rng);
        Ok(LinearOperator {
            desc,
            body: OperatorBody::PartialDct { selection, dct: OrthonormalDct::new(n) },
            spectrum: OnceLock::new(),
        })
    }

    /// `m` rows of a Haar-distributed `n×n` orthogonal matrix, realized as
    /// the transposed thin-QR factor of an `n×m` standard Gaussian draw
    /// (same law as selecting rows of a full Haar matrix), with the usual
    /// sign fix on the R diagonal.
    pub fn make_partial_haar(n1: usize, n2: usize, m: usize, seed: u64) -> Result<Self> {
        let desc = OperatorDescriptor { kind: OperatorKind::PartialHaar, n1, n2, m, seed };
        validate_dims(&desc)?;
        let n = n1 * n2;
        guard_dense_entries(n, m)?;
        let mut rng = rng_from(mix2(seed, STREAM_PAYLOAD));
        let g = DMatrix::from_fn(n, m, |_, _| T::standard_normal(&mut rng));
        let qr = g.qr();
        let r_diag: Vec<T> = (0..m).map(|j| qr.r()[(j, j)]).collect();
        let mut q = qr.q();
        for (j, &d) in r_diag.iter().enumerate() {
            if d < T::zero() {
                for i in 0..n {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        Ok(LinearOperator {
            desc,
            body: OperatorBody::Dense { matrix: q.transpose(), rows_orthonormal: true },
            spectrum: OnceLock::new(),
        })
    }

    /// Dense `m×n` matrix with i.i.d. `N(0, 1/n)` entries. The singular
    /// spectrum is computed once by SVD on first request and cached.
    pub fn make_gaussian(n1: usize, n2: usize, m: usize, seed: u64) -> Result<Self> {
        let desc = OperatorDescriptor { kind: OperatorKind::Gaussian, n1, n2, m, seed };
        validate_dims(&desc)?;
        let n = n1 * n2;
        guard_dense_entries(m, n)?;
        let mut rng = rng_from(mix2(seed, STREAM_PAYLOAD));
        let scale = Float::sqrt(T::one() / T::from_usize(n).unwrap());
        let matrix = DMatrix::from_fn(m, n, |_, _| scale * T::standard_normal(&mut rng));
        Ok(LinearOperator {
            desc,
            body: OperatorBody::Dense { matrix, rows_orthonormal: false },
            spectrum: OnceLock::new(),
        })
    }

    pub fn from_descriptor(desc: &OperatorDescriptor) -> Result<Self> {
        match desc.kind {
            OperatorKind::PartialDct => {
                Self::make_partial_dct(desc.n1, desc.n2, desc.m, desc.seed)
            }
            OperatorKind::PartialHaar => {
                Self::make_partial_haar(desc.n1, desc.n2, desc.m, desc.seed)
            }
            OperatorKind::Gaussian => Self::make_gaussian(desc.n1, desc.n2, desc.m, desc.seed),
        }
    }

    pub fn descriptor(&self) -> &OperatorDescriptor {
        &self.desc
    }

    pub fn kind(&self) -> OperatorKind {
        self.desc.kind
    }

    /// Ambient dimension `n = n1·n2`.
    pub fn n(&self) -> usize {
        self.desc.n1 * self.desc.n2
    }

    pub fn m(&self) -> usize {
        self.desc.m
    }

    pub fn n1(&self) -> usize {
        self.desc.n1
    }

    pub fn n2(&self) -> usize {
        self.desc.n2
    }

    /// Sampling ratio `α = m/n`.
    pub fn alpha(&self) -> f64 {
        self.desc.m as f64 / self.n() as f64
    }

    /// True when `A·Aᵀ = I_m` by construction (partial DCT / partial Haar).
    pub fn rows_orthonormal(&self) -> bool {
        !matches!(self.desc.kind, OperatorKind::Gaussian)
    }

    /// The explicit matrix for dense kinds (the LMMSE solver caches its SVD).
    pub(crate) fn dense_matrix(&self) -> Option<&DMatrix<T>> {
        match &self.body {
            OperatorBody::Dense { matrix, .. } => Some(matrix),
            OperatorBody::PartialDct { .. } => None,
        }
    }

    /// `y = A·vec(X)`.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        self.check_matrix_shape("apply", x)?;
        match &self.body {
            OperatorBody::PartialDct { selection, dct } => {
                let mut buf = x.as_slice().to_vec();
                dct.forward(&mut buf);
                Ok(DVector::from_iterator(self.desc.m, selection.iter().map(|&i| buf[i])))
            }
            OperatorBody::Dense { matrix, .. } => {
                let vec_x = DVector::from_column_slice(x.as_slice());
                Ok(matrix * vec_x)
            }
        }
    }

    /// `unvec(Aᵀ·y)`.
    pub fn apply_adjoint(&self, y: &DVector<T>) -> Result<DMatrix<T>> {
        if y.len() != self.desc.m {
            return Err(CrpcaError::DimensionMismatch {
                context: "operator apply_adjoint",
                expected: format!("measurement vector of length {}", self.desc.m),
                got: format!("length {}", y.len()),
            });
        }
        match &self.body {
            OperatorBody::PartialDct { selection, dct } => {
                let mut buf = vec![T::zero(); self.n()];
                for (row, &idx) in selection.iter().enumerate() {
                    buf[idx] = y[row];
                }
                dct.adjoint(&mut buf);
                Ok(DMatrix::from_column_slice(self.desc.n1, self.desc.n2, &buf))
            }
            OperatorBody::Dense { matrix, .. } => {
                let vec_x = matrix.tr_mul(y);
                Ok(DMatrix::from_column_slice(self.desc.n1, self.desc.n2, vec_x.as_slice()))
            }
        }
    }

    /// Singular values of `A` (length `m`, descending). All-ones for the
    /// subsampled-orthonormal kinds; an SVD computed once for Gaussian.
    pub fn singular_values(&self) -> &[T] {
        self.spectrum.get_or_init(|| match &self.body {
            OperatorBody::PartialDct { .. } => vec![T::one(); self.desc.m],
            OperatorBody::Dense { rows_orthonormal: true, .. } => vec![T::one(); self.desc.m],
            OperatorBody::Dense { matrix, .. } => {
                matrix.clone().svd(false, false).singular_values.iter().copied().collect()
            }
        })
    }

    fn check_matrix_shape(&self, context: &'static str, x: &DMatrix<T>) -> Result<()> {
        if x.nrows() != self.desc.n1 || x.ncols() != self.desc.n2 {
            return Err(CrpcaError::DimensionMismatch {
                context: match context {
                    "apply" => "operator apply",
                    _ => "operator",
                },
                expected: format!("{}x{}", self.desc.n1, self.desc.n2),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }
}

fn validate_dims(desc: &OperatorDescriptor) -> Result<()> {
    let n = desc.n1.checked_mul(desc.n2).ok_or_else(|| CrpcaError::InvalidParameter {
        name: "n1*n2",
        reason: "dimension product overflows".into(),
    })?;
    if desc.n1 == 0 || desc.n2 == 0 || n < 2 {
        return Err(CrpcaError::InvalidParameter {
            name: "n1/n2",
            reason: format!("ambient dimension must be at least 2, got {}x{}", desc.n1, desc.n2),
        });
    }
    if desc.m == 0 {
        return Err(CrpcaError::InvalidParameter {
            name: "m",
            reason: "measurement count must be positive".into(),
        });
    }
    // Row selection / thin-QR makes m ≤ n structural for the orthonormal
    // kinds. A dense Gaussian draw can be over-determined (m > n), which the
    // linear solver supports through its complement branch.
    if desc.m > n && desc.kind != OperatorKind::Gaussian {
        return Err(CrpcaError::InvalidParameter {
            name: "m",
            reason: format!(
                "{:?} operators select at most n = {n} rows, got m = {}",
                desc.kind, desc.m
            ),
        });
    }
    Ok(())
}

fn guard_dense_entries(rows: usize, cols: usize) -> Result<()> {
    let entries = rows.checked_mul(cols).unwrap_or(usize::MAX);
    if entries > DENSE_ENTRY_CAP {
        return Err(CrpcaError::InvalidParameter {
            name: "n",
            reason: format!(
                "dense payload of {entries} entries exceeds the cap of {DENSE_ENTRY_CAP}; \
                 use partial-dct for large problems"
            ),
        });
    }
    Ok(())
}

/// First `m` entries of a Fisher–Yates shuffle of `0..n`: a uniform sample
/// of `m` distinct indices.
fn sample_distinct<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::dense_dct_matrix;
    use crate::scalar::Real;

    fn random_matrix(n1: usize, n2: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        DMatrix::from_fn(n1, n2, |_, _| f64::standard_normal(&mut rng))
    }

    fn random_vector(m: usize, seed: u64) -> DVector<f64> {
        let mut rng = rng_from(seed);
        DVector::from_fn(m, |_, _| f64::standard_normal(&mut rng))
    }

    fn all_kinds(n1: usize, n2: usize, m: usize, seed: u64) -> Vec<LinearOperator<f64>> {
        vec![
            LinearOperator::make_partial_dct(n1, n2, m, seed).unwrap(),
            LinearOperator::make_partial_haar(n1, n2, m, seed).unwrap(),
            LinearOperator::make_gaussian(n1, n2, m, seed).unwrap(),
        ]
    }

    #[test]
    fn adjoint_identity_holds_for_every_kind() {
        for op in all_kinds(12, 9, 40, 77) {
            let x = random_matrix(12, 9, 1);
            let y = random_vector(40, 2);
            let lhs = op.apply(&x).unwrap().dot(&y);
            let rhs = (x.transpose() * op.apply_adjoint(&y).unwrap()).trace();
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "{:?}: <Ax,y> = {lhs} vs <x,Aty> = {rhs}",
                op.kind()
            );
        }
    }

    #[test]
    fn full_dct_round_trips() {
        let op = LinearOperator::<f64>::make_partial_dct(8, 8, 64, 3).unwrap();
        let x = random_matrix(8, 8, 4);
        let back = op.apply_adjoint(&op.apply(&x).unwrap()).unwrap();
        assert!((&back - &x).norm() < 1e-10);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        for op in all_kinds(6, 7, 11, 5) {
            let y = op.apply(&DMatrix::zeros(6, 7)).unwrap();
            assert_eq!(y.norm(), 0.0);
        }
    }

    #[test]
    fn orthonormal_kinds_satisfy_a_at_identity() {
        for op in all_kinds(10, 10, 37, 11).into_iter().take(2) {
            let y = random_vector(37, 6);
            // A·Aᵀ·y = y when rows are orthonormal.
            let back = op.apply(&op.apply_adjoint(&y).unwrap()).unwrap();
            assert!((&back - &y).norm() < 1e-10, "{:?}", op.kind());
            assert!(op.rows_orthonormal());
            assert!(op.singular_values().iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn projection_is_non_expansive() {
        for op in all_kinds(9, 11, 30, 13).into_iter().take(2) {
            let x = random_matrix(9, 11, 7);
            let back = op.apply_adjoint(&op.apply(&x).unwrap()).unwrap();
            assert!(back.norm() <= x.norm() + 1e-12);
        }
    }

    #[test]
    fn partial_dct_energy_capture_matches_sampling_ratio() {
        // n = 4096 = 64², m = 1638 ⇒ α ≈ 0.4. Orthonormal rows capture an
        // α-fraction of the energy of an isotropic input on average.
        let op = LinearOperator::<f64>::make_partial_dct(64, 64, 1638, 21).unwrap();
        let trials = 100;
        let mut ratio_sum = 0.0;
        for t in 0..trials {
            let x = random_matrix(64, 64, 1000 + t);
            let y = op.apply(&x).unwrap();
            ratio_sum += y.norm_squared() / x.norm_squared();
        }
        let mean_ratio = ratio_sum / trials as f64;
        assert!((mean_ratio - 0.4).abs() < 0.02, "mean energy ratio {mean_ratio}");
    }

    #[test]
    fn partial_dct_rows_come_from_the_dense_dct() {
        let (n1, n2, m) = (4, 4, 7);
        let op = LinearOperator::<f64>::make_partial_dct(n1, n2, m, 9).unwrap();
        let w = dense_dct_matrix::<f64>(n1 * n2);
        // X = unvec(e₁) isolates W's first column at the selected rows.
        let mut x = DMatrix::zeros(n1, n2);
        x[(0, 0)] = 1.0;
        let y = op.apply(&x).unwrap();
        let OperatorBody::PartialDct { selection, .. } = &op.body else {
            panic!("wrong body");
        };
        for (row, &idx) in selection.iter().enumerate() {
            assert!((y[row] - w[(idx, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_frobenius_energy_matches_expectation() {
        // E‖A‖²_F = m·n·(1/n) = m.
        let op = LinearOperator::<f64>::make_gaussian(64, 64, 1638, 17).unwrap();
        let OperatorBody::Dense { matrix, .. } = &op.body else { panic!("wrong body") };
        let fro2 = matrix.norm_squared();
        assert!((fro2 - 1638.0).abs() < 0.05 * 1638.0, "‖A‖²_F = {fro2}");
    }

    #[test]
    fn gaussian_spectrum_reaches_the_marchenko_pastur_edge() {
        // Square case m = n = 256: top singular value ≈ (1 + √1) = 2.
        let op = LinearOperator::<f64>::make_gaussian(16, 16, 256, 23).unwrap();
        let top = op.singular_values()[0];
        assert!((top - 2.0).abs() < 0.2, "σ₁ = {top}");
        assert!(op.singular_values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn construction_is_deterministic_and_descriptor_round_trips() {
        for kind_idx in 0..3 {
            let a = &all_kinds(5, 8, 13, 99)[kind_idx];
            let json = serde_json::to_string(a.descriptor()).unwrap();
            let desc: OperatorDescriptor = serde_json::from_str(&json).unwrap();
            let b = LinearOperator::<f64>::from_descriptor(&desc).unwrap();
            let x = random_matrix(5, 8, 3);
            assert_eq!(a.apply(&x).unwrap(), b.apply(&x).unwrap());
        }
    }

    #[test]
    fn descriptor_json_uses_kebab_case_kinds() {
        let desc = OperatorDescriptor {
            kind: OperatorKind::PartialDct,
            n1: 2,
            n2: 3,
            m: 4,
            seed: 5,
        };
        let json = serde_json::to_string(&desc).unwrap();
        assert!(json.contains("\"partial-dct\""), "{json}");
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(LinearOperator::<f64>::make_partial_dct(4, 4, 17, 0).is_err());
        assert!(LinearOperator::<f64>::make_partial_dct(4, 4, 0, 0).is_err());
        assert!(LinearOperator::<f64>::make_gaussian(0, 4, 1, 0).is_err());
        // OOM guard: 6000² haar payload would be 36M entries > cap.
        assert!(LinearOperator::<f64>::make_partial_haar(6000, 6000, 10, 0).is_err());
    }

    #[test]
    fn apply_rejects_wrong_shapes() {
        let op = LinearOperator::<f64>::make_partial_dct(4, 5, 7, 1).unwrap();
        assert!(op.apply(&DMatrix::zeros(5, 4)).is_err());
        assert!(op.apply_adjoint(&DVector::zeros(8)).is_err());
    }

    #[test]
    fn selection_indices_are_distinct_and_in_range() {
        let mut rng = rng_from(42);
        let sel = sample_distinct(100, 60, &mut rng);
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 60);
        assert!(sel.iter().all(|&i| i < 100));
    }
}

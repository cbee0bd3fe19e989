//! Ground-truth generation: low-rank plus sparse signals and their noisy
//! compressive measurements, with the exact normalization the experiments
//! assume (`‖L‖²_F = ‖S‖²_F = n`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{CrpcaError, Result};
use crate::operators::{LinearOperator, OperatorDescriptor, OperatorKind};
use crate::scalar::Scalar;
use crate::seeding::{mix2, rng_from};

// Independent seed streams for the three random ingredients of an instance.
const STREAM_LOWRANK: u64 = 0x11;
const STREAM_SPARSE: u64 = 0x22;
const STREAM_NOISE: u64 = 0x33;

/// Everything needed to regenerate an instance bit-for-bit: operator
/// identity, signal parameters, and the instance seed. Matrices are never
/// stored — they regenerate from the seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecipe {
    pub operator: OperatorDescriptor,
    pub rank: usize,
    /// Probability that an entry of `S` is nonzero.
    pub rho: f64,
    pub sigma_n_sq: f64,
    pub seed: u64,
}

/// Problem dimensions carried alongside an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub r: usize,
}

/// The dimensionless knobs of the phase plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    /// Sampling ratio `m/n`.
    pub alpha: f64,
    /// Aspect ratio `n1/n2`.
    pub beta: f64,
    /// Relative rank `r/n1`.
    pub gamma: f64,
    /// Sparse fraction (probability an entry of `S` is nonzero).
    pub rho: f64,
}

/// A realized ground-truth instance: the pair `(L, S)`, their sum, and the
/// noisy measurements of that sum.
#[derive(Debug, Clone)]
pub struct ProblemInstance<T> {
    pub l: DMatrix<T>,
    pub s: DMatrix<T>,
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub sigma_n_sq: T,
    pub dims: Dims,
    pub ratios: Ratios,
    pub seed: u64,
}

/// `L = U·V` with `U: n1×r`, `V: r×n2` i.i.d. standard Gaussian, rescaled so
/// the realized `‖L‖²_F` equals `n = n1·n2` exactly.
pub fn generate_low_rank<T: Scalar>(
    n1: usize,
    n2: usize,
    r: usize,
    seed: u64,
) -> Result<DMatrix<T>> {
    if r == 0 || r > n1.min(n2) {
        return Err(CrpcaError::InvalidParameter {
            name: "r",
            reason: format!("rank must lie in [1, {}], got {r}", n1.min(n2)),
        });
    }
    let mut rng = rng_from(seed);
    let u = DMatrix::from_fn(n1, r, |_, _| T::standard_normal(&mut rng));
    let v = DMatrix::from_fn(r, n2, |_, _| T::standard_normal(&mut rng));
    let mut l = u * v;
    rescale_to_energy(&mut l, "low-rank factor product")?;
    Ok(l)
}

/// Bernoulli(ρ) support with `N(0,1)` values on it, rescaled so the realized
/// `‖S‖²_F` equals `n`. After rescaling the nonzero entries have variance
/// ≈ `1/ρ`, which is why the matching prior uses `θ = 1/ρ`.
pub fn generate_sparse<T: Scalar>(
    n1: usize,
    n2: usize,
    rho: f64,
    seed: u64,
) -> Result<DMatrix<T>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(CrpcaError::InvalidParameter {
            name: "rho",
            reason: format!("sparse fraction must lie in (0, 1], got {rho}"),
        });
    }
    let mut rng = rng_from(seed);
    let mut s = DMatrix::from_fn(n1, n2, |_, _| {
        if rand::Rng::gen::<f64>(&mut rng) < rho {
            T::standard_normal(&mut rng)
        } else {
            T::zero()
        }
    });
    rescale_to_energy(&mut s, "sparse draw (support came up empty; retry another seed)")?;
    Ok(s)
}

/// `y = A·vec(L+S) + noise`, noise i.i.d. `N(0, σ_n²)`.
pub fn measure<T: Scalar>(
    op: &LinearOperator<T>,
    l: &DMatrix<T>,
    s: &DMatrix<T>,
    sigma_n_sq: T,
    seed: u64,
) -> Result<DVector<T>> {
    if sigma_n_sq < T::zero() {
        return Err(CrpcaError::InvalidParameter {
            name: "sigma_n_sq",
            reason: format!("noise variance must be nonnegative, got {sigma_n_sq}"),
        });
    }
    let mut y = op.apply(&(l + s))?;
    if sigma_n_sq > T::zero() {
        let std = Float::sqrt(sigma_n_sq);
        let mut rng = rng_from(seed);
        for v in y.iter_mut() {
            *v += std * T::standard_normal(&mut rng);
        }
    }
    Ok(y)
}

/// Build the operator and the full instance a recipe describes.
pub fn build_instance<T: Scalar>(
    recipe: &InstanceRecipe,
) -> Result<(LinearOperator<T>, ProblemInstance<T>)> {
    let op = LinearOperator::from_descriptor(&recipe.operator)?;
    let (n1, n2) = (op.n1(), op.n2());
    let l = generate_low_rank(n1, n2, recipe.rank, mix2(recipe.seed, STREAM_LOWRANK))?;
    let s = generate_sparse(n1, n2, recipe.rho, mix2(recipe.seed, STREAM_SPARSE))?;
    let sigma_n_sq = T::lit(recipe.sigma_n_sq);
    let y = measure(&op, &l, &s, sigma_n_sq, mix2(recipe.seed, STREAM_NOISE))?;
    let x = &l + &s;
    let instance = ProblemInstance {
        l,
        s,
        x,
        y,
        sigma_n_sq,
        dims: Dims { n1, n2, m: op.m(), r: recipe.rank },
        ratios: Ratios {
            alpha: op.m() as f64 / op.n() as f64,
            beta: n1 as f64 / n2 as f64,
            gamma: recipe.rank as f64 / n1 as f64,
            rho: recipe.rho,
        },
        seed: recipe.seed,
    };
    Ok((op, instance))
}

fn rescale_to_energy<T: Scalar>(mat: &mut DMatrix<T>, what: &str) -> Result<()> {
    let n = T::from_usize(mat.len()).unwrap();
    let fro2 = mat.norm_squared();
    if fro2 <= T::zero() {
        return Err(CrpcaError::Numerical(format!("cannot normalize a zero {what}")));
    }
    let scale = Float::sqrt(n / fro2);
    for v in mat.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

// --- binary recipe container -------------------------------------------
//
// Fixed-width little-endian layout, 70 bytes total:
//   "CRPI" | version u8 | kind u8 | n1 n2 m op_seed r inst_seed (u64 each)
//   | rho sigma_n_sq (f64 each)

const MAGIC: &[u8; 4] = b"CRPI";
const VERSION: u8 = 1;

impl InstanceRecipe {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION, kind_tag(self.operator.kind)])?;
        for v in [
            self.operator.n1 as u64,
            self.operator.n2 as u64,
            self.operator.m as u64,
            self.operator.seed,
            self.rank as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.rho.to_le_bytes())?;
        w.write_all(&self.sigma_n_sq.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 6];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(CrpcaError::InvalidParameter {
                name: "instance file",
                reason: "bad magic; not an instance container".into(),
            });
        }
        if head[4] != VERSION {
            return Err(CrpcaError::InvalidParameter {
                name: "instance file",
                reason: format!("unsupported container version {}", head[4]),
            });
        }
        let kind = kind_from_tag(head[5])?;
        let mut u = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let n1 = next_u64(r)? as usize;
        let n2 = next_u64(r)? as usize;
        let m = next_u64(r)? as usize;
        let op_seed = next_u64(r)?;
        let rank = next_u64(r)? as usize;
        let seed = next_u64(r)?;
        let mut f = [0u8; 8];
        r.read_exact(&mut f)?;
        let rho = f64::from_le_bytes(f);
        r.read_exact(&mut f)?;
        let sigma_n_sq = f64::from_le_bytes(f);
        Ok(InstanceRecipe {
            operator: OperatorDescriptor { kind, n1, n2, m, seed: op_seed },
            rank,
            rho,
            sigma_n_sq,
            seed,
        })
    }

    pub fn write_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn read_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        Self::read_from(&mut file)
    }
}

fn kind_tag(kind: OperatorKind) -> u8 {
    match kind {
        OperatorKind::PartialDct => 0,
        OperatorKind::PartialHaar => 1,
        OperatorKind::Gaussian => 2,
    }
}

fn kind_from_tag(tag: u8) -> Result<OperatorKind> {
    match tag {
        0 => Ok(OperatorKind::PartialDct),
        1 => Ok(OperatorKind::PartialHaar),
        2 => Ok(OperatorKind::Gaussian),
        other => Err(CrpcaError::InvalidParameter {
            name: "instance file",
            reason: format!("unknown operator kind tag {other}"),
        }),
    }
}

//! The message type passed between modules.

use nalgebra::DMatrix;

use crate::scalar::Scalar;

/// A Gaussian message: a matrix-valued mean plus one scalar variance that
/// models every entry's error as iid `N(0, var)`. The whole algorithm —
/// solver and state evolution alike — is bookkeeping on these pairs.
#[derive(Debug, Clone)]
pub struct MeanVarMessage<T> {
    pub mean: DMatrix<T>,
    pub var: T,
}

impl<T: Scalar> MeanVarMessage<T> {
    pub fn new(mean: DMatrix<T>, var: T) -> Self {
        debug_assert!(var >= T::zero(), "message variance must be nonnegative");
        MeanVarMessage { mean, var }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mean.nrows(), self.mean.ncols())
    }

    /// Total entry count `n = n1·n2`.
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_len_agree() {
        let msg = MeanVarMessage::new(DMatrix::<f64>::zeros(3, 5), 1.0);
        assert_eq!(msg.dims(), (3, 5));
        assert_eq!(msg.len(), 15);
        assert!(!msg.is_empty());
    }
}

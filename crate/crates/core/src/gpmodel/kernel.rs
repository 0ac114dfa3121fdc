use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

/// Spectral correlation matrix `R[a, b] = exp(-|x_a - x_b| / (2ℓ²))` with its
/// factorization, inverse and log-determinant.
///
/// `Σ_k = R / η_k` is the covariance of the k-th Gaussian Process, so the
/// prior precision is `η_k R⁻¹`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    r: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    chol: Cholesky<f64, Dyn>,
}

impl KernelMatrix {
    /// `positions` are band indices or wavelengths; `length_scale` is ℓ in
    /// the same units.
    pub fn new(positions: &[f64], length_scale: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("kernel needs at least one band".into()));
        }
        if !(length_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("length scale must be positive, got {length_scale}")));
        }
        let denom = 2.0 * length_scale * length_scale;
        let l = positions.len();
        let r = DMatrix::from_fn(l, l, |a, b| {
            if a == b {
                1.0
            } else {
                (-(positions[a] - positions[b]).abs() / denom).exp()
            }
        });
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut inverse = chol.inverse();
        // symmetrise away round-off
        inverse = (&inverse + inverse.transpose()) * 0.5;
        Ok(Self {
            r,
            inverse,
            log_det,
            chol,
        })
    }

    /// Kernel over band indices `0..bands`.
    pub fn channel_index(bands: usize, length_scale: f64) -> Result<Self> {
        let positions: Vec<f64> = (0..bands).map(|b| b as f64).collect();
        Self::new(&positions, length_scale)
    }

    pub fn bands(&self) -> usize {
        self.r.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure() {
        let k = KernelMatrix::channel_index(31, 3.0).unwrap();
        let r = k.matrix();
        for a in 0..31 {
            assert_eq!(r[(a, a)], 1.0);
            for b in 0..31 {
                assert_eq!(r[(a, b)], r[(b, a)]);
            }
        }
        assert!((r[(0, 1)] - (-1.0f64 / 18.0).exp()).abs() < 1e-15);
        let eye = r * k.inverse();
        assert!((eye - DMatrix::identity(31, 31)).abs().max() < 1e-9);
        let det = r.clone().determinant();
        assert!((det.ln() - k.log_det()).abs() < 1e-8);
    }

    #[test]
    fn tiny_length_scale_is_identity() {
        let k = KernelMatrix::channel_index(5, 1e-3).unwrap();
        assert_eq!(k.matrix(), &DMatrix::identity(5, 5));
    }

    #[test]
    fn wavelength_positions() {
        let k = KernelMatrix::new(&[400.0, 410.0, 430.0], 3.0).unwrap();
        assert!((k.matrix()[(0, 2)] - (-30.0f64 / 18.0).exp()).abs() < 1e-15);
        assert!(KernelMatrix::new(&[], 3.0).is_err());
        assert!(KernelMatrix::new(&[1.0], 0.0).is_err());
    }
}

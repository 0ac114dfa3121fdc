//! Core image and transform types.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// An `rows x cols x bands` cube stored band-interleaved-by-pixel.
///
/// Pixel `(r, c)` occupies `data[(r * cols + c) * bands..][..bands]`. RGB
/// images are cubes with three bands.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    rows: usize,
    cols: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        wavelengths: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidParameter("cube must have at least one band".into()));
        }
        if wavelengths.len() != bands {
            return Err(Error::Dimension(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                bands
            )));
        }
        check_increasing(&wavelengths)?;
        if data.len() != rows * cols * bands {
            return Err(Error::Dimension(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                rows,
                cols,
                bands
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at data index {i}")));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            wavelengths,
            data,
        })
    }

    /// Zero-filled cube.
    pub fn zeros(rows: usize, cols: usize, wavelengths: Vec<f64>) -> Result<Self> {
        let bands = wavelengths.len();
        Self::new(rows, cols, bands, wavelengths, vec![0.0; rows * cols * bands])
    }

    /// Band-index wavelength grid `0, 1, .., bands-1`.
    pub fn index_grid(bands: usize) -> Vec<f64> {
        (0..bands).map(|b| b as f64).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_at(&self, row: usize, col: usize) -> Result<&[f64]> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.pixel(row * self.cols + col))
    }

    /// Pixel by linear (row-major) index. Panics when out of range.
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.bands..(index + 1) * self.bands]
    }

    /// Values of one band in row-major pixel order.
    pub fn band(&self, band: usize) -> Result<Vec<f64>> {
        if band >= self.bands {
            return Err(Error::InvalidParameter(format!(
                "band {band} out of range for {} bands",
                self.bands
            )));
        }
        Ok(self.data.iter().skip(band).step_by(self.bands).copied().collect())
    }

    /// `bands x pixels` matrix with one pixel spectrum per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.bands, self.pixels(), &self.data)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn check_increasing(grid: &[f64]) -> Result<()> {
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "wavelengths must be strictly increasing (index {})",
                i + 1
            )));
        }
    }
    if grid.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter("non-finite wavelength".into()));
    }
    Ok(())
}

/// Linear map from `L` hyperspectral bands to `l` camera channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTransform {
    matrix: DMatrix<f64>,
}

impl SpectralTransform {
    /// Requires finite entries and no more channels than bands.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Dimension("empty spectral transform".into()));
        }
        if matrix.nrows() > matrix.ncols() {
            return Err(Error::Dimension(format!(
                "transform has {} channels but only {} bands",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite transform entry".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn channels(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bands(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rescales every row to sum to one. Rows summing to zero are left alone.
    pub fn normalize_rows(&mut self) {
        for mut row in self.matrix.row_iter_mut() {
            let s: f64 = row.sum();
            if s != 0.0 {
                row /= s;
            }
        }
    }

    /// `T * Φ` for a `bands x k` matrix.
    pub fn project(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if phi.nrows() != self.bands() {
            return Err(Error::Dimension(format!(
                "matrix has {} rows, transform expects {}",
                phi.nrows(),
                self.bands()
            )));
        }
        Ok(&self.matrix * phi)
    }
}

/// `T * s` for a single spectrum.
pub fn apply_transform(t: &SpectralTransform, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != t.bands() {
        return Err(Error::Dimension(format!(
            "spectrum has {} bands, transform expects {}",
            s.len(),
            t.bands()
        )));
    }
    let v = t.matrix() * DVector::from_column_slice(s);
    Ok(v.as_slice().to_vec())
}

/// A `side x side` window of a cube flattened pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub bands: usize,
    pub origin: (usize, usize),
    pub vector: Vec<f64>,
}

impl Patch {
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.vector[index * self.bands..(index + 1) * self.bands]
    }

    pub fn num_pixels(&self) -> usize {
        self.side * self.side
    }
}

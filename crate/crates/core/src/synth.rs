//! Synthetic hyperspectral scenes with known atoms and codes.
//!
//! Atoms are unit-norm sums of one to three Gaussian bumps over the band
//! axis. The image is tiled into square blocks; every block draws its own
//! active atoms and base weights, and its pixels jitter those weights, so
//! patches from one block look alike and cluster together.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

use crate::cube::{HyperCube, SpectralTransform};
use crate::cubeio::Container;
use crate::gpmodel::dist::standard_normal;
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub atoms: usize,
    /// Range of Gaussian-bump widths (standard deviations) in channels.
    pub min_width: f64,
    pub max_width: f64,
    /// Active atoms per pixel.
    pub sparsity: usize,
    /// Side of the blocks sharing an active set.
    pub block: usize,
    /// Precision of the additive Gaussian noise; infinity means noiseless.
    pub noise_precision: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            bands: 31,
            rows: 64,
            cols: 64,
            atoms: 8,
            min_width: 6.0,
            max_width: 12.0,
            sparsity: 2,
            block: 8,
            noise_precision: 1e4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.rows == 0 || self.cols == 0 || self.block == 0 {
            return Err(Error::InvalidParameter("synthetic scene dimensions must be positive".into()));
        }
        if self.atoms == 0 || self.sparsity == 0 || self.sparsity > self.atoms {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= sparsity <= atoms, got sparsity {} with {} atoms",
                self.sparsity, self.atoms
            )));
        }
        if !(self.min_width > 0.0 && self.min_width <= self.max_width && self.max_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bump widths must satisfy 0 < min <= max, got {}..{}",
                self.min_width, self.max_width
            )));
        }
        if !(self.noise_precision > 0.0) {
            return Err(Error::InvalidParameter("noise precision must be positive".into()));
        }
        Ok(())
    }

    /// Wavelength grid `400, 410, ..` nm.
    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bands).map(|b| 400.0 + 10.0 * b as f64).collect()
    }

    /// Upper bound on the mean absolute second difference of any atom.
    ///
    /// A second difference equals `f''` somewhere in its window and a bump of
    /// height `a` and width `w` has `|f''| <= a / w²`. After normalisation the
    /// tallest bump has height at most `1 / exp(-1 / (8 w²))`, the value at
    /// the band nearest its centre, which is below 1.02 for `w >= 1`.
    pub fn smoothness_bound(&self) -> f64 {
        let w = self.min_width;
        3.0 / (w * w) / (-1.0 / (8.0 * w * w)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub cube: HyperCube,
    /// `L x K` unit-norm atoms.
    pub atoms: DMatrix<f64>,
    /// `K x (rows * cols)` non-negative codes, pixel-major columns.
    pub codes: DMatrix<f64>,
}

fn gaussian(b: f64, centre: f64, width: f64) -> f64 {
    (-(b - centre).powi(2) / (2.0 * width * width)).exp()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    let atoms = generate_atoms(spec)?;
    generate_scene(spec, atoms)
}

/// The scene's atoms alone; they depend only on `bands`, the widths, `atoms`
/// and `seed`.
pub fn generate_atoms(spec: &SynthSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synth, 0);
    let l = spec.bands;
    let top = (l - 1) as f64;
    let mut atoms = DMatrix::zeros(l, spec.atoms);
    for k in 0..spec.atoms {
        let bumps = rng.random_range(1..=3);
        for _ in 0..bumps {
            let centre = rng.random_range(0.0..=top);
            let width = rng.random_range(spec.min_width..=spec.max_width);
            let height = rng.random_range(0.5..=1.0);
            for b in 0..l {
                atoms[(b, k)] += height * gaussian(b as f64, centre, width);
            }
        }
        let n = atoms.column(k).norm();
        atoms.column_mut(k).unscale_mut(n);
    }
    Ok(atoms)
}

/// A scene over given atoms, with codes and noise drawn from `spec.seed`.
/// Scenes sharing atoms but not seeds serve as train/test pairs.
pub fn generate_scene(spec: &SynthSpec, atoms: DMatrix<f64>) -> Result<SynthScene> {
    spec.validate()?;
    if atoms.shape() != (spec.bands, spec.atoms) {
        return Err(Error::Dimension(format!(
            "atoms are {}x{}, spec wants {}x{}",
            atoms.nrows(),
            atoms.ncols(),
            spec.bands,
            spec.atoms
        )));
    }
    let mut rng = rng::stream(spec.seed, Stream::Synth, 2);
    let l = spec.bands;
    let (rows, cols) = (spec.rows, spec.cols);
    let mut codes = DMatrix::zeros(spec.atoms, rows * cols);
    let sigma = spec.noise_precision.recip().sqrt();
    for br in (0..rows).step_by(spec.block) {
        for bc in (0..cols).step_by(spec.block) {
            let active = index::sample(&mut rng, spec.atoms, spec.sparsity).into_vec();
            let base: Vec<f64> = active.iter().map(|_| rng.random_range(0.5..=1.5)).collect();
            for r in br..(br + spec.block).min(rows) {
                for c in bc..(bc + spec.block).min(cols) {
                    for (&k, &w) in active.iter().zip(&base) {
                        codes[(k, r * cols + c)] = w * rng.random_range(0.8..=1.2);
                    }
                }
            }
        }
    }

    let clean = &atoms * &codes;
    let mut data = Vec::with_capacity(rows * cols * l);
    for col in clean.column_iter() {
        for &v in col.iter() {
            let noise = if sigma > 0.0 { sigma * standard_normal(&mut rng) } else { 0.0 };
            data.push((v + noise).max(0.0));
        }
    }
    let cube = HyperCube::new(rows, cols, l, spec.wavelengths(), data)?;
    Ok(SynthScene { cube, atoms, codes })
}

/// A random smooth non-negative `3 x L` response: three jittered Gaussian
/// sensitivity curves (red at the long end) over a small baseline, each row
/// summing to one.
pub fn smooth_response(bands: usize, seed: u64) -> Result<SpectralTransform> {
    if bands < 3 {
        return Err(Error::InvalidParameter(format!("a response needs at least 3 bands, got {bands}")));
    }
    let mut rng = rng::stream(seed, Stream::Synth, 1);
    let top = (bands - 1) as f64;
    let mut m = DMatrix::zeros(3, bands);
    for ch in 0..3 {
        let centre = top * (0.75 - 0.25 * ch as f64) + rng.random_range(-1.0..=1.0) * top / 12.0;
        let width = top / 6.0 * rng.random_range(0.8..=1.2);
        let floor = 0.02 * rng.random_range(0.0..=1.0);
        for b in 0..bands {
            m[(ch, b)] = gaussian(b as f64, centre, width) + floor;
        }
    }
    let mut t = SpectralTransform::new(m)?;
    t.normalize_rows();
    Ok(t)
}

pub fn encode_truth(scene: &SynthScene) -> Vec<u8> {
    let mut c = Container::new("truth");
    c.push_meta("rows", scene.cube.rows());
    c.push_meta("cols", scene.cube.cols());
    c.push_blob("atoms", scene.atoms.clone());
    c.push_blob("codes", scene.codes.clone());
    c.encode()
}

/// Atoms and codes from a truth sidecar.
pub fn decode_truth(bytes: &[u8]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = Container::decode(bytes, "truth")?;
    let atoms = c.blob("atoms")?.clone();
    let codes = c.blob("codes")?.clone();
    let pixels = c.meta_parse::<usize>("rows")? * c.meta_parse::<usize>("cols")?;
    if codes.nrows() != atoms.ncols() || codes.ncols() != pixels {
        return Err(Error::format(0, "truth sidecar has inconsistent shapes"));
    }
    Ok((atoms, codes))
}

pub fn write_truth(scene: &SynthScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_truth(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let path = path.as_ref();
    decode_truth(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

//! Training and reconstruction drivers, RGB simulation and camera transform
//! estimation.

use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coder::Coder;
use crate::config::TrainConfig;
use crate::cube::{apply_transform, HyperCube, SpectralTransform};
use crate::gpmodel::{build_kernel, run_gibbs};
use crate::preprocess::{
    all_pixels, assign_cluster, atom_budget, cut_patch, extract_patches, grid_origins, kmeans,
    rgb_centroids, subsample_pixels, KMeansOptions, PatchSet,
};
use crate::priors::factorize_with_stream;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Learned atoms of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    /// `L x K_c` hyperspectral atoms (posterior means, or the prior dictionary
    /// in the DL variant).
    pub phi: DMatrix<f64>,
    /// `3 x K_c`, equal to `T * phi`.
    pub phi_rgb: DMatrix<f64>,
    /// Mean transformed patch of the cluster, `p * p * 3` entries.
    pub centroid: Vec<f64>,
    /// Posterior mean of `π_k`, or the fraction of training pixels using each
    /// atom in the DL variant.
    pub usage: Vec<f64>,
    /// Final noise precision of the chain; `None` in the DL variant.
    pub lambda_eps: Option<f64>,
}

impl ClusterModel {
    pub fn atoms(&self) -> usize {
        self.phi.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub transform: SpectralTransform,
    pub wavelengths: Vec<f64>,
    pub config: TrainConfig,
    pub clusters: Vec<ClusterModel>,
}

impl TrainedModel {
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn total_atoms(&self) -> usize {
        self.clusters.iter().map(ClusterModel::atoms).sum()
    }

    /// Checks the cross-field invariants of a loaded or assembled model.
    pub fn validate(&self) -> Result<()> {
        let (l, p) = (self.bands(), self.config.patch_size);
        if self.transform.bands() != l {
            return Err(Error::Dimension(format!(
                "transform has {} bands, model has {l}",
                self.transform.bands()
            )));
        }
        if self.clusters.is_empty() {
            return Err(Error::Dimension("model has no clusters".into()));
        }
        let ch = self.transform.channels();
        for (c, m) in self.clusters.iter().enumerate() {
            let k = m.atoms();
            if m.phi.nrows() != l
                || m.phi_rgb.shape() != (ch, k)
                || m.centroid.len() != p * p * ch
                || m.usage.len() != k
            {
                return Err(Error::Dimension(format!("cluster {c} has inconsistent shapes")));
            }
        }
        Ok(())
    }
}

/// Trains one model from hyperspectral cubes sharing a wavelength grid.
pub fn train(cubes: &[HyperCube], t: &SpectralTransform, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let first = cubes
        .first()
        .ok_or_else(|| Error::InvalidParameter("training needs at least one cube".into()))?;
    let wavelengths = first.wavelengths().to_vec();
    if let Some(i) = cubes.iter().position(|c| c.wavelengths() != wavelengths.as_slice()) {
        return Err(Error::Dimension(format!("cube {i} has a different wavelength grid")));
    }
    if t.bands() != wavelengths.len() {
        return Err(Error::Dimension(format!(
            "transform expects {} bands, cubes have {}",
            t.bands(),
            wavelengths.len()
        )));
    }
    let start = Instant::now();
    let p = config.patch_size;

    let mut patches = PatchSet::default();
    for (i, cube) in cubes.iter().enumerate() {
        let mut set = extract_patches(cube, p, p)?;
        set.sources.iter_mut().for_each(|s| *s = i);
        patches.extend(set)?;
    }
    let opts = KMeansOptions {
        max_iters: config.kmeans_iters,
        tol: config.kmeans_tol,
        center: config.kmeans_center,
    };
    let clustering = kmeans(&patches, config.clusters, config.seed, opts)?;
    let budget = atom_budget(&clustering.counts(), config.atoms)?;
    info!(
        "{} patches in {} clusters, atoms per cluster {:?}",
        patches.len(),
        config.clusters,
        budget
    );

    let clusters: Vec<ClusterModel> = (0..config.clusters)
        .into_par_iter()
        .map(|c| {
            let members: Vec<_> = clustering.members(c).into_iter().map(|i| &patches.patches[i]).collect();
            train_cluster(c, &members, budget[c], &wavelengths, t, config)
        })
        .collect::<Result<_>>()?;

    let centroids = rgb_centroids(&clustering, &patches, t)?;
    let clusters = clusters
        .into_iter()
        .zip(centroids)
        .map(|(mut m, centroid)| {
            m.centroid = centroid;
            m
        })
        .collect();
    let model = TrainedModel {
        transform: t.clone(),
        wavelengths,
        config: config.clone(),
        clusters,
    };
    info!("training finished in {:.1?}", start.elapsed());
    Ok(model)
}

fn train_cluster(
    c: usize,
    members: &[&crate::cube::Patch],
    atoms: usize,
    wavelengths: &[f64],
    t: &SpectralTransform,
    config: &TrainConfig,
) -> Result<ClusterModel> {
    let idx = c as u64;
    let mut rng = rng::stream(config.seed, Stream::Subsample, idx);
    let mut y = subsample_pixels(members, config.pixel_fraction, &mut rng)?;
    if y.ncols() < atoms {
        warn!(
            "cluster {c}: {} sampled pixels for {atoms} atoms, using all pixels",
            y.ncols()
        );
        y = all_pixels(members);
    }
    let priors = factorize_with_stream(&y, atoms, config.delta, config.seed, idx, config.prior_epochs)?;
    let (phi, usage, lambda_eps) = if config.dl_variant {
        let n = y.ncols().max(1) as f64;
        let usage = priors.usage().iter().map(|&u| u as f64 / n).collect();
        (priors.dict, usage, None)
    } else {
        let kernel = build_kernel(&config.model, wavelengths)?;
        let mut rng = rng::stream(config.seed, Stream::Gibbs, idx);
        let summary = run_gibbs(&y, &priors, &config.model, kernel, &mut rng)?;
        info!(
            "cluster {c}: K = {atoms}, N = {}, final lambda_eps {:.4e}",
            y.ncols(),
            summary.final_lambda_eps
        );
        (
            summary.phi_mean,
            summary.usage.iter().copied().collect(),
            Some(summary.final_lambda_eps),
        )
    };
    let phi_rgb = t.project(&phi)?;
    Ok(ClusterModel {
        phi,
        phi_rgb,
        centroid: Vec::new(),
        usage,
        lambda_eps,
    })
}

/// Per-pixel sums and coverage counts for overlap averaging.
#[derive(Clone, Debug)]
pub struct AccumulatorImage {
    rows: usize,
    cols: usize,
    bands: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl AccumulatorImage {
    pub fn new(rows: usize, cols: usize, bands: usize) -> Self {
        Self {
            rows,
            cols,
            bands,
            sums: vec![0.0; rows * cols * bands],
            counts: vec![0; rows * cols],
        }
    }

    /// Adds `weight` copies of `spectrum` to pixel `index`.
    pub fn add(&mut self, index: usize, spectrum: &[f64], weight: u32) {
        let w = f64::from(weight);
        let dst = &mut self.sums[index * self.bands..(index + 1) * self.bands];
        for (d, s) in dst.iter_mut().zip(spectrum) {
            *d += w * s;
        }
        self.counts[index] += weight;
    }

    pub fn count(&self, index: usize) -> u32 {
        self.counts[index]
    }

    /// Divides every sum by its count. Fails if a pixel was never covered.
    pub fn finish(self, wavelengths: Vec<f64>) -> Result<HyperCube> {
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::Numerical(format!("pixel {i} is not covered by any patch")));
        }
        let mut data = self.sums;
        for (px, &n) in data.chunks_exact_mut(self.bands).zip(&self.counts) {
            px.iter_mut().for_each(|v| *v /= f64::from(n));
        }
        HyperCube::new(self.rows, self.cols, self.bands, wavelengths, data)
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionOutput {
    pub cube: HyperCube,
    /// Pixels for which at least one code missed the residual bound.
    pub infeasible_pixels: usize,
    /// Fraction of output values below zero.
    pub negative_fraction: f64,
}

/// Patch origins along one axis: the stride grid plus a final origin clamped
/// to `extent - p` when the grid leaves a margin.
pub fn covering_origins(extent: usize, p: usize, stride: usize) -> Vec<usize> {
    let mut o = grid_origins(extent, p, stride);
    if let Some(&last) = o.last() {
        if last + p < extent {
            o.push(extent - p);
        }
    }
    o
}

fn check_rgb(model: &TrainedModel, rgb: &HyperCube, stride: usize) -> Result<()> {
    let p = model.config.patch_size;
    if rgb.bands() != model.transform.channels() {
        return Err(Error::Dimension(format!(
            "expected a {}-channel image, got {} bands",
            model.transform.channels(),
            rgb.bands()
        )));
    }
    if stride == 0 || stride > p {
        return Err(Error::InvalidParameter(format!("stride must be in 1..={p}, got {stride}")));
    }
    if rgb.rows() < p || rgb.cols() < p {
        return Err(Error::InvalidParameter(format!(
            "image {}x{} is smaller than the patch side {p}",
            rgb.rows(),
            rgb.cols()
        )));
    }
    if rgb.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("RGB image has non-finite values".into()));
    }
    model.validate()
}

/// Cluster index of every covering patch, row-major over origins.
fn assign_patches(model: &TrainedModel, rgb: &HyperCube, stride: usize) -> Result<Vec<((usize, usize), usize)>> {
    let p = model.config.patch_size;
    let rows = covering_origins(rgb.rows(), p, stride);
    let cols = covering_origins(rgb.cols(), p, stride);
    let origins: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    let centroids: Vec<Vec<f64>> = model.clusters.iter().map(|m| m.centroid.clone()).collect();
    origins
        .par_iter()
        .map(|&o| {
            let patch = cut_patch(rgb, p, o);
            assign_cluster(&patch.vector, &centroids).map(|c| (o, c))
        })
        .collect()
}

/// Recovers an `L`-band cube from an RGB image.
///
/// Every pixel is coded once per distinct cluster among the patches that
/// cover it; the output is the count-weighted mean of those estimates, which
/// equals the mean over all covering patches.
pub fn reconstruct(model: &TrainedModel, rgb: &HyperCube, stride: usize) -> Result<ReconstructionOutput> {
    check_rgb(model, rgb, stride)?;
    let p = model.config.patch_size;
    let (rows, cols, bands) = (rgb.rows(), rgb.cols(), model.bands());
    let assigned = assign_patches(model, rgb, stride)?;

    let nclusters = model.clusters.len();
    let mut cover = vec![0u32; rows * cols * nclusters];
    for &((r0, c0), c) in &assigned {
        for r in r0..r0 + p {
            for col in c0..c0 + p {
                cover[(r * cols + col) * nclusters + c] += 1;
            }
        }
    }

    let coders: Vec<Coder> = model
        .clusters
        .iter()
        .map(|m| Coder::new(m.phi_rgb.clone()))
        .collect::<Result<_>>()?;
    let delta1 = model.config.delta1;
    let per_pixel: Vec<(Vec<(u32, Vec<f64>)>, bool)> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let y = rgb.pixel(i);
            let mut estimates = Vec::new();
            let mut infeasible = false;
            for (c, &n) in cover[i * nclusters..(i + 1) * nclusters].iter().enumerate() {
                if n > 0 {
                    let code = coders[c].min_l1(y, delta1)?;
                    infeasible |= code.infeasible;
                    estimates.push((n, code.synthesize(&model.clusters[c].phi)));
                }
            }
            Ok((estimates, infeasible))
        })
        .collect::<Result<_>>()?;

    let mut acc = AccumulatorImage::new(rows, cols, bands);
    let mut infeasible_pixels = 0;
    for (i, (estimates, bad)) in per_pixel.iter().enumerate() {
        for (n, est) in estimates {
            acc.add(i, est, *n);
        }
        infeasible_pixels += usize::from(*bad);
    }
    let cube = acc.finish(model.wavelengths.clone())?;
    let negative = cube.data().iter().filter(|&&v| v < 0.0).count();
    let negative_fraction = negative as f64 / cube.data().len() as f64;
    if infeasible_pixels > 0 {
        warn!("{infeasible_pixels} pixels had an infeasible code");
    }
    Ok(ReconstructionOutput {
        cube,
        infeasible_pixels,
        negative_fraction,
    })
}

/// Estimate of one covering patch, for auditing the overlap average.
#[derive(Clone, Debug)]
pub struct PatchEstimate {
    pub origin: (usize, usize),
    pub cluster: usize,
    /// `p * p * L` values, pixel-major within the patch.
    pub spectra: Vec<f64>,
}

/// Codes every pixel of every covering patch independently.
pub fn patch_estimates(model: &TrainedModel, rgb: &HyperCube, stride: usize) -> Result<Vec<PatchEstimate>> {
    check_rgb(model, rgb, stride)?;
    let p = model.config.patch_size;
    assign_patches(model, rgb, stride)?
        .into_par_iter()
        .map(|(origin, cluster)| {
            let m = &model.clusters[cluster];
            let coder = Coder::new(m.phi_rgb.clone())?;
            let mut spectra = Vec::with_capacity(p * p * m.phi.nrows());
            for dr in 0..p {
                for dc in 0..p {
                    let y = rgb.pixel_at(origin.0 + dr, origin.1 + dc)?;
                    let code = coder.min_l1(y, model.config.delta1)?;
                    spectra.extend(code.synthesize(&m.phi));
                }
            }
            Ok(PatchEstimate {
                origin,
                cluster,
                spectra,
            })
        })
        .collect()
}

/// Applies `t` to every pixel. The result's wavelength grid is the channel
/// index `0, 1, ..`.
pub fn simulate_rgb(cube: &HyperCube, t: &SpectralTransform) -> Result<HyperCube> {
    if cube.bands() != t.bands() {
        return Err(Error::Dimension(format!(
            "cube has {} bands, transform expects {}",
            cube.bands(),
            t.bands()
        )));
    }
    let data: Vec<f64> = (0..cube.pixels())
        .into_par_iter()
        .map(|i| apply_transform(t, cube.pixel(i)))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let ch = t.channels();
    HyperCube::new(cube.rows(), cube.cols(), ch, HyperCube::index_grid(ch), data)
}

/// Least-squares `T` for `Y ≈ T Y^h`, computed as `Y (Y^h)†`.
pub fn estimate_transform(y: &DMatrix<f64>, yh: &DMatrix<f64>) -> Result<SpectralTransform> {
    if y.ncols() != yh.ncols() {
        return Err(Error::Dimension(format!(
            "{} RGB samples but {} spectra",
            y.ncols(),
            yh.ncols()
        )));
    }
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("no sample pairs".into()));
    }
    let svd = yh.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = yh.nrows().max(yh.ncols()) as f64 * f64::EPSILON * smax;
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    SpectralTransform::new(y * pinv)
}

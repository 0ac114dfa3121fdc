//! Patch extraction, K-Means clustering of training patches and the
//! per-cluster quantities derived from it.

use log::debug;
use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::cube::{apply_transform, HyperCube, Patch, SpectralTransform};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Patches of identical side and band count, with the index of the cube each
/// one came from.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub sources: Vec<usize>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Appends `other`, checking that patch shapes agree.
    pub fn extend(&mut self, other: PatchSet) -> Result<()> {
        if let (Some(a), Some(b)) = (self.patches.first(), other.patches.first()) {
            if a.side != b.side || a.bands != b.bands {
                return Err(Error::Dimension("patch sets have different shapes".into()));
            }
        }
        self.patches.extend(other.patches);
        self.sources.extend(other.sources);
        Ok(())
    }
}

/// Origins `0, stride, 2*stride, ..` that keep a `p`-window inside `extent`.
pub fn grid_origins(extent: usize, p: usize, stride: usize) -> Vec<usize> {
    if p > extent {
        return Vec::new();
    }
    (0..=extent - p).step_by(stride).collect()
}

/// Cuts `p x p` patches at every origin on a `stride` grid, row-major.
pub fn extract_patches(cube: &HyperCube, p: usize, stride: usize) -> Result<PatchSet> {
    if p == 0 || stride == 0 {
        return Err(Error::InvalidParameter("patch side and stride must be positive".into()));
    }
    if p > cube.rows() || p > cube.cols() {
        return Err(Error::InvalidParameter(format!(
            "patch side {p} exceeds image size {}x{}",
            cube.rows(),
            cube.cols()
        )));
    }
    let rows = grid_origins(cube.rows(), p, stride);
    let cols = grid_origins(cube.cols(), p, stride);
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            patches.push(cut_patch(cube, p, (r, c)));
        }
    }
    let sources = vec![0; patches.len()];
    Ok(PatchSet { patches, sources })
}

pub(crate) fn cut_patch(cube: &HyperCube, p: usize, origin: (usize, usize)) -> Patch {
    let bands = cube.bands();
    let mut vector = Vec::with_capacity(p * p * bands);
    for dr in 0..p {
        let start = ((origin.0 + dr) * cube.cols() + origin.1) * bands;
        vector.extend_from_slice(&cube.data()[start..start + p * bands]);
    }
    Patch {
        side: p,
        bands,
        origin,
        vector,
    }
}

/// Result of K-Means: assignment, centroids and the objective recorded
/// after every Lloyd iteration.
#[derive(Clone, Debug)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
}

impl Clustering {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clusters()];
        for &a in &self.assignment {
            counts[a] += 1;
        }
        counts
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Subtract each vector's own mean before clustering.
    pub center: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            center: false,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are refilled with the point farthest from its current
/// centroid, so every cluster ends with at least one member.
pub fn kmeans_vectors(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let owned;
    let points: &[Vec<f64>] = if opts.center {
        owned = points
            .iter()
            .map(|p| {
                let m = p.iter().sum::<f64>() / p.len().max(1) as f64;
                p.iter().map(|v| v - m).collect()
            })
            .collect::<Vec<Vec<f64>>>();
        &owned
    } else {
        points
    };
    let dim = points[0].len();
    let mut rng = rng::stream(seed, Stream::KMeans, 0);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut objective = Vec::new();

    for iter in 0..opts.max_iters.max(1) {
        let nearest_all: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = nearest_all
            .iter()
            .zip(&assignment)
            .any(|((a, _), b)| a != b);
        let mut dist: Vec<f64> = nearest_all.iter().map(|x| x.1).collect();
        for (a, (k_near, _)) in assignment.iter_mut().zip(&nearest_all) {
            *a = *k_near;
        }

        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                })
                .expect("k <= n guarantees a cluster with two members");
            debug!("kmeans: refilling empty cluster {empty} with point {donor}");
            counts[assignment[donor]] -= 1;
            assignment[donor] = empty;
            counts[empty] = 1;
            dist[donor] = 0.0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, (sum, &cnt)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            let new: Vec<f64> = sum.iter().map(|s| s / cnt as f64).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let moved = sq_dist(c, &new).sqrt();
            shift = shift.max(moved / norm.max(f64::MIN_POSITIVE));
            *c = new;
        }
        let obj: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        objective.push(obj);
        debug!("kmeans iter {iter}: objective {obj:.6e}, shift {shift:.3e}");
        if !changed && iter > 0 || shift < opts.tol {
            break;
        }
    }

    Ok(Clustering {
        assignment,
        centroids,
        objective,
    })
}

/// K-Means over flattened patch vectors.
pub fn kmeans(patches: &PatchSet, k: usize, seed: u64, opts: KMeansOptions) -> Result<Clustering> {
    let points: Vec<Vec<f64>> = patches.patches.iter().map(|p| p.vector.clone()).collect();
    kmeans_vectors(&points, k, seed, opts)
}

/// Samples `ceil(fraction * p^2)` pixels from every patch without
/// replacement and stacks them as columns of a `bands x n` matrix.
pub fn subsample_pixels(patches: &[&Patch], fraction: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let Some(first) = patches.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let bands = first.bands;
    let mut cols: Vec<f64> = Vec::new();
    for patch in patches {
        let total = patch.num_pixels();
        let take = ((fraction * total as f64).ceil() as usize).clamp(1, total);
        let mut picked = index::sample(rng, total, take).into_vec();
        picked.sort_unstable();
        for i in picked {
            cols.extend_from_slice(patch.pixel(i));
        }
    }
    let n = cols.len() / bands;
    Ok(DMatrix::from_vec(bands, n, cols))
}

/// Every pixel of every patch as columns of a `bands x n` matrix.
pub fn all_pixels(patches: &[&Patch]) -> DMatrix<f64> {
    let Some(first) = patches.first() else {
        return DMatrix::zeros(0, 0);
    };
    let cols: Vec<f64> = patches.iter().flat_map(|p| p.vector.iter().copied()).collect();
    let bands = first.bands;
    DMatrix::from_vec(bands, cols.len() / bands, cols)
}

/// Applies `t` to each pixel of a patch, keeping pixel-major layout.
pub fn transform_patch(patch: &Patch, t: &SpectralTransform) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(patch.num_pixels() * t.channels());
    for i in 0..patch.num_pixels() {
        out.extend(apply_transform(t, patch.pixel(i))?);
    }
    Ok(out)
}

/// Mean of the spectrally transformed patches of each cluster.
pub fn rgb_centroids(
    clustering: &Clustering,
    patches: &PatchSet,
    t: &SpectralTransform,
) -> Result<Vec<Vec<f64>>> {
    if clustering.assignment.len() != patches.len() {
        return Err(Error::Dimension("clustering does not match the patch set".into()));
    }
    let k = clustering.clusters();
    let transformed: Vec<Vec<f64>> = patches
        .patches
        .par_iter()
        .map(|p| transform_patch(p, t))
        .collect::<Result<_>>()?;
    let dim = transformed.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in transformed.iter().zip(&clustering.assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    Ok(sums)
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign_cluster(patch: &[f64], centroids: &[Vec<f64>]) -> Result<usize> {
    if centroids.is_empty() {
        return Err(Error::InvalidParameter("no centroids".into()));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != patch.len()) {
        return Err(Error::Dimension(format!(
            "patch has {} entries, centroid has {}",
            patch.len(),
            c.len()
        )));
    }
    Ok(nearest(patch, centroids).0)
}

/// Splits `total` atoms across clusters in proportion to their patch counts:
/// `max(1, round(total * n_c / N))`, then largest-remainder correction so the
/// budgets sum to `total`.
pub fn atom_budget(counts: &[usize], total: usize) -> Result<Vec<usize>> {
    let c = counts.len();
    let n: usize = counts.iter().sum();
    if c == 0 || n == 0 {
        return Err(Error::InvalidParameter("no patches to budget".into()));
    }
    if total < c {
        return Err(Error::InvalidParameter(format!(
            "{total} atoms cannot cover {c} clusters"
        )));
    }
    let quota: Vec<f64> = counts
        .iter()
        .map(|&k| total as f64 * k as f64 / n as f64)
        .collect();
    let mut budget: Vec<usize> = quota.iter().map(|q| (q.round() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..c).collect();
    loop {
        let sum: usize = budget.iter().sum();
        if sum == total {
            break;
        }
        // remainder = quota - budget; grow the most under-served, shrink the most over-served
        if sum < total {
            order.sort_by(|&a, &b| {
                let ra = quota[a] - budget[a] as f64;
                let rb = quota[b] - budget[b] as f64;
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            budget[order[0]] += 1;
        } else {
            order.sort_by(|&a, &b| {
                let ra = quota[a] - budget[a] as f64;
                let rb = quota[b] - budget[b] as f64;
                ra.total_cmp(&rb).then(a.cmp(&b))
            });
            let victim = order
                .iter()
                .copied()
                .find(|&i| budget[i] > 1)
                .expect("total >= clusters leaves a budget above one");
            budget[victim] -= 1;
        }
    }
    Ok(budget)
}

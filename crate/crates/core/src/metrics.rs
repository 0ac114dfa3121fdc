//! Reconstruction error measures and the evaluation report.
//!
//! All reductions run sequentially in a fixed order so results do not
//! depend on the thread count.

use std::fmt::Write as _;

use crate::cube::HyperCube;
use crate::{Error, Result};

fn check_same(est: &HyperCube, gt: &HyperCube) -> Result<()> {
    if (est.rows(), est.cols(), est.bands()) != (gt.rows(), gt.cols(), gt.bands()) {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}x{}, ground truth is {}x{}x{}",
            est.rows(),
            est.cols(),
            est.bands(),
            gt.rows(),
            gt.cols(),
            gt.bands()
        )));
    }
    Ok(())
}

/// Factor mapping the ground truth's global maximum to 255. Falls back to 1
/// for an all-zero or negative ground truth.
pub fn eightbit_scale(gt: &HyperCube) -> f64 {
    let max = gt.max_value();
    if max > 0.0 {
        255.0 / max
    } else {
        1.0
    }
}

fn rms(sq_sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sq_sum / n as f64).sqrt()
    }
}

/// Root mean square error over all entries. With `eightbit`, both cubes are
/// first scaled by `255 / max(gt)`.
pub fn rmse(est: &HyperCube, gt: &HyperCube, eightbit: bool) -> Result<f64> {
    check_same(est, gt)?;
    let scale = if eightbit { eightbit_scale(gt) } else { 1.0 };
    let sq: f64 = est
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (scale * (a - b)).powi(2))
        .sum();
    Ok(rms(sq, gt.data().len()))
}

/// RMSE of each band separately.
pub fn per_band_rmse(est: &HyperCube, gt: &HyperCube, eightbit: bool) -> Result<Vec<f64>> {
    check_same(est, gt)?;
    let scale = if eightbit { eightbit_scale(gt) } else { 1.0 };
    let l = gt.bands();
    let mut sq = vec![0.0; l];
    for (i, (a, b)) in est.data().iter().zip(gt.data()).enumerate() {
        sq[i % l] += (scale * (a - b)).powi(2);
    }
    Ok(sq.into_iter().map(|s| rms(s, gt.pixels())).collect())
}

/// Default floor for [`relative_rmse`]: `1e-3` of the ground-truth maximum.
pub fn default_floor(gt: &HyperCube) -> f64 {
    1e-3 * gt.max_value().max(0.0)
}

/// `sqrt(mean(((est - gt) / max(gt, floor))²))`; `floor` defaults to
/// [`default_floor`].
pub fn relative_rmse(est: &HyperCube, gt: &HyperCube, floor: Option<f64>) -> Result<f64> {
    check_same(est, gt)?;
    let floor = floor.unwrap_or_else(|| default_floor(gt));
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("relative RMSE floor must be positive, got {floor}")));
    }
    let sq: f64 = est
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| ((a - b) / b.max(floor)).powi(2))
        .sum();
    Ok(rms(sq, gt.data().len()))
}

/// Spectral angle in degrees, `None` when either vector is zero.
///
/// Equal to `acos(⟨a,b⟩ / (‖a‖‖b‖))`, evaluated as
/// `2·atan2(‖â − b̂‖, ‖â + b̂‖)` on the unit vectors, which keeps full
/// precision for nearly parallel spectra.
pub fn sam(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Mean spectral angle over pixels where both spectra are non-zero, and the
/// number of skipped pixels.
pub fn sam_mean(est: &HyperCube, gt: &HyperCube) -> Result<(f64, usize)> {
    check_same(est, gt)?;
    let (mut sum, mut valid) = (0.0, 0usize);
    for i in 0..gt.pixels() {
        if let Some(a) = sam(est.pixel(i), gt.pixel(i)) {
            sum += a;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Numerical("no pixel has a defined spectral angle".into()));
    }
    Ok((sum / valid as f64, gt.pixels() - valid))
}

/// Mean absolute second difference along a spectrum.
pub fn mean_abs_second_difference(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let s: f64 = v.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).sum();
    s / (v.len() - 2) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub rmse_8bit: f64,
    pub relative_rmse: f64,
    pub sam_degrees_mean: f64,
    pub sam_skipped_pixels: usize,
    pub per_band_rmse: Vec<f64>,
    pub negative_fraction: f64,
    pub infeasible_pixels: usize,
    /// Free-form settings echoed into the report.
    pub config: Vec<(String, String)>,
}

impl ReconstructionReport {
    /// Scores `est` against `gt`. Negative fraction and infeasible pixels are
    /// taken as given by the reconstruction.
    pub fn evaluate(
        est: &HyperCube,
        gt: &HyperCube,
        negative_fraction: f64,
        infeasible_pixels: usize,
    ) -> Result<Self> {
        let (sam_degrees_mean, sam_skipped_pixels) = sam_mean(est, gt)?;
        let floor = default_floor(gt);
        Ok(Self {
            rmse_8bit: rmse(est, gt, true)?,
            relative_rmse: relative_rmse(est, gt, Some(floor.max(f64::MIN_POSITIVE)))?,
            sam_degrees_mean,
            sam_skipped_pixels,
            per_band_rmse: per_band_rmse(est, gt, true)?,
            negative_fraction,
            infeasible_pixels,
            config: vec![
                ("rmse_scaling".into(), "ground-truth-max-to-255".into()),
                ("relative_floor".into(), floor.to_string()),
            ],
        })
    }

    pub fn to_text(&self) -> String {
        let bands: Vec<String> = self.per_band_rmse.iter().map(f64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "rmse_8bit={}", self.rmse_8bit);
        let _ = writeln!(s, "relative_rmse={}", self.relative_rmse);
        let _ = writeln!(s, "sam_degrees_mean={}", self.sam_degrees_mean);
        let _ = writeln!(s, "sam_skipped_pixels={}", self.sam_skipped_pixels);
        let _ = writeln!(s, "per_band_rmse={}", bands.join(","));
        let _ = writeln!(s, "negative_fraction={}", self.negative_fraction);
        let _ = writeln!(s, "infeasible_pixels={}", self.infeasible_pixels);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Self {
            rmse_8bit: f64::NAN,
            relative_rmse: f64::NAN,
            sam_degrees_mean: f64::NAN,
            sam_skipped_pixels: 0,
            per_band_rmse: Vec::new(),
            negative_fraction: f64::NAN,
            infeasible_pixels: 0,
            config: Vec::new(),
        };
        let mut offset = 0u64;
        for line in text.lines() {
            let here = offset;
            offset += line.len() as u64 + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(here, format!("expected key=value, got {line:?}")))?;
            let bad = || Error::format(here, format!("invalid value for {k}: {v:?}"));
            let real = |v: &str| v.parse::<f64>().map_err(|_| bad());
            match k {
                "rmse_8bit" => r.rmse_8bit = real(v)?,
                "relative_rmse" => r.relative_rmse = real(v)?,
                "sam_degrees_mean" => r.sam_degrees_mean = real(v)?,
                "sam_skipped_pixels" => r.sam_skipped_pixels = v.parse().map_err(|_| bad())?,
                "per_band_rmse" if v.is_empty() => r.per_band_rmse.clear(),
                "per_band_rmse" => r.per_band_rmse = v.split(',').map(real).collect::<Result<_>>()?,
                "negative_fraction" => r.negative_fraction = real(v)?,
                "infeasible_pixels" => r.infeasible_pixels = v.parse().map_err(|_| bad())?,
                k => match k.strip_prefix("config.") {
                    Some(name) => r.config.push((name.to_string(), v.to_string())),
                    None => return Err(Error::format(here, format!("unknown key {k:?}"))),
                },
            }
        }
        for (name, v) in [
            ("rmse_8bit", r.rmse_8bit),
            ("relative_rmse", r.relative_rmse),
            ("sam_degrees_mean", r.sam_degrees_mean),
            ("negative_fraction", r.negative_fraction),
        ] {
            if v.is_nan() {
                return Err(Error::format(offset, format!("report lacks {name}")));
            }
        }
        Ok(r)
    }
}

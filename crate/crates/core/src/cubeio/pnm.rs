//! 8-bit binary PNM previews (P5 grayscale, P6 color).
//!
//! Values map linearly from `[lo, hi]` onto `[0, 255]`, clamped, rounding
//! half away from zero (so the midpoint of `(0, 2)` becomes 128). Without
//! an explicit range `lo`/`hi` are the data min/max.

use std::fs;
use std::path::Path;

use log::warn;

use crate::cube::HyperCube;
use crate::{Error, Result};

fn scale_bytes(values: &[f64], range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(hi > lo) {
                return Err(Error::InvalidParameter(format!("empty display range ({lo}, {hi})")));
            }
            (lo, hi)
        }
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                warn!("constant image, writing all-zero preview");
                return Ok(vec![0; values.len()]);
            }
            (lo, hi)
        }
    };
    let span = hi - lo;
    Ok(values
        .iter()
        .map(|v| ((v - lo) / span * 255.0).clamp(0.0, 255.0).round() as u8)
        .collect())
}

pub fn encode_band_pnm(cube: &HyperCube, band: usize, range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let values = cube.band(band)?;
    let mut out = format!("P5\n{} {}\n255\n", cube.cols(), cube.rows()).into_bytes();
    out.extend(scale_bytes(&values, range)?);
    Ok(out)
}

/// Color preview of a three-band cube, scaled jointly over all channels.
pub fn encode_rgb_pnm(cube: &HyperCube, range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    if cube.bands() != 3 {
        return Err(Error::Dimension(format!("RGB export needs 3 bands, got {}", cube.bands())));
    }
    let mut out = format!("P6\n{} {}\n255\n", cube.cols(), cube.rows()).into_bytes();
    out.extend(scale_bytes(cube.data(), range)?);
    Ok(out)
}

pub fn export_band_pnm(
    cube: &HyperCube,
    band: usize,
    range: Option<(f64, f64)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_band_pnm(cube, band, range)?).map_err(|e| Error::io(path, e))
}

pub fn export_rgb_pnm(cube: &HyperCube, range: Option<(f64, f64)>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_rgb_pnm(cube, range)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(values: &[f64]) -> HyperCube {
        HyperCube::new(2, 2, 1, vec![500.0], values.to_vec()).unwrap()
    }

    #[test]
    fn auto_scaling_hits_extremes() {
        let bytes = encode_band_pnm(&gray(&[0.0, 1.0, 1.0, 0.0]), 0, None).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 255, 0]);
    }

    #[test]
    fn explicit_range_rounds_half_away() {
        let bytes = encode_band_pnm(&gray(&[1.0, 0.0, 2.0, 5.0]), 0, Some((0.0, 2.0))).unwrap();
        assert_eq!(&bytes[11..], &[128, 0, 255, 255]);
    }

    #[test]
    fn constant_band_is_black() {
        let bytes = encode_band_pnm(&gray(&[3.0; 4]), 0, None).unwrap();
        assert_eq!(&bytes[11..], &[0; 4]);
    }

    #[test]
    fn rgb_header_and_errors() {
        let cube = HyperCube::new(1, 2, 3, vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        let bytes = encode_rgb_pnm(&cube, None).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(bytes.len(), 11 + 6);
        assert!(encode_rgb_pnm(&gray(&[0.0; 4]), None).is_err());
        assert!(encode_band_pnm(&gray(&[0.0; 4]), 1, None).is_err());
    }
}

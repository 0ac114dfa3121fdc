//! Camera response tables.
//!
//! One row per hyperspectral band, `wavelength_nm,r,g,b`, ascending in
//! wavelength. Lines starting with `#` and a leading `wavelength...` header
//! are ignored.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::cube::{check_increasing, SpectralTransform};
use crate::{Error, Result};

/// Parses a response table into `T` (3 x L) and its wavelength grid.
pub fn parse_response(text: &str, normalize: bool) -> Result<(SpectralTransform, Vec<f64>)> {
    let mut grid = Vec::new();
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if grid.is_empty() && trimmed.to_ascii_lowercase().starts_with("wavelength") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(here, format!("expected 4 fields, found {}", fields.len())));
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::format(here, format!("invalid number {f:?}")))?;
        }
        grid.push(vals[0]);
        rows.push([vals[1], vals[2], vals[3]]);
    }
    if grid.len() < 2 {
        return Err(Error::format(offset, format!("need at least 2 bands, found {}", grid.len())));
    }
    check_increasing(&grid).map_err(|e| Error::format(0, e.to_string()))?;

    let matrix = DMatrix::from_fn(3, rows.len(), |ch, band| rows[band][ch]);
    let mut t = SpectralTransform::new(matrix)?;
    if normalize {
        t.normalize_rows();
    }
    Ok((t, grid))
}

pub fn read_response(
    path: impl AsRef<Path>,
    normalize: bool,
) -> Result<(SpectralTransform, Vec<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_response(&text, normalize)
}

pub fn encode_response(t: &SpectralTransform, grid: &[f64]) -> Result<String> {
    if t.channels() != 3 || grid.len() != t.bands() {
        return Err(Error::Dimension(format!(
            "response table needs a 3 x {} transform, got {} x {}",
            grid.len(),
            t.channels(),
            t.bands()
        )));
    }
    let m = t.matrix();
    let mut out = String::from("wavelength_nm,r,g,b\n");
    for (b, w) in grid.iter().enumerate() {
        out.push_str(&format!("{w},{},{},{}\n", m[(0, b)], m[(1, b)], m[(2, b)]));
    }
    Ok(out)
}

pub fn write_response(t: &SpectralTransform, grid: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_response(t, grid)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_table() {
        let (t, grid) = parse_response("400,1,0,0\n410,0,1,0\n420,0,0,1\n", false).unwrap();
        assert_eq!(t.matrix(), &DMatrix::identity(3, 3));
        assert_eq!(grid, vec![400.0, 410.0, 420.0]);
    }

    #[test]
    fn shape_and_header() {
        let text = "wavelength_nm,r,g,b\n# comment\n400,0.1,0.2,0.3\n410,0.2,0.2,0.1\n420,0.3,0.1,0.0\n430,0.1,0.0,0.5\n";
        let (t, _) = parse_response(text, false).unwrap();
        assert_eq!((t.channels(), t.bands()), (3, 4));
    }

    #[test]
    fn normalization_flag() {
        let text = "400,0.1,0.2,0.3\n410,0.2,0.2,0.1\n420,0.3,0.1,0.7\n";
        let (t, _) = parse_response(text, true).unwrap();
        for row in t.matrix().row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(parse_response("400,1,0,0\n", false).is_err());
        assert!(parse_response("410,1,0,0\n400,0,1,0\n", false).is_err());
        assert!(parse_response("400,1,0,0\n400,0,1,0\n", false).is_err());
        assert!(parse_response("400,1,0\n410,0,1,0\n", false).is_err());
        assert!(parse_response("400,1,0,nan\n410,0,1,0\n", false).is_err());
    }

    #[test]
    fn encode_round_trip() {
        let m = DMatrix::from_fn(3, 5, |r, c| (r as f64 + 1.0) / (c as f64 + 3.0));
        let t = SpectralTransform::new(m).unwrap();
        let grid = vec![400.0, 410.0, 420.0, 430.0, 440.0];
        let (back, g) = parse_response(&encode_response(&t, &grid).unwrap(), false).unwrap();
        assert_eq!(back, t);
        assert_eq!(g, grid);
    }
}

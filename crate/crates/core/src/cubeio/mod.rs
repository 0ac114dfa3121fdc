//! File formats: HSC1 cubes, camera response tables, binary containers for
//! models and truth sidecars, and PNM previews.
//!
//! An HSC1 file is one ASCII header line followed by the payload:
//!
//! ```text
//! HSC1 rows=<M> cols=<N> bands=<L> wavelengths=<w1>,<w2>,...,<wL>\n
//! <M*N*L little-endian IEEE-754 binary32 values, pixel-major>
//! ```

mod container;
mod model;
mod pnm;
mod response;

use std::fs;
use std::path::Path;

pub use container::{Blob, Container};
pub use model::{decode_model, encode_model, read_model, write_model};
pub use pnm::{encode_band_pnm, encode_rgb_pnm, export_band_pnm, export_rgb_pnm};
pub use response::{encode_response, parse_response, read_response, write_response};

use crate::cube::HyperCube;
use crate::{Error, Result};

pub const CUBE_MAGIC: &str = "HSC1";

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let grid: Vec<String> = cube.wavelengths().iter().map(|w| w.to_string()).collect();
    let header = format!(
        "{CUBE_MAGIC} rows={} cols={} bands={} wavelengths={}\n",
        cube.rows(),
        cube.cols(),
        cube.bands(),
        grid.join(",")
    );
    let mut out = Vec::with_capacity(header.len() + cube.data().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in cube.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(bytes.len() as u64, "missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|e| Error::format(e.valid_up_to() as u64, "header is not UTF-8"))?;

    let mut tokens = header.split(' ');
    if tokens.next() != Some(CUBE_MAGIC) {
        return Err(Error::format(0, format!("bad magic, expected {CUBE_MAGIC}")));
    }
    let (mut rows, mut cols, mut bands, mut grid) = (None, None, None, None);
    let mut offset = CUBE_MAGIC.len() + 1;
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::format(offset as u64, format!("malformed field {tok:?}")))?;
        let bad = |what: &str| Error::format(offset as u64, format!("invalid {what} {value:?}"));
        match key {
            "rows" => rows = Some(value.parse::<usize>().map_err(|_| bad("rows"))?),
            "cols" => cols = Some(value.parse::<usize>().map_err(|_| bad("cols"))?),
            "bands" => bands = Some(value.parse::<usize>().map_err(|_| bad("bands"))?),
            "wavelengths" => {
                let ws: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(str::parse::<f64>).collect();
                grid = Some(ws.map_err(|_| bad("wavelengths"))?);
            }
            _ => return Err(Error::format(offset as u64, format!("unknown field {key:?}"))),
        }
        offset += tok.len() + 1;
    }
    let missing = |f: &str| Error::format(newline as u64, format!("header lacks {f}"));
    let rows = rows.ok_or_else(|| missing("rows"))?;
    let cols = cols.ok_or_else(|| missing("cols"))?;
    let bands = bands.ok_or_else(|| missing("bands"))?;
    let grid = grid.ok_or_else(|| missing("wavelengths"))?;
    if grid.len() != bands {
        return Err(Error::format(
            newline as u64,
            format!("{} wavelengths declared for {bands} bands", grid.len()),
        ));
    }

    let start = newline + 1;
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::format(0, "header dimensions overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < count * 4 {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated payload: {} values declared, {} bytes present",
                count,
                payload.len()
            ),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            (start + count * 4) as u64,
            "trailing bytes after payload",
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HyperCube::new(rows, cols, bands, grid, data).map_err(|e| Error::format(start as u64, e.to_string()))
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cube(cube)).map_err(|e| Error::io(path, e))
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HyperCube {
        HyperCube::new(
            2,
            2,
            3,
            vec![400.0, 410.0, 420.5],
            (0..12).map(f64::from).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        write_cube(&sample(), &path).unwrap();
        assert_eq!(read_cube(&path).unwrap(), sample());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_cube(&sample());
        let head = b"HSC1 rows=2 cols=2 bands=3 wavelengths=400,410,420.5\n";
        assert_eq!(&bytes[..head.len()], head);
        assert_eq!(bytes.len(), head.len() + 48);
        assert_eq!(&bytes[head.len() + 4..head.len() + 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_cube(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_cube(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_cube(&sample());
        let cut = &bytes[..bytes.len() - 12];
        match decode_cube(cut) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, cut.len() as u64);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_header() {
        let mut bytes = b"HSC1 rows=1 cols=1 bands=2 wavelengths=1\n".to_vec();
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_cube(&bytes), Err(Error::Format { .. })));
        let bytes = b"HSC1 rows=1 cols=1 wavelengths=1\n\0\0\0\0".to_vec();
        assert!(matches!(decode_cube(&bytes), Err(Error::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn binary32_values_round_trip_exactly(
            vals in proptest::collection::vec(-1e6f32..1e6, 1..40),
            step in 0.5f64..20.0,
        ) {
            let n = vals.len();
            let grid: Vec<f64> = (0..n).map(|i| 350.0 + step * i as f64).collect();
            let cube = HyperCube::new(1, 1, n, grid, vals.iter().map(|v| *v as f64).collect()).unwrap();
            proptest::prop_assert_eq!(decode_cube(&encode_cube(&cube)).unwrap(), cube);
        }
    }
}

//! Versioned binary container: a text metadata section followed by raw
//! little-endian matrix blobs addressed by declared byte offsets.
//!
//! ```text
//! HSGP <kind> 1\n
//! <key>=<value>\n              (any number, order preserved)
//! blob <name> <rows> <cols> f64le <offset>\n
//! END\n
//! <binary section: column-major IEEE-754 binary64 values>
//! ```
//!
//! Blob offsets are relative to the first byte after `END\n`.

use nalgebra::DMatrix;

use crate::{Error, Result};

const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub matrix: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub blobs: Vec<Blob>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            meta: Vec::new(),
            blobs: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_blob(&mut self, name: impl Into<String>, matrix: DMatrix<f64>) {
        self.blobs.push(Blob {
            name: name.into(),
            matrix,
        });
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(0, format!("missing metadata key {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::format(0, format!("invalid value for {key}: {v:?}")))
    }

    pub fn blob(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.matrix)
            .ok_or_else(|| Error::format(0, format!("missing blob {name:?}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("HSGP {} {VERSION}\n", self.kind);
        for (k, v) in &self.meta {
            head.push_str(&format!("{k}={v}\n"));
        }
        let mut offset = 0usize;
        for b in &self.blobs {
            head.push_str(&format!(
                "blob {} {} {} f64le {offset}\n",
                b.name,
                b.matrix.nrows(),
                b.matrix.ncols()
            ));
            offset += b.matrix.len() * 8;
        }
        head.push_str("END\n");
        let mut out = head.into_bytes();
        out.reserve(offset);
        for b in &self.blobs {
            for v in b.matrix.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(u64, &str)> {
            let start = *pos;
            let len = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(start as u64, "unterminated header line"))?;
            *pos = start + len + 1;
            let line = std::str::from_utf8(&bytes[start..start + len])
                .map_err(|_| Error::format(start as u64, "header is not UTF-8"))?;
            Ok((start as u64, line))
        };

        let (_, first) = next_line(&mut pos)?;
        let parts: Vec<&str> = first.split(' ').collect();
        if parts.len() != 3 || parts[0] != "HSGP" {
            return Err(Error::format(0, "bad magic, expected HSGP"));
        }
        if parts[1] != expected_kind {
            return Err(Error::format(5, format!("expected a {expected_kind} container, found {}", parts[1])));
        }
        if parts[2] != VERSION.to_string() {
            return Err(Error::format(5, format!("unsupported version {}", parts[2])));
        }

        let mut out = Container::new(expected_kind);
        let mut declared = Vec::new();
        loop {
            let (at, line) = next_line(&mut pos)?;
            if line == "END" {
                break;
            }
            if let Some(rest) = line.strip_prefix("blob ") {
                let f: Vec<&str> = rest.split(' ').collect();
                let bad = || Error::format(at, format!("malformed blob entry {line:?}"));
                if f.len() != 5 || f[3] != "f64le" {
                    return Err(bad());
                }
                let rows: usize = f[1].parse().map_err(|_| bad())?;
                let cols: usize = f[2].parse().map_err(|_| bad())?;
                let off: usize = f[4].parse().map_err(|_| bad())?;
                declared.push((at, f[0].to_string(), rows, cols, off));
            } else if let Some((k, v)) = line.split_once('=') {
                out.meta.push((k.to_string(), v.to_string()));
            } else {
                return Err(Error::format(at, format!("unrecognised header line {line:?}")));
            }
        }

        let body = &bytes[pos..];
        for (at, name, rows, cols, off) in declared {
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::format(at, "blob size overflow"))?;
            let end = off
                .checked_add(len)
                .filter(|&e| e <= body.len())
                .ok_or_else(|| {
                    Error::format((pos + body.len()) as u64, format!("blob {name:?} truncated"))
                })?;
            let vals: Vec<f64> = body[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.push_blob(name, DMatrix::from_vec(rows, cols, vals));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = Container::new("truth");
        c.push_meta("bands", 3);
        c.push_meta("note", "a=b");
        c.push_blob("a", DMatrix::from_fn(3, 2, |r, k| (r as f64 + 0.1) / (k as f64 + 7.0)));
        c.push_blob("empty", DMatrix::zeros(0, 4));
        c.push_blob("b", DMatrix::from_element(1, 1, -0.0));
        let bytes = c.encode();
        let back = Container::decode(&bytes, "truth").unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.meta("note").unwrap(), "a=b");
        assert_eq!(back.blob("a").unwrap(), c.blob("a").unwrap());
    }

    #[test]
    fn detects_corruption() {
        let mut c = Container::new("model");
        c.push_blob("x", DMatrix::from_element(2, 2, 1.0));
        let bytes = c.encode();
        assert!(Container::decode(&bytes, "truth").is_err());
        assert!(Container::decode(&bytes[..bytes.len() - 1], "model").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::decode(&bad, "model"), Err(Error::Format { offset: 0, .. })));
    }
}

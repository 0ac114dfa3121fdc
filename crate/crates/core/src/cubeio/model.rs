//! Trained model files: a `model` container holding the config snapshot,
//! the camera transform and every cluster's matrices.
//!
//! Matrices are stored as binary64 so a save/load cycle reproduces them
//! bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::container::Container;
use crate::config::TrainConfig;
use crate::cube::SpectralTransform;
use crate::pipeline::{ClusterModel, TrainedModel};
use crate::{Error, Result};

const KIND: &str = "model";

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut c = Container::new(KIND);
    for (k, v) in model.config.to_pairs() {
        c.push_meta(k, v);
    }
    c.push_meta("cluster_count", model.clusters.len());
    c.push_meta("total_atoms", model.total_atoms());
    let grid: Vec<String> = model.wavelengths.iter().map(f64::to_string).collect();
    c.push_meta("wavelengths", grid.join(","));
    for (i, m) in model.clusters.iter().enumerate() {
        c.push_meta(format!("atoms_{i}"), m.atoms());
        if let Some(l) = m.lambda_eps {
            c.push_meta(format!("lambda_eps_{i}"), l);
        }
    }
    c.push_blob("transform", model.transform.matrix().clone());
    for (i, m) in model.clusters.iter().enumerate() {
        c.push_blob(format!("phi_{i}"), m.phi.clone());
        c.push_blob(format!("phi_rgb_{i}"), m.phi_rgb.clone());
        c.push_blob(format!("centroid_{i}"), column(&m.centroid));
        c.push_blob(format!("usage_{i}"), column(&m.usage));
    }
    Ok(c.encode())
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let c = Container::decode(bytes, KIND)?;
    let mut config = TrainConfig::default();
    for (k, v) in &c.meta {
        match k.as_str() {
            "cluster_count" | "total_atoms" | "wavelengths" => {}
            k if k.starts_with("atoms_") || k.starts_with("lambda_eps_") => {}
            k => config.set(k, v).map_err(|e| Error::format(0, e.to_string()))?,
        }
    }
    let count: usize = c.meta_parse("cluster_count")?;
    let wavelengths = c
        .meta("wavelengths")?
        .split(',')
        .map(|w| w.parse::<f64>().map_err(|_| Error::format(0, format!("bad wavelength {w:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let transform = SpectralTransform::new(c.blob("transform")?.clone())
        .map_err(|e| Error::format(0, e.to_string()))?;

    let mut clusters = Vec::with_capacity(count);
    for i in 0..count {
        let lambda_key = format!("lambda_eps_{i}");
        let lambda_eps = if c.meta.iter().any(|(k, _)| *k == lambda_key) {
            Some(c.meta_parse(&lambda_key)?)
        } else {
            None
        };
        let atoms: usize = c.meta_parse(&format!("atoms_{i}"))?;
        let m = ClusterModel {
            phi: c.blob(&format!("phi_{i}"))?.clone(),
            phi_rgb: c.blob(&format!("phi_rgb_{i}"))?.clone(),
            centroid: c.blob(&format!("centroid_{i}"))?.as_slice().to_vec(),
            usage: c.blob(&format!("usage_{i}"))?.as_slice().to_vec(),
            lambda_eps,
        };
        if m.atoms() != atoms {
            return Err(Error::format(0, format!("cluster {i} declares {atoms} atoms, stores {}", m.atoms())));
        }
        clusters.push(m);
    }
    let model = TrainedModel {
        transform,
        wavelengths,
        config,
        clusters,
    };
    model.validate().map_err(|e| Error::format(0, e.to_string()))?;
    let total: usize = c.meta_parse("total_atoms")?;
    if total != model.total_atoms() {
        return Err(Error::format(0, format!("total_atoms is {total}, clusters hold {}", model.total_atoms())));
    }
    Ok(model)
}

pub fn write_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

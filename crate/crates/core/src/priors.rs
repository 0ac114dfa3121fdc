//! Non-negative sparse factorization `Y ≈ D A` used for the prior means of
//! the representation model.
//!
//! Minimises `‖Y − DA‖²_F` subject to `‖a_i‖₁ ≤ δ`, `A ≥ 0`, `D ≥ 0` and
//! `‖d_k‖₂ ≤ 1`. Each alternation codes every column exactly with the
//! budgeted homotopy solver, then runs one pass of block-coordinate descent
//! over the atoms. Both half-steps are exact block minimisations, so the
//! objective never increases.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::coder::Coder;
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct PriorFactorization {
    /// `L x K` non-negative dictionary; columns are the atom prior means.
    pub dict: DMatrix<f64>,
    /// `K x N` non-negative codes; entries are the weight prior means.
    pub codes: DMatrix<f64>,
    pub delta: f64,
    /// `‖Y − DA‖²_F` at initialisation and after every alternation.
    pub objective: Vec<f64>,
}

impl PriorFactorization {
    /// Number of columns that use each atom.
    pub fn usage(&self) -> Vec<usize> {
        self.codes
            .row_iter()
            .map(|r| r.iter().filter(|&&v| v > 0.0).count())
            .collect()
    }
}

pub fn objective(y: &DMatrix<f64>, d: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (y - d * a).norm_squared()
}

/// Projection onto `{d ≥ 0, ‖d‖₂ ≤ 1}`.
fn project_atom(mut v: DVector<f64>) -> DVector<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let n = v.norm();
    if n > 1.0 {
        v /= n;
    }
    v
}

fn random_atom(bands: usize, rng: &mut impl Rng) -> DVector<f64> {
    let v = DVector::from_fn(bands, |_, _| rng.random_range(0.0..1.0));
    let n = v.norm();
    v / n
}

fn code_all(coder: &Coder, y: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let k = coder.dict().ncols();
    let cols: Vec<Vec<f64>> = (0..y.ncols())
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = y.column(i).iter().copied().collect();
            coder.l1_budget(&col, delta).map(|c| c.dense(k))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(k, y.ncols(), |r, c| cols[c][r]))
}

pub fn factorize(
    y: &DMatrix<f64>,
    atoms: usize,
    delta: f64,
    seed: u64,
    epochs: usize,
) -> Result<PriorFactorization> {
    factorize_with_stream(y, atoms, delta, seed, 0, epochs)
}

/// As [`factorize`], drawing from stream index `stream_index` (the cluster id
/// in the training pipeline).
pub fn factorize_with_stream(
    y: &DMatrix<f64>,
    atoms: usize,
    delta: f64,
    seed: u64,
    stream_index: u64,
    epochs: usize,
) -> Result<PriorFactorization> {
    let (bands, n) = y.shape();
    if atoms == 0 || bands == 0 {
        return Err(Error::InvalidParameter("factorization needs at least one atom and band".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    if let Some(i) = y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "training data must be finite and non-negative (entry {i})"
        )));
    }
    if atoms > n {
        warn!("factorizing {n} columns with {atoms} atoms (over-complete)");
    }

    let mut rng = rng::stream(seed, Stream::Priors, stream_index);
    let mut dict = DMatrix::zeros(bands, atoms);
    let picked = index::sample(&mut rng, n, atoms.min(n)).into_vec();
    for (j, &i) in picked.iter().enumerate() {
        let col = y.column(i).clone_owned();
        let norm = col.norm();
        let atom = if norm > 0.0 { col / norm } else { random_atom(bands, &mut rng) };
        dict.set_column(j, &atom);
    }
    for j in picked.len()..atoms {
        dict.set_column(j, &random_atom(bands, &mut rng));
    }

    let mut codes = DMatrix::zeros(atoms, n);
    let mut history = vec![y.norm_squared()];
    for _ in 0..epochs {
        let coder = Coder::new(dict.clone())?;
        codes = code_all(&coder, y, delta)?;

        let mut resid = y - &dict * &codes;
        for j in 0..atoms {
            let a = codes.row(j).transpose();
            let s = a.norm_squared();
            if s == 0.0 {
                continue;
            }
            let old = dict.column(j).clone_owned();
            resid += &old * a.transpose();
            let target = &resid * &a / s;
            let new = project_atom(target);
            resid -= &new * a.transpose();
            dict.set_column(j, &new);
        }

        let unused: Vec<usize> = (0..atoms)
            .filter(|&j| codes.row(j).iter().all(|&v| v == 0.0))
            .collect();
        if !unused.is_empty() && n > 0 {
            let mut worst: Vec<(usize, f64)> = resid
                .column_iter()
                .enumerate()
                .map(|(i, c)| (i, c.norm_squared()))
                .collect();
            worst.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (&j, &(i, _)) in unused.iter().zip(&worst) {
                let col = y.column(i).clone_owned();
                let norm = col.norm();
                if norm > 0.0 {
                    dict.set_column(j, &(col / norm));
                }
            }
        }

        history.push(resid.norm_squared());
    }

    Ok(PriorFactorization {
        dict,
        codes,
        delta,
        objective: history,
    })
}

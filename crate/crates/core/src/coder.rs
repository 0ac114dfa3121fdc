//! Non-negative sparse coding by homotopy (LARS-Lasso with a positivity
//! constraint).
//!
//! The path of `argmin ½‖y − Dβ‖² + λ·Σβ, β ≥ 0` is traced from `λ = max(Dᵀy)`
//! down towards zero, one breakpoint at a time. Along each segment the
//! active coefficients move linearly, the residual norm falls and `‖β‖₁`
//! grows, so the path can be cut exactly where either
//!
//! * the squared residual first reaches `δ₁` (minimum-l1 coding, used at
//!   reconstruction time), or
//! * `‖β‖₁` reaches a budget `δ` (used by the prior factorization).

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Non-zero coefficients of a code over a `K`-atom dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// `‖y − Dβ‖₂`, recomputed from the returned coefficients.
    pub residual_norm: f64,
    /// The stopping constraint could not be met; `β` is the path end.
    pub infeasible: bool,
    /// Path breakpoints visited.
    pub steps: usize,
}

impl SparseCode {
    pub fn dense(&self, atoms: usize) -> Vec<f64> {
        let mut out = vec![0.0; atoms];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ β_k d_k` for an arbitrary dictionary with the same atom count.
    pub fn synthesize(&self, dict: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; dict.nrows()];
        for (&k, &v) in self.indices.iter().zip(&self.values) {
            for (o, d) in out.iter_mut().zip(dict.column(k).iter()) {
                *o += v * d;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Stop {
    Residual(f64),
    Budget(f64),
}

/// A dictionary with its Gram matrix cached for repeated coding.
#[derive(Clone, Debug)]
pub struct Coder {
    dict: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Coder {
    pub fn new(dict: DMatrix<f64>) -> Result<Self> {
        if dict.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite dictionary entry".into()));
        }
        let gram = dict.transpose() * &dict;
        Ok(Self { dict, gram })
    }

    pub fn dict(&self) -> &DMatrix<f64> {
        &self.dict
    }

    /// `min ‖β‖₁  s.t. ‖y − Dβ‖² ≤ δ₁, β ≥ 0`.
    pub fn min_l1(&self, y: &[f64], delta1: f64) -> Result<SparseCode> {
        if !(delta1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta1 must be >= 0, got {delta1}")));
        }
        self.trace(y, Stop::Residual(delta1))
    }

    /// `min ‖y − Dβ‖²  s.t. ‖β‖₁ ≤ δ, β ≥ 0`.
    pub fn l1_budget(&self, y: &[f64], delta: f64) -> Result<SparseCode> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        self.trace(y, Stop::Budget(delta))
    }

    fn trace(&self, y: &[f64], stop: Stop) -> Result<SparseCode> {
        let d = &self.dict;
        let (n, k) = d.shape();
        if y.len() != n {
            return Err(Error::Dimension(format!("signal has {} entries, dictionary rows {n}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite signal".into()));
        }
        let y = DVector::from_column_slice(y);
        let y_norm2 = y.norm_squared();
        let feasible_slack = (1e-12 * y_norm2.sqrt()).powi(2);

        let mut beta = DVector::<f64>::zeros(k);
        let mut active: Vec<usize> = Vec::new();
        let mut r = y.clone();
        let mut steps = 0;

        let done_at_zero = match stop {
            Stop::Residual(d1) => y_norm2 <= d1,
            Stop::Budget(b) => b <= 0.0,
        };

        if !done_at_zero && k > 0 {
            let mut c = d.tr_mul(&r);
            let (first, lambda0) = argmax(c.as_slice(), |_| true);
            let mut lambda = lambda0;
            // events this close to the path end are rounding artefacts of ties
            let tol = 1e-12 * lambda0;
            if lambda > 0.0 {
                active.push(first);
            }
            let mut just_dropped: Option<usize> = None;
            let mut best_res = f64::INFINITY;
            let mut stalled = 0;

            while !active.is_empty() && lambda > 0.0 && steps < 4 * k {
                steps += 1;
                let m = active.len();
                let g = DMatrix::from_fn(m, m, |a, b| self.gram[(active[a], active[b])]);
                let Some(chol) = g.cholesky() else {
                    break;
                };
                let w = chol.solve(&DVector::from_element(m, 1.0));
                let mut u = DVector::<f64>::zeros(n);
                for (a, &j) in active.iter().enumerate() {
                    u.axpy(w[a], &d.column(j), 1.0);
                }
                let corr = d.tr_mul(&u);

                enum Event {
                    End,
                    Join(usize),
                    Drop(usize),
                }
                let mut gamma = lambda;
                let mut event = Event::End;
                for j in 0..k {
                    if active.contains(&j) || Some(j) == just_dropped {
                        continue;
                    }
                    let denom = 1.0 - corr[j];
                    if denom <= 1e-12 {
                        continue;
                    }
                    let g_j = ((lambda - c[j]) / denom).max(0.0);
                    if g_j < gamma {
                        gamma = g_j;
                        event = Event::Join(j);
                    }
                }
                for (a, &j) in active.iter().enumerate() {
                    if w[a] < 0.0 {
                        let g_j = -beta[j] / w[a];
                        if g_j < gamma {
                            gamma = g_j;
                            event = Event::Drop(j);
                        }
                    }
                }

                if lambda - gamma <= tol {
                    gamma = lambda;
                    event = Event::End;
                }

                let cut = match stop {
                    Stop::Budget(b) => {
                        let slope: f64 = w.sum();
                        let l1 = beta.sum();
                        (slope > 0.0).then(|| (b - l1) / slope).filter(|&g| g <= gamma + tol)
                    }
                    Stop::Residual(d1) => {
                        // ‖r − γu‖² = uu (γ − γ*)² + m; smallest γ where it reaches δ₁
                        let uu = u.norm_squared();
                        if uu > 0.0 {
                            let g_star = r.dot(&u) / uu;
                            let m = (&r - &u * g_star).norm_squared();
                            let g = (g_star - ((d1 - m).max(0.0) / uu).sqrt()).max(0.0);
                            (m <= d1 && g <= gamma + tol).then_some(g)
                        } else {
                            None
                        }
                    }
                };

                let step = cut.unwrap_or(gamma);
                for (a, &j) in active.iter().enumerate() {
                    beta[j] = (beta[j] + step * w[a]).max(0.0);
                }
                lambda -= step;
                if cut.is_some() {
                    break;
                }
                match event {
                    Event::End => break,
                    Event::Join(j) => {
                        active.push(j);
                        just_dropped = None;
                    }
                    Event::Drop(j) => {
                        beta[j] = 0.0;
                        active.retain(|&a| a != j);
                        just_dropped = Some(j);
                    }
                }
                r = &y - d * &beta;
                c = d.tr_mul(&r);

                let res = r.norm_squared();
                if res < best_res {
                    best_res = res;
                    stalled = 0;
                } else {
                    stalled += 1;
                    if stalled >= 3 {
                        break;
                    }
                }
            }
        }

        let r = &y - d * &beta;
        let res2 = r.norm_squared();
        let infeasible = match stop {
            Stop::Residual(d1) => res2 > d1 + feasible_slack,
            Stop::Budget(_) => false,
        };
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (j, &v) in beta.iter().enumerate() {
            if v > 0.0 {
                indices.push(j);
                values.push(v);
            }
        }
        Ok(SparseCode {
            indices,
            values,
            residual_norm: res2.sqrt(),
            infeasible,
            steps,
        })
    }
}

fn argmax(v: &[f64], keep: impl Fn(usize) -> bool) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if keep(i) && x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Minimum-l1 non-negative code meeting `‖y − Dβ‖² ≤ δ₁`.
pub fn code_min_l1(y: &[f64], dict: &DMatrix<f64>, delta1: f64) -> Result<SparseCode> {
    Coder::new(dict.clone())?.min_l1(y, delta1)
}

/// Least-squares non-negative code with `‖β‖₁ ≤ δ`.
pub fn code_l1_budget(y: &[f64], dict: &DMatrix<f64>, delta: f64) -> Result<SparseCode> {
    Coder::new(dict.clone())?.l1_budget(y, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_dict(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0));
        for mut c in d.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        d
    }

    /// Exhaustive oracle: least squares on every support up to `max_support`
    /// atoms; keeps non-negative solutions and returns the best one.
    fn support_oracle(
        y: &[f64],
        d: &DMatrix<f64>,
        max_support: usize,
        objective: impl Fn(&[f64], f64) -> Option<f64>,
    ) -> Option<(Vec<usize>, Vec<f64>)> {
        let k = d.ncols();
        let y = DVector::from_column_slice(y);
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        let mut supports: Vec<Vec<usize>> = Vec::new();
        for a in 0..k {
            supports.push(vec![a]);
            for b in a + 1..k {
                supports.push(vec![a, b]);
                for c in b + 1..k {
                    supports.push(vec![a, b, c]);
                }
            }
        }
        for s in supports.into_iter().filter(|s| s.len() <= max_support) {
            let sub = DMatrix::from_fn(d.nrows(), s.len(), |r, c| d[(r, s[c])]);
            let Some(inv) = (sub.transpose() * &sub).try_inverse() else { continue };
            let x = inv * sub.transpose() * &y;
            if x.iter().any(|&v| v < -1e-12) {
                continue;
            }
            let res = (&y - &sub * &x).norm_squared();
            if let Some(score) = objective(x.as_slice(), res) {
                let better = best.as_ref().is_none_or(|b| {
                    score < b.0 - 1e-12 || (score <= b.0 + 1e-12 && s.len() < b.1.len())
                });
                if better {
                    best = Some((score, s.clone(), x.as_slice().to_vec()));
                }
            }
        }
        best.map(|(_, s, x)| (s, x))
    }

    #[test]
    fn scaled_atom_is_recovered_exactly() {
        let d = unit_dict(3, 10, 1);
        let y: Vec<f64> = d.column(4).iter().map(|v| 3.0 * v).collect();
        let code = code_min_l1(&y, &d, 1e-21).unwrap();
        assert_eq!(code.indices, vec![4]);
        assert!((code.values[0] - 3.0).abs() < 1e-9);
        assert!(!code.infeasible);
        let (s, x) = support_oracle(&y, &d, 2, |x, res| (res < 1e-20).then(|| x.iter().sum())).unwrap();
        assert_eq!(s, code.indices);
        assert!((x[0] - code.values[0]).abs() < 1e-9);
    }

    #[test]
    fn zero_signal() {
        let d = unit_dict(3, 5, 2);
        let code = code_min_l1(&[0.0; 3], &d, 1e-21).unwrap();
        assert!(code.indices.is_empty());
        assert_eq!(code.residual_norm, 0.0);
        assert!(!code.infeasible);
    }

    #[test]
    fn negative_signal_is_infeasible() {
        let d = unit_dict(3, 6, 3);
        let y: Vec<f64> = d.column(2).iter().map(|v| -v).collect();
        let code = code_min_l1(&y, &d, 0.5).unwrap();
        assert!(code.infeasible);
        assert!(code.indices.is_empty());
        // NNLS oracle: no non-negative combination gets below ‖y‖² = 1
        let best = support_oracle(&y, &d, 3, |_, res| Some(res)).map_or(1.0, |(s, x)| {
            let sub = DMatrix::from_fn(3, s.len(), |r, c| d[(r, s[c])]);
            (DVector::from_column_slice(&y) - sub * DVector::from_vec(x)).norm_squared()
        });
        assert!(best > 0.5);
    }

    #[test]
    fn nan_input_is_rejected() {
        let d = unit_dict(3, 4, 4);
        assert!(matches!(code_min_l1(&[f64::NAN, 0.0, 0.0], &d, 1e-3), Err(Error::Numerical(_))));
    }

    #[test]
    fn budget_examples() {
        let d = unit_dict(5, 8, 5);
        let y: Vec<f64> = d.column(6).iter().map(|v| 0.005 * v).collect();
        assert!(code_l1_budget(&y, &d, 0.0).unwrap().indices.is_empty());
        let code = code_l1_budget(&y, &d, 0.01).unwrap();
        assert_eq!(code.indices, vec![6]);
        assert!((code.values[0] - 0.005).abs() < 1e-12);

        let y: Vec<f64> = d.column(1).iter().zip(d.column(3).iter()).map(|(a, b)| 2.0 * a + b).collect();
        let code = code_l1_budget(&y, &d, 0.5).unwrap();
        assert!((code.l1() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn budget_solution_matches_oracle() {
        // the constrained optimum minimises the residual over all supports
        // whose least-squares fit also respects the budget; compare values
        for seed in 0..20 {
            let d = unit_dict(4, 6, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let code = code_l1_budget(&y, &d, 10.0).unwrap();
            // generous budget: equals the NNLS optimum
            let best_res = support_oracle(&y, &d, 3, |_, res| Some(res))
                .map(|(s, x)| {
                    let sub = DMatrix::from_fn(4, s.len(), |r, c| d[(r, s[c])]);
                    (DVector::from_column_slice(&y) - sub * DVector::from_vec(x)).norm_squared()
                })
                .unwrap();
            assert!(code.residual_norm.powi(2) <= best_res + 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn codes_are_non_negative_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50 {
            let d = unit_dict(3, 10, seed);
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-0.2..1.0)).collect();
            for code in [code_min_l1(&y, &d, 1e-6).unwrap(), code_l1_budget(&y, &d, 0.7).unwrap()] {
                assert!(code.values.iter().all(|&v| v >= 0.0));
                let fit = code.synthesize(&d);
                let res: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((res - code.residual_norm).abs() < 1e-9);
            }
            let code = code_min_l1(&y, &d, 1e-6).unwrap();
            if !code.infeasible {
                assert!(code.residual_norm.powi(2) <= 1e-6 + 1e-9);
            }
            assert!(code_l1_budget(&y, &d, 0.7).unwrap().l1() <= 0.7 + 1e-9);
        }
    }

    #[test]
    fn duplicate_atoms_prefer_lowest_index() {
        let mut d = unit_dict(3, 4, 9);
        let c1 = d.column(1).clone_owned();
        d.set_column(3, &c1);
        let y: Vec<f64> = c1.iter().map(|v| 2.0 * v).collect();
        let code = code_min_l1(&y, &d, 1e-21).unwrap();
        assert_eq!(code.indices, vec![1]);
    }
}

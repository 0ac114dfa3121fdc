//! Gaussian Process representation model and its Gibbs sampler.
//!
//! Every pixel `y_i ∈ R^L` of a cluster is modelled as
//!
//! ```text
//! y_i = Φ (z_i ⊙ s_i) + ε,            ε ~ N(0, λ_ε⁻¹ I)
//! φ_k ~ N(μ_k°, R / η_k),             η_k ~ Gam(a_o, b_o)
//! z_ik ~ Bern(π_k),                   π_k ~ Beta(c_o/Q, d_o(Q−1)/Q)
//! s_ik ~ N(μ_ik°, λ_s⁻¹),             λ_s ~ Gam(e_o, f_o)
//!                                     λ_ε ~ Gam(g_o, h_o)
//! ```
//!
//! with `R` the exponential spectral kernel of [`KernelMatrix`] and prior
//! means taken from a [`PriorFactorization`]. All conditionals are
//! conjugate; [`GibbsChain`] exposes each of them and [`run_gibbs`] runs the
//! full sampler and averages the post burn-in atoms.

pub mod dist;
mod kernel;
mod state;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub use kernel::KernelMatrix;
pub use state::{BetaParams, GammaParams, GibbsChain, GibbsState, NormalParams, PhiConditional};

use crate::config::{KernelDistance, ModelConfig};
use crate::priors::PriorFactorization;
use crate::{Error, Result};

/// Monte Carlo summary of a chain.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// `L x K` average of the post burn-in atom samples.
    pub phi_mean: DMatrix<f64>,
    /// Post burn-in average of every `π_k`.
    pub usage: DVector<f64>,
    pub final_lambda_eps: f64,
    pub final_lambda_s: f64,
    pub samples: usize,
}

/// Kernel for `bands` channels under the configured distance.
pub fn build_kernel(config: &ModelConfig, wavelengths: &[f64]) -> Result<KernelMatrix> {
    match config.kernel_distance {
        KernelDistance::ChannelIndex => KernelMatrix::channel_index(wavelengths.len(), config.length_scale),
        KernelDistance::Nanometers => KernelMatrix::new(wavelengths, config.length_scale),
    }
}

/// Runs `config.gibbs_iters` sweeps from [`GibbsState::initial`] and averages
/// `Φ` over the sweeps after `config.burn_in`.
pub fn run_gibbs(
    y: &DMatrix<f64>,
    priors: &PriorFactorization,
    config: &ModelConfig,
    kernel: KernelMatrix,
    rng: &mut impl Rng,
) -> Result<PosteriorSummary> {
    config.validate()?;
    if priors.codes.ncols() != y.ncols() || priors.dict.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "priors are {}x{} / {}x{} for data {}x{}",
            priors.dict.nrows(),
            priors.dict.ncols(),
            priors.codes.nrows(),
            priors.codes.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let state = GibbsState::initial(priors, config);
    let mut chain = GibbsChain::new(y.clone(), kernel, config.clone(), state)?;
    let (l, k) = priors.dict.shape();
    let mut phi_sum = DMatrix::zeros(l, k);
    let mut pi_sum = DVector::zeros(k);
    let mut samples = 0;
    for iter in 0..config.gibbs_iters {
        chain.sweep(iter, rng)?;
        if iter >= config.burn_in {
            phi_sum += &chain.state().phi;
            pi_sum += &chain.state().pi;
            samples += 1;
        }
        if iter % 50 == 0 {
            debug!(
                "gibbs iter {iter}: lambda_eps {:.4e}, lambda_s {:.4e}, active {}",
                chain.state().lambda_eps,
                chain.state().lambda_s,
                chain.state().z.iter().filter(|&&z| z == 1).count()
            );
        }
    }
    let st = chain.state();
    Ok(PosteriorSummary {
        phi_mean: phi_sum / samples as f64,
        usage: pi_sum / samples as f64,
        final_lambda_eps: st.lambda_eps,
        final_lambda_s: st.lambda_s,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EtaQuadratic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_chain(l: usize, k: usize, n: usize, seed: u64) -> GibbsChain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(l, n, |_, _| rng.random_range(0.0..1.0));
        let state = GibbsState {
            phi: DMatrix::from_fn(l, k, |_, _| rng.random_range(0.0..1.0)),
            eta: DVector::from_fn(k, |_, _| rng.random_range(0.5..2.0)),
            z: DMatrix::from_fn(k, n, |_, _| u8::from(rng.random_bool(0.5))),
            s: DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..1.0)),
            pi: DVector::from_fn(k, |_, _| rng.random_range(0.1..0.9)),
            lambda_s: 3.0,
            lambda_eps: 50.0,
            mu_phi: DMatrix::from_fn(l, k, |_, _| rng.random_range(0.0..1.0)),
            mu_s: DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..0.5)),
        };
        let kernel = KernelMatrix::channel_index(l, 3.0).unwrap();
        GibbsChain::new(y, kernel, ModelConfig::default(), state).unwrap()
    }

    fn direct_residual(chain: &GibbsChain, i: usize, k: usize) -> DVector<f64> {
        let st = chain.state();
        let mut r = chain.data().column(i).clone_owned();
        for j in 0..st.atoms() {
            if j != k {
                r -= st.phi.column(j) * (f64::from(st.z[(j, i)]) * st.s[(j, i)]);
            }
        }
        r
    }

    #[test]
    fn residual_examples() {
        let mut chain = toy_chain(4, 3, 6, 1);
        for k in 0..3 {
            chain.set_zs(0, k, 0, 0.7);
        }
        assert_eq!(chain.residual(0, 1), chain.data().column(0).clone_owned());
        chain.set_zs(0, 2, 1, 0.7);
        let r = chain.residual(0, 2);
        assert!((r - chain.data().column(0)).norm() < 1e-15);

        // incremental updates agree with direct recomputation
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            chain.sweep(0, &mut rng).unwrap();
        }
        let phi = chain.state().phi.column(1) * 1.3;
        chain.set_phi(1, phi);
        chain.set_zs(3, 0, 1, -0.4);
        for i in 0..6 {
            for k in 0..3 {
                assert!((chain.residual(i, k) - direct_residual(&chain, i, k)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn phi_without_data_is_prior() {
        let mut chain = toy_chain(4, 2, 5, 2);
        for i in 0..5 {
            chain.set_zs(i, 0, 0, 0.3);
        }
        let cond = chain.phi_conditional(0).unwrap();
        assert!((&cond.mean - chain.state().mu_phi.column(0)).norm() < 1e-12);
        let cov = cond.covariance();
        let prior_cov = chain.kernel().matrix() / chain.state().eta[0];
        assert!((cov - &prior_cov).abs().max() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut sum = DVector::zeros(4);
        for _ in 0..n {
            sum += chain.sample_phi(0, &mut rng).unwrap();
        }
        let mean = sum / n as f64;
        for d in 0..4 {
            let se = (prior_cov[(d, d)] / n as f64).sqrt();
            assert!((mean[d] - chain.state().mu_phi[(d, 0)]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn phi_follows_data_when_noise_vanishes() {
        let mut chain = toy_chain(4, 1, 1, 4);
        chain.set_zs(0, 0, 1, 1.0);
        chain.set_lambda_eps(1e12);
        let cond = chain.phi_conditional(0).unwrap();
        let target = chain.residual(0, 0);
        assert!((cond.mean - target).norm() < 1e-9);
    }

    #[test]
    fn phi_matches_conjugate_posterior() {
        // L = 3, fixed Z and S: Bayesian linear-Gaussian update assembled by hand
        let chain = toy_chain(3, 2, 7, 6);
        let st = chain.state();
        let r = chain.kernel().matrix().clone();
        let prior_cov = &r / st.eta[1];
        let prior_prec = prior_cov.clone().try_inverse().unwrap();
        let mut info = prior_prec.clone();
        let mut shift = &prior_prec * st.mu_phi.column(1);
        for i in 0..7 {
            let a = f64::from(st.z[(1, i)]) * st.s[(1, i)];
            info += DMatrix::identity(3, 3) * (st.lambda_eps * a * a);
            shift += direct_residual(&chain, i, 1) * (st.lambda_eps * a);
        }
        let cov = info.try_inverse().unwrap();
        let mean = &cov * shift;
        let cond = chain.phi_conditional(1).unwrap();
        assert!((&cond.mean - mean).norm() < 1e-10);
        assert!((cond.covariance() - cov).abs().max() < 1e-10);
    }

    #[test]
    fn eta_examples() {
        let mut chain = toy_chain(4, 2, 3, 7);
        let mu = chain.state().mu_phi.column(0).clone_owned();
        chain.set_phi(0, mu);
        let p = chain.eta_conditional(0);
        assert_eq!(p.shape, 1e-6 + 2.0);
        assert_eq!(p.rate, 1e-6);

        let p = chain.eta_conditional(1);
        let d = chain.state().phi.column(1) - chain.state().mu_phi.column(1);
        let inv = chain.kernel().matrix().clone().try_inverse().unwrap();
        let mut quad = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                quad += d[a] * inv[(a, b)] * d[b];
            }
        }
        assert!((p.rate - (1e-6 + 0.5 * quad)).abs() < 1e-10);
    }

    #[test]
    fn eta_scalar_case_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = DMatrix::from_fn(1, 2, |_, _| rng.random_range(0.0..1.0));
        let state = GibbsState {
            phi: DMatrix::from_element(1, 1, 0.9),
            eta: DVector::from_element(1, 1.0),
            z: DMatrix::from_element(1, 2, 1),
            s: DMatrix::from_element(1, 2, 0.5),
            pi: DVector::from_element(1, 0.5),
            lambda_s: 1.0,
            lambda_eps: 1.0,
            mu_phi: DMatrix::from_element(1, 1, 0.4),
            mu_s: DMatrix::zeros(1, 2),
        };
        let kernel = KernelMatrix::channel_index(1, 3.0).unwrap();
        let mut config = ModelConfig::default();
        let a = GibbsChain::new(y.clone(), kernel.clone(), config.clone(), state.clone()).unwrap();
        config.eta_quadratic = EtaQuadratic::Kernel;
        let b = GibbsChain::new(y, kernel, config, state).unwrap();
        let expected = 1e-6 + 0.5 * 0.5f64.powi(2);
        assert!((a.eta_conditional(0).rate - expected).abs() < 1e-15);
        assert!((b.eta_conditional(0).rate - expected).abs() < 1e-15);
    }

    #[test]
    fn z_examples() {
        let mut chain = toy_chain(4, 3, 4, 9);
        chain.set_zs(1, 2, 1, 0.0);
        assert!((chain.z_conditional(1, 2) - chain.state().pi[2]).abs() < 1e-15);
        chain.set_phi(0, DVector::zeros(4));
        assert!((chain.z_conditional(2, 0) - chain.state().pi[0]).abs() < 1e-15);
    }

    #[test]
    fn z_matches_likelihood_ratio() {
        let chain = toy_chain(4, 3, 5, 10);
        let st = chain.state();
        for i in 0..5 {
            for k in 0..3 {
                let base = direct_residual(&chain, i, k);
                let s = st.s[(k, i)];
                let lam = st.lambda_eps;
                // log N(y | mean, λ⁻¹I) up to a shared constant
                let loglik = |v: &DVector<f64>| -0.5 * lam * v.norm_squared();
                let l1 = loglik(&(&base - st.phi.column(k) * s)) + st.pi[k].ln();
                let l0 = loglik(&base) + (1.0 - st.pi[k]).ln();
                let m = l1.max(l0);
                let p = (l1 - m).exp() / ((l1 - m).exp() + (l0 - m).exp());
                assert!((chain.z_conditional(i, k) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn s_examples() {
        let mut chain = toy_chain(4, 2, 3, 11);
        chain.set_zs(0, 1, 0, 0.2);
        let p = chain.s_conditional(0, 1);
        assert_eq!(p.precision, chain.state().lambda_s);
        assert_eq!(p.mean, chain.state().mu_s[(1, 0)]);

        let mut phi = DVector::from_vec(vec![1.0, 2.0, 0.5, 1.0]);
        phi /= phi.norm();
        chain.set_phi(0, phi.clone());
        chain.set_zs(2, 0, 1, 0.3);
        chain.set_lambda_eps(1e13);
        let p = chain.s_conditional(2, 0);
        assert!((p.mean - phi.dot(&chain.residual(2, 0))).abs() < 1e-9);

        // scalar conjugate update
        chain.set_lambda_eps(40.0);
        let st = chain.state();
        let r = direct_residual(&chain, 2, 0);
        let prec = st.lambda_s + 40.0 * phi.norm_squared();
        let mean = (40.0 * phi.dot(&r) + st.lambda_s * st.mu_s[(0, 2)]) / prec;
        let p = chain.s_conditional(2, 0);
        assert!((p.precision - prec).abs() < 1e-12);
        assert!((p.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn pi_examples() {
        let mut chain = toy_chain(2, 4, 3, 12);
        for i in 0..3 {
            for k in 0..4 {
                chain.set_zs(i, k, 0, 0.1);
            }
        }
        chain.set_zs(0, 1, 1, 0.1);
        chain.set_zs(2, 1, 1, 0.1);
        let p = chain.pi_conditional(1);
        assert!((p.alpha - (1e-6 / 4.0 + 2.0)).abs() < 1e-15);
        assert!((p.beta - (1e-6 * 3.0 / 4.0 + 1.0)).abs() < 1e-15);

        let big = toy_chain(2, 2, 400, 13);
        let mut all_on = big.clone();
        let mut all_off = big;
        for i in 0..400 {
            all_on.set_zs(i, 0, 1, 0.1);
            all_off.set_zs(i, 0, 0, 0.1);
        }
        assert!(all_on.pi_conditional(0).mean() > 0.99);
        assert!(all_off.pi_conditional(0).mean() < 0.01);
    }

    #[test]
    fn lambda_examples() {
        let mut chain = toy_chain(3, 2, 4, 14);
        for i in 0..4 {
            for k in 0..2 {
                let mu = chain.state().mu_s[(k, i)];
                chain.set_zs(i, k, 1, mu);
            }
        }
        let p = chain.lambda_s_conditional();
        assert_eq!(p.shape, 4.0 + 1e-6);
        assert!((p.rate - 1e-6).abs() < 1e-18);
        let mu = chain.state().mu_s[(1, 2)];
        chain.set_zs(2, 1, 1, mu + 2.0);
        assert!((chain.lambda_s_conditional().rate - (1e-6 + 2.0)).abs() < 1e-12);

        // residual-based noise rate against a direct computation
        let st = chain.state();
        let mut direct = 0.0;
        for i in 0..4 {
            let fit = &st.phi * st.alpha(i);
            direct += (chain.data().column(i) - fit).norm_squared();
        }
        let p = chain.lambda_eps_conditional();
        assert_eq!(p.shape, 6.0 + 1e-6);
        assert!((p.rate - (0.5 * direct + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn lambda_eps_simple_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let phi = DMatrix::from_fn(2, 1, |_, _| rng.random_range(0.0..1.0));
        let y = &phi * 0.5;
        let state = GibbsState {
            phi: phi.clone(),
            eta: DVector::from_element(1, 1.0),
            z: DMatrix::from_element(1, 1, 1),
            s: DMatrix::from_element(1, 1, 0.5),
            pi: DVector::from_element(1, 0.5),
            lambda_s: 1.0,
            lambda_eps: 1.0,
            mu_phi: phi,
            mu_s: DMatrix::zeros(1, 1),
        };
        let kernel = KernelMatrix::channel_index(2, 3.0).unwrap();
        let mut chain = GibbsChain::new(y, kernel, ModelConfig::default(), state).unwrap();
        assert!((chain.lambda_eps_conditional().rate - 1e-6).abs() < 1e-15);
        // a pixel with residual norm 3
        chain.set_zs(0, 0, 0, 0.5);
        let mut y3 = DMatrix::zeros(2, 1);
        y3[(0, 0)] = 3.0;
        let st = chain.state().clone();
        let chain = GibbsChain::new(y3, chain.kernel().clone(), ModelConfig::default(), st).unwrap();
        assert!((chain.lambda_eps_conditional().rate - (1e-6 + 4.5)).abs() < 1e-12);
    }

    fn smooth_atoms(l: usize) -> DMatrix<f64> {
        let mut phi = DMatrix::from_fn(l, 2, |b, k| {
            let c = if k == 0 { 0.8 } else { 2.4 };
            (-(b as f64 - c).powi(2) / 2.0).exp() + 0.1
        });
        for mut c in phi.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        phi
    }

    fn sam_deg(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn recovers_generating_atoms() {
        // draw Φ ~ GP(μ, R/η), z ~ Bern(0.6), s ~ N(μ_s, 1/25) and noise at
        // precision 1e4, then run the sampler with the same prior means
        let (l, n) = (4, 200);
        let mu = smooth_atoms(l);
        let kernel = KernelMatrix::channel_index(l, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chol = kernel.cholesky().l();
        let mut truth = mu.clone();
        for k in 0..2 {
            let e = DVector::from_fn(l, |_, _| dist::standard_normal(&mut rng));
            truth.set_column(k, &(mu.column(k) + &chol * e * 0.1));
        }
        let mu_s = DMatrix::from_fn(2, n, |_, _| rng.random_range(0.5..1.5));
        let mut y = DMatrix::zeros(l, n);
        for i in 0..n {
            let mut col = DVector::zeros(l);
            for k in 0..2 {
                if rng.random_bool(0.6) {
                    col += truth.column(k) * (mu_s[(k, i)] + 0.2 * dist::standard_normal(&mut rng));
                }
            }
            col += DVector::from_fn(l, |_, _| 0.01 * dist::standard_normal(&mut rng));
            y.set_column(i, &col);
        }
        let priors = PriorFactorization {
            dict: mu.clone(),
            codes: mu_s,
            delta: f64::INFINITY,
            objective: Vec::new(),
        };
        let mut config = ModelConfig::default();
        config.gibbs_iters = 300;
        config.burn_in = 150;
        let summary = run_gibbs(&y, &priors, &config, kernel, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let col = |m: &DMatrix<f64>, k: usize| -> Vec<f64> { m.column(k).iter().copied().collect() };
        for k in 0..2 {
            let got = sam_deg(&col(&summary.phi_mean, k), &col(&truth, k));
            let prior = sam_deg(&col(&mu, k), &col(&truth, k));
            assert!(got <= 3.0, "atom {k}: {got}");
            assert!(got < prior, "atom {k}: {got} vs prior {prior}");
        }
    }

    #[test]
    fn empty_data_returns_prior_means() {
        let priors = PriorFactorization {
            dict: smooth_atoms(4),
            codes: DMatrix::zeros(2, 0),
            delta: 0.01,
            objective: vec![0.0],
        };
        let mut config = ModelConfig::default();
        config.gibbs_iters = 400;
        config.burn_in = 100;
        config.a_o = 50.0;
        config.b_o = 0.5;
        let kernel = KernelMatrix::channel_index(4, 3.0).unwrap();
        let y = DMatrix::zeros(4, 0);
        let s = run_gibbs(&y, &priors, &config, kernel, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        // prior draws with η ~ Gam(52, ≈0.5 + ...) have standard deviation ≲ 0.1
        assert!((s.phi_mean - &priors.dict).abs().max() < 0.05);
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let y = DMatrix::from_fn(5, 40, |_, _| rng.random_range(0.0..1.0));
        let priors = crate::priors::factorize(&y, 3, 0.5, 1, 3).unwrap();
        let mut config = ModelConfig::default();
        config.gibbs_iters = 20;
        config.burn_in = 10;
        let run = |seed| {
            let kernel = KernelMatrix::channel_index(5, 3.0).unwrap();
            run_gibbs(&y, &priors, &config, kernel, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(a.phi_mean, b.phi_mean);
        assert_ne!(a.phi_mean, c.phi_mean);
    }

    #[test]
    fn state_invariants_after_sweeps() {
        let mut chain = toy_chain(5, 3, 20, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for it in 0..30 {
            chain.sweep(it, &mut rng).unwrap();
            let st = chain.state();
            assert!(st.pi.iter().all(|&p| p > 0.0 && p < 1.0));
            assert!(st.eta.iter().all(|&e| e > 0.0));
            assert!(st.lambda_s > 0.0 && st.lambda_eps > 0.0);
            assert!(st.z.iter().all(|&z| z <= 1));
        }
    }
}

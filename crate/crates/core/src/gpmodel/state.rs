use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::dist;
use super::kernel::KernelMatrix;
use crate::config::{EtaQuadratic, ModelConfig, WeightPrecision};
use crate::priors::PriorFactorization;
use crate::{Error, Result};

/// All latent variables of the representation model for one cluster.
///
/// `phi` is `L x K`; `z`, `s` and `mu_s` are `K x N`, one column per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub phi: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub z: DMatrix<u8>,
    pub s: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub lambda_s: f64,
    pub lambda_eps: f64,
    /// Prior means of the atoms.
    pub mu_phi: DMatrix<f64>,
    /// Prior means of the weights.
    pub mu_s: DMatrix<f64>,
}

impl GibbsState {
    /// Starting point: `Φ` and `S` at their prior means, `Z` on the support
    /// of `S`, `π = 0.5`, precisions at their configured initial values.
    pub fn initial(priors: &PriorFactorization, config: &ModelConfig) -> Self {
        let k = priors.dict.ncols();
        let z = priors.codes.map(|v| u8::from(v != 0.0));
        Self {
            phi: priors.dict.clone(),
            eta: DVector::from_element(k, config.eta_init),
            z,
            s: priors.codes.clone(),
            pi: DVector::from_element(k, 0.5),
            lambda_s: config.lambda_s_o,
            lambda_eps: config.lambda_eps_o,
            mu_phi: priors.dict.clone(),
            mu_s: priors.codes.clone(),
        }
    }

    pub fn atoms(&self) -> usize {
        self.phi.ncols()
    }

    pub fn bands(&self) -> usize {
        self.phi.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.s.ncols()
    }

    /// `α_i = z_i ⊙ s_i`.
    pub fn alpha(&self, i: usize) -> DVector<f64> {
        DVector::from_fn(self.atoms(), |k, _| f64::from(self.z[(k, i)]) * self.s[(k, i)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let t = self.alpha + self.beta;
        self.alpha * self.beta / (t * t * (t + 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub precision: f64,
}

/// Gaussian conditional of one atom, kept in precision form.
#[derive(Clone, Debug)]
pub struct PhiConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PhiConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// One Gibbs chain: data, kernel, configuration and the current state, with
/// the residual `y_i − Φ(z_i ⊙ s_i)` kept in sync.
#[derive(Clone, Debug)]
pub struct GibbsChain {
    y: DMatrix<f64>,
    kernel: KernelMatrix,
    config: ModelConfig,
    state: GibbsState,
    residual: DMatrix<f64>,
}

impl GibbsChain {
    pub fn new(y: DMatrix<f64>, kernel: KernelMatrix, config: ModelConfig, state: GibbsState) -> Result<Self> {
        let (l, n) = y.shape();
        let k = state.atoms();
        if kernel.bands() != l || state.bands() != l {
            return Err(Error::Dimension(format!(
                "data has {l} bands, kernel {} and atoms {}",
                kernel.bands(),
                state.bands()
            )));
        }
        if state.pixels() != n
            || state.z.shape() != (k, n)
            || state.mu_s.shape() != (k, n)
            || state.mu_phi.shape() != (l, k)
            || state.eta.len() != k
            || state.pi.len() != k
        {
            return Err(Error::Dimension("inconsistent Gibbs state dimensions".into()));
        }
        let mut chain = Self {
            residual: DMatrix::zeros(l, n),
            y,
            kernel,
            config,
            state,
        };
        chain.refresh_residual();
        Ok(chain)
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    pub fn into_state(self) -> GibbsState {
        self.state
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Current `y_i − Φ(z_i ⊙ s_i)` for every pixel.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residual
    }

    /// Recomputes the residual matrix from scratch.
    pub fn refresh_residual(&mut self) {
        let st = &self.state;
        let alpha = st.z.map(f64::from).component_mul(&st.s);
        self.residual = &self.y - &st.phi * alpha;
    }

    /// Contribution of atom `k` to pixel `i`: `y_i − Φα_i + φ_k z_ik s_ik`.
    pub fn residual(&self, i: usize, k: usize) -> DVector<f64> {
        let a = f64::from(self.state.z[(k, i)]) * self.state.s[(k, i)];
        let mut r = self.residual.column(i).clone_owned();
        if a != 0.0 {
            r.axpy(a, &self.state.phi.column(k), 1.0);
        }
        r
    }

    fn weight_prior_precision(&self) -> f64 {
        match self.config.s_prior_precision {
            WeightPrecision::Sampled => self.state.lambda_s,
            WeightPrecision::Fixed => self.config.lambda_s_o,
        }
    }

    pub fn phi_conditional(&self, k: usize) -> Result<PhiConditional> {
        let st = &self.state;
        let l = st.bands();
        let mut weight = 0.0;
        let mut data_term = DVector::zeros(l);
        for i in 0..st.pixels() {
            if st.z[(k, i)] == 0 {
                continue;
            }
            let a = st.s[(k, i)];
            weight += a * a;
            data_term.axpy(a, &self.residual(i, k), 1.0);
        }
        let prior_prec = self.kernel.inverse() * st.eta[k];
        let mut precision = &prior_prec + DMatrix::identity(l, l) * (st.lambda_eps * weight);
        let rhs = data_term * st.lambda_eps + &prior_prec * st.mu_phi.column(k);
        let chol = match precision.clone().cholesky() {
            Some(c) => c,
            None => {
                for d in 0..l {
                    precision[(d, d)] += 1e-10;
                }
                precision.clone().cholesky().ok_or_else(|| {
                    Error::Numerical(format!("atom {k} posterior precision is not positive definite"))
                })?
            }
        };
        let mean = chol.solve(&rhs);
        Ok(PhiConditional { mean, precision, chol })
    }

    pub fn sample_phi(&self, k: usize, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let cond = self.phi_conditional(k)?;
        let l = cond.mean.len();
        let eps = DVector::from_fn(l, |_, _| dist::standard_normal(rng));
        // P = L Lᵀ; x = L⁻ᵀ ε has covariance P⁻¹
        let x = cond
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .ok_or_else(|| Error::Numerical(format!("singular factor sampling atom {k}")))?;
        Ok(cond.mean + x)
    }

    pub fn set_phi(&mut self, k: usize, phi: DVector<f64>) {
        let delta = self.state.phi.column(k) - &phi;
        for i in 0..self.state.pixels() {
            let a = f64::from(self.state.z[(k, i)]) * self.state.s[(k, i)];
            if a != 0.0 {
                self.residual.column_mut(i).axpy(a, &delta, 1.0);
            }
        }
        self.state.phi.set_column(k, &phi);
    }

    pub fn eta_conditional(&self, k: usize) -> GammaParams {
        let st = &self.state;
        let d = st.phi.column(k) - st.mu_phi.column(k);
        let m = match self.config.eta_quadratic {
            EtaQuadratic::InverseKernel => self.kernel.inverse(),
            EtaQuadratic::Kernel => self.kernel.matrix(),
        };
        let quad = d.dot(&(m * &d));
        GammaParams {
            shape: self.config.a_o + st.bands() as f64 / 2.0,
            rate: self.config.b_o + 0.5 * quad,
        }
    }

    pub fn sample_eta(&self, k: usize, rng: &mut impl Rng) -> f64 {
        let p = self.eta_conditional(k);
        dist::gamma(p.shape, p.rate, rng)
    }

    /// Posterior probability that `z_ik = 1`.
    pub fn z_conditional(&self, i: usize, k: usize) -> f64 {
        let st = &self.state;
        let phi = st.phi.column(k);
        let s = st.s[(k, i)];
        let r = self.residual(i, k);
        let log_xi = -0.5 * st.lambda_eps * (phi.dot(&phi) * s * s - 2.0 * s * r.dot(&phi));
        let xi = log_xi.clamp(-700.0, 700.0).exp();
        let pi = st.pi[k];
        pi * xi / (1.0 - pi + xi * pi)
    }

    pub fn sample_z(&self, i: usize, k: usize, rng: &mut impl Rng) -> u8 {
        let p = self.z_conditional(i, k);
        u8::from(rng.random::<f64>() < p)
    }

    pub fn s_conditional(&self, i: usize, k: usize) -> NormalParams {
        let st = &self.state;
        let prior = self.weight_prior_precision();
        let z = f64::from(st.z[(k, i)]);
        let phi = st.phi.column(k);
        let precision = prior + st.lambda_eps * z * phi.dot(&phi);
        let data = if z != 0.0 {
            st.lambda_eps * phi.dot(&self.residual(i, k))
        } else {
            0.0
        };
        NormalParams {
            mean: (data + prior * st.mu_s[(k, i)]) / precision,
            precision,
        }
    }

    pub fn sample_s(&self, i: usize, k: usize, rng: &mut impl Rng) -> f64 {
        let p = self.s_conditional(i, k);
        dist::normal(p.mean, p.precision, rng)
    }

    /// Sets `(z_ik, s_ik)` and updates the residual of pixel `i`.
    pub fn set_zs(&mut self, i: usize, k: usize, z: u8, s: f64) {
        let old = f64::from(self.state.z[(k, i)]) * self.state.s[(k, i)];
        let new = f64::from(z) * s;
        if old != new {
            let phi = self.state.phi.column(k).clone_owned();
            self.residual.column_mut(i).axpy(old - new, &phi, 1.0);
        }
        self.state.z[(k, i)] = z;
        self.state.s[(k, i)] = s;
    }

    pub fn pi_conditional(&self, k: usize) -> BetaParams {
        let st = &self.state;
        let q = st.atoms() as f64;
        let n = st.pixels() as f64;
        let on = st.z.row(k).iter().map(|&z| f64::from(z)).sum::<f64>();
        BetaParams {
            alpha: self.config.c_o / q + on,
            beta: self.config.d_o * (q - 1.0) / q + n - on,
        }
    }

    pub fn sample_pi(&self, k: usize, rng: &mut impl Rng) -> f64 {
        let p = self.pi_conditional(k);
        dist::beta(p.alpha, p.beta, rng)
    }

    pub fn lambda_s_conditional(&self) -> GammaParams {
        let st = &self.state;
        let dev = (&st.s - &st.mu_s).norm_squared();
        GammaParams {
            shape: (st.pixels() * st.atoms()) as f64 / 2.0 + self.config.e_o,
            rate: 0.5 * dev + self.config.f_o,
        }
    }

    pub fn sample_lambda_s(&self, rng: &mut impl Rng) -> f64 {
        let p = self.lambda_s_conditional();
        dist::gamma(p.shape, p.rate, rng)
    }

    pub fn lambda_eps_conditional(&self) -> GammaParams {
        let st = &self.state;
        GammaParams {
            shape: (st.pixels() * st.bands()) as f64 / 2.0 + self.config.g_o,
            rate: 0.5 * self.residual.norm_squared() + self.config.h_o,
        }
    }

    pub fn sample_lambda_eps(&self, rng: &mut impl Rng) -> f64 {
        let p = self.lambda_eps_conditional();
        dist::gamma(p.shape, p.rate, rng)
    }

    pub fn set_eta(&mut self, k: usize, eta: f64) {
        self.state.eta[k] = eta;
    }

    pub fn set_pi(&mut self, k: usize, pi: f64) {
        self.state.pi[k] = pi;
    }

    pub fn set_lambda_s(&mut self, v: f64) {
        self.state.lambda_s = v;
    }

    pub fn set_lambda_eps(&mut self, v: f64) {
        self.state.lambda_eps = v;
    }

    /// One full sweep: every `φ_k`, every `η_k`, `(z_ik, s_ik)` interleaved
    /// per pixel and atom, every `π_k`, then `λ_s` and `λ_ε`.
    pub fn sweep(&mut self, iteration: usize, rng: &mut impl Rng) -> Result<()> {
        self.refresh_residual();
        let k_atoms = self.state.atoms();
        let bad = |what: String| Error::Numerical(format!("iteration {iteration}: non-finite {what}"));

        for k in 0..k_atoms {
            let phi = self.sample_phi(k, rng)?;
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("atom {k}")));
            }
            self.set_phi(k, phi);
        }
        for k in 0..k_atoms {
            let eta = self.sample_eta(k, rng);
            if !eta.is_finite() {
                return Err(bad(format!("eta[{k}]")));
            }
            self.set_eta(k, eta);
        }
        for i in 0..self.state.pixels() {
            for k in 0..k_atoms {
                let z = self.sample_z(i, k, rng);
                let s_prev = self.state.s[(k, i)];
                self.set_zs(i, k, z, s_prev);
                let s = self.sample_s(i, k, rng);
                if !s.is_finite() {
                    return Err(bad(format!("s[{k}, {i}]")));
                }
                self.set_zs(i, k, z, s);
            }
        }
        for k in 0..k_atoms {
            let pi = self.sample_pi(k, rng);
            self.set_pi(k, pi);
        }
        let ls = self.sample_lambda_s(rng);
        if !ls.is_finite() {
            return Err(bad("lambda_s".into()));
        }
        self.set_lambda_s(ls);
        let le = self.sample_lambda_eps(rng);
        if !le.is_finite() {
            return Err(bad("lambda_eps".into()));
        }
        self.set_lambda_eps(le);
        Ok(())
    }
}

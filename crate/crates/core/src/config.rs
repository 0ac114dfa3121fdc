//! Run parameters and their `key=value` text form.
//!
//! The same key names are used by model files, config files and the CLI
//! flags, so a config snapshot stored in a model can be replayed verbatim.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Distance used inside the spectral kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelDistance {
    /// `|a - b|` in band indices.
    ChannelIndex,
    /// `|w_a - w_b|` in nanometres, taken from the cube's wavelength grid.
    Nanometers,
}

/// Matrix used in the quadratic form of the `eta_k` conditional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaQuadratic {
    /// `(φ - μ)ᵀ R⁻¹ (φ - μ)`, the conjugate update.
    InverseKernel,
    /// `(φ - μ)ᵀ R (φ - μ)`.
    Kernel,
}

/// Precision of the weight prior inside the `s_ik` conditional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPrecision {
    /// Current sample of the global `λ_s`.
    Sampled,
    /// The fixed initial value `lambda_s_o`.
    Fixed,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::InvalidParameter(format!(
                        "unknown {} value {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(KernelDistance { ChannelIndex => "channel-index", Nanometers => "nanometers" });
text_enum!(EtaQuadratic { InverseKernel => "inverse-kernel", Kernel => "kernel" });
text_enum!(WeightPrecision { Sampled => "sampled", Fixed => "fixed" });

/// Hyper-parameters of the representation model and its Gibbs sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub a_o: f64,
    pub b_o: f64,
    pub c_o: f64,
    pub d_o: f64,
    pub e_o: f64,
    pub f_o: f64,
    pub g_o: f64,
    pub h_o: f64,
    /// Initial noise precision.
    pub lambda_eps_o: f64,
    /// Initial weight precision.
    pub lambda_s_o: f64,
    /// Initial kernel precision `η_k`.
    pub eta_init: f64,
    pub length_scale: f64,
    pub gibbs_iters: usize,
    pub burn_in: usize,
    pub kernel_distance: KernelDistance,
    pub eta_quadratic: EtaQuadratic,
    pub s_prior_precision: WeightPrecision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            a_o: 1e-6,
            b_o: 1e-6,
            c_o: 1e-6,
            d_o: 1e-6,
            e_o: 1e-6,
            f_o: 1e-6,
            g_o: 1e-6,
            h_o: 1e-6,
            lambda_eps_o: 1e6,
            lambda_s_o: 1e6,
            eta_init: 1.0,
            length_scale: 3.0,
            gibbs_iters: 500,
            burn_in: 250,
            kernel_distance: KernelDistance::ChannelIndex,
            eta_quadratic: EtaQuadratic::InverseKernel,
            s_prior_precision: WeightPrecision::Sampled,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_o", self.a_o),
            ("b_o", self.b_o),
            ("c_o", self.c_o),
            ("d_o", self.d_o),
            ("e_o", self.e_o),
            ("f_o", self.f_o),
            ("g_o", self.g_o),
            ("h_o", self.h_o),
            ("lambda_eps_o", self.lambda_eps_o),
            ("lambda_s_o", self.lambda_s_o),
            ("eta_init", self.eta_init),
            ("length_scale", self.length_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gibbs_iters == 0 || self.burn_in >= self.gibbs_iters {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be below gibbs_iters ({})",
                self.burn_in, self.gibbs_iters
            )));
        }
        Ok(())
    }
}

/// Everything `pipeline::train` needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Number of K-Means clusters `C`.
    pub clusters: usize,
    /// Patch side `p`.
    pub patch_size: usize,
    /// Total number of Gaussian Processes over all clusters.
    pub atoms: usize,
    /// Fraction of pixels sampled from each training patch.
    pub pixel_fraction: f64,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    /// Cluster mean-centered patch vectors instead of raw ones.
    pub kmeans_center: bool,
    /// l1 budget of the prior factorization.
    pub delta: f64,
    pub prior_epochs: usize,
    /// Squared-residual bound of the test-time coder.
    pub delta1: f64,
    /// Use the prior dictionary directly instead of Gibbs posterior means.
    pub dl_variant: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            clusters: 10,
            patch_size: 8,
            atoms: 1000,
            pixel_fraction: 0.01,
            kmeans_iters: 100,
            kmeans_tol: 1e-6,
            kmeans_center: false,
            delta: 0.01,
            prior_epochs: 10,
            delta1: 1e-21,
            dl_variant: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.clusters == 0 {
            return Err(Error::InvalidParameter("clusters must be at least 1".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidParameter("patch_size must be at least 1".into()));
        }
        if self.atoms < self.clusters {
            return Err(Error::InvalidParameter(format!(
                "atoms ({}) must be at least clusters ({})",
                self.atoms, self.clusters
            )));
        }
        if !(self.pixel_fraction > 0.0 && self.pixel_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pixel_fraction must be in (0, 1], got {}",
                self.pixel_fraction
            )));
        }
        if !(self.delta >= 0.0) || !(self.delta1 >= 0.0) || !(self.kmeans_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "delta, delta1 and kmeans_tol must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// All parameters as ordered `(key, value)` pairs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        vec![
            ("a_o", m.a_o.to_string()),
            ("b_o", m.b_o.to_string()),
            ("c_o", m.c_o.to_string()),
            ("d_o", m.d_o.to_string()),
            ("e_o", m.e_o.to_string()),
            ("f_o", m.f_o.to_string()),
            ("g_o", m.g_o.to_string()),
            ("h_o", m.h_o.to_string()),
            ("lambda_eps_o", m.lambda_eps_o.to_string()),
            ("lambda_s_o", m.lambda_s_o.to_string()),
            ("eta_init", m.eta_init.to_string()),
            ("length_scale", m.length_scale.to_string()),
            ("gibbs_iters", m.gibbs_iters.to_string()),
            ("burn_in", m.burn_in.to_string()),
            ("kernel_distance", m.kernel_distance.to_string()),
            ("eta_quadratic", m.eta_quadratic.to_string()),
            ("s_prior_precision", m.s_prior_precision.to_string()),
            ("clusters", self.clusters.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("atoms", self.atoms.to_string()),
            ("pixel_fraction", self.pixel_fraction.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("kmeans_tol", self.kmeans_tol.to_string()),
            ("kmeans_center", self.kmeans_center.to_string()),
            ("delta", self.delta.to_string()),
            ("prior_epochs", self.prior_epochs.to_string()),
            ("delta1", self.delta1.to_string()),
            ("dl_variant", self.dl_variant.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one parameter from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        match key {
            "a_o" => m.a_o = parse(key, value)?,
            "b_o" => m.b_o = parse(key, value)?,
            "c_o" => m.c_o = parse(key, value)?,
            "d_o" => m.d_o = parse(key, value)?,
            "e_o" => m.e_o = parse(key, value)?,
            "f_o" => m.f_o = parse(key, value)?,
            "g_o" => m.g_o = parse(key, value)?,
            "h_o" => m.h_o = parse(key, value)?,
            "lambda_eps_o" => m.lambda_eps_o = parse(key, value)?,
            "lambda_s_o" => m.lambda_s_o = parse(key, value)?,
            "eta_init" => m.eta_init = parse(key, value)?,
            "length_scale" => m.length_scale = parse(key, value)?,
            "gibbs_iters" => m.gibbs_iters = parse(key, value)?,
            "burn_in" => m.burn_in = parse(key, value)?,
            "kernel_distance" => m.kernel_distance = value.parse()?,
            "eta_quadratic" => m.eta_quadratic = value.parse()?,
            "s_prior_precision" => m.s_prior_precision = value.parse()?,
            "clusters" => self.clusters = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "atoms" => self.atoms = parse(key, value)?,
            "pixel_fraction" => self.pixel_fraction = parse(key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse(key, value)?,
            "kmeans_center" => self.kmeans_center = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "prior_epochs" => self.prior_epochs = parse(key, value)?,
            "delta1" => self.delta1 = parse(key, value)?,
            "dl_variant" => self.dl_variant = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key=value", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key}={value:?}")))
}

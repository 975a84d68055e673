//! Fixed and random-parameter ordered logit by (simulated) maximum likelihood.
//!
//! The latent index is `eta = constant + x'beta_i` with
//! `beta_i = beta + diag(sigma) * omega_i`, `omega_i ~ N(0, I)` per panel
//! unit. Level `j` of `J` has probability `F(kappa_j - eta) - F(kappa_{j-1} - eta)`
//! with `F` the logistic CDF, `kappa_0 = -inf`, `kappa_J = +inf`. When a
//! constant is estimated the first finite threshold is pinned at 0.

mod data;
mod fit;
mod halton;
mod optimize;
mod ordered;
mod simulated;

pub use data::{ModelData, ObservationTable};
pub use fit::{
    fit, information_criteria, odds_ratio, Convergence, FitOptions, FitResult, ParameterEstimate, ParameterKind,
};
pub use halton::{halton_sequence, normal_draws, HALTON_BURN_IN};
pub use optimize::{minimize_bfgs, BfgsOptions, BfgsOutcome};
pub use ordered::{
    logistic_cdf, loglik_fixed, loglik_fixed_with_gradient, ordered_prob, ordered_probs,
    PROBABILITY_FLOOR,
};
pub use simulated::{loglik_simulated, loglik_simulated_with_gradient, Draws};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Mixing distribution of a random coefficient. Only independent normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingDistribution {
    #[default]
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomCovariate {
    pub name: String,
    pub distribution: MixingDistribution,
    /// Holds the standard deviation at this value instead of estimating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_sigma: Option<f64>,
}

impl RandomCovariate {
    pub fn normal(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            distribution: MixingDistribution::Normal,
            fixed_sigma: None,
        }
    }
}

// Accepts either a bare column name or the full object.
impl<'de> Deserialize<'de> for RandomCovariate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Full {
            name: String,
            #[serde(default)]
            distribution: MixingDistribution,
            #[serde(default)]
            fixed_sigma: Option<f64>,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Full(Full),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Name(name) => RandomCovariate::normal(name),
            Repr::Full(f) => RandomCovariate {
                name: f.name,
                distribution: f.distribution,
                fixed_sigma: f.fixed_sigma,
            },
        })
    }
}

/// Model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random: Vec<RandomCovariate>,
    #[serde(default = "default_true")]
    pub constant: bool,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Column identifying the panel unit; defaults to `pair_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
    /// Number of ordered levels; defaults to the largest observed level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
}

fn default_true() -> bool {
    true
}

fn default_draws() -> usize {
    500
}

pub const DEFAULT_GROUP_KEY: &str = "pair_id";

impl ModelSpec {
    pub fn fixed_only(response: impl Into<String>, fixed: &[&str]) -> Self {
        Self {
            response: response.into(),
            fixed: fixed.iter().map(|s| s.to_string()).collect(),
            random: Vec::new(),
            constant: true,
            draws: default_draws(),
            seed: 0,
            group_key: None,
            levels: None,
        }
    }

    pub fn group_key(&self) -> &str {
        self.group_key.as_deref().unwrap_or(DEFAULT_GROUP_KEY)
    }

    /// Covariate names in coefficient order: fixed, then random.
    pub fn covariates(&self) -> Vec<&str> {
        self.fixed
            .iter()
            .map(String::as_str)
            .chain(self.random.iter().map(|r| r.name.as_str()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        let names = self.covariates();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("covariate `{n}` listed twice")));
            }
            if *n == self.response {
                return Err(Error::Config(format!("`{n}` is both response and covariate")));
            }
        }
        for r in &self.random {
            if let Some(s) = r.fixed_sigma {
                if !(s >= 0.0) {
                    return Err(Error::Config(format!("fixed sigma for `{}` must be >= 0", r.name)));
                }
            }
        }
        if let Some(j) = self.levels {
            if j < 2 {
                return Err(Error::Config("an ordered response needs at least 2 levels".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Model parameters in their natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub constant: f64,
    /// One per covariate, fixed first then random means.
    pub beta: Vec<f64>,
    /// One per random covariate.
    pub sigma: Vec<f64>,
    /// Finite thresholds `kappa_1 .. kappa_{J-1}`, strictly increasing.
    pub thresholds: Vec<f64>,
}

impl ParameterVector {
    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn validate(&self, n_cov: usize, n_random: usize) -> Result<()> {
        if self.beta.len() != n_cov || self.sigma.len() != n_random {
            return Err(Error::invalid(format!(
                "parameter shape mismatch: {} betas / {} sigmas for {n_cov} covariates / {n_random} random",
                self.beta.len(),
                self.sigma.len()
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::invalid("need at least one finite threshold"));
        }
        if self.thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            constant: 0.0,
            beta: vec![0.0; self.beta.len()],
            sigma: vec![0.0; self.sigma.len()],
            thresholds: vec![0.0; self.thresholds.len()],
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &Self, w: f64) {
        self.constant += w * other.constant;
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += w * b;
        }
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += w * b;
        }
        for (a, b) in self.thresholds.iter_mut().zip(&other.thresholds) {
            *a += w * b;
        }
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beta prior on `g = (λ + 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub const UNIFORM: BetaPrior = BetaPrior { alpha: 1.0, beta: 1.0 };

    pub const fn new(alpha: f64, beta: f64) -> Self {
        BetaPrior { alpha, beta }
    }

    pub fn ln_beta(&self) -> f64 {
        libm::lgamma(self.alpha) + libm::lgamma(self.beta) - libm::lgamma(self.alpha + self.beta)
    }

    /// `+1` if the prior favours positive discrimination, `−1` if negative,
    /// `0` if symmetric.
    pub fn sign(&self) -> i8 {
        if self.alpha > self.beta {
            1
        } else if self.alpha < self.beta {
            -1
        } else {
            0
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "{what}: Beta parameters must be positive and finite, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior::UNIFORM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Refuse instances with more ads than this.
    pub max_ads: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            max_ads: 200,
            burn_in: 2000,
            samples: 2000,
            thin: 2,
        }
    }
}

/// What the optimizer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Item parameters at the mode of their marginal posterior (θ integrated
    /// out by quadrature), then each θ at its conditional mode.
    #[default]
    Marginal,
    /// Joint mode over θ and item parameters.
    Joint,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Estimator::Marginal),
            "joint" => Ok(Estimator::Joint),
            other => Err(Error::Config(format!("unknown estimator {other:?} (marginal | joint)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrtConfig {
    pub estimator: Estimator,
    /// Grid size for integrating over θ (marginal estimator).
    pub quadrature_points: usize,
    /// Outcome discrimination prior for items without an entry in `anchors`.
    pub discrimination_prior: BetaPrior,
    /// Per-item discrimination priors keyed by item key.
    pub anchors: BTreeMap<String, BetaPrior>,
    pub missing_discrimination_prior: BetaPrior,
    pub theta_sd: f64,
    pub difficulty_sd: f64,
    pub max_iters: usize,
    /// Largest Newton step (in unconstrained units) taken by the optimizer.
    pub step_size: f64,
    pub tol: f64,
    pub draws: usize,
    pub seed: u64,
    /// Keep every θ draw in the posterior (memory: ads × draws).
    pub keep_theta_draws: bool,
    /// Burn-in and thinning of the per-block item chains behind the draws.
    pub item_burn_in: usize,
    pub item_thin: usize,
    pub mcmc: McmcConfig,
}

impl Default for IrtConfig {
    fn default() -> Self {
        let mut anchors = BTreeMap::new();
        anchors.insert("natural_gas".to_string(), BetaPrior::new(1000.0, 0.001));
        anchors.insert("fossil_fuel".to_string(), BetaPrior::new(0.001, 1000.0));
        IrtConfig {
            estimator: Estimator::Marginal,
            quadrature_points: 81,
            discrimination_prior: BetaPrior::UNIFORM,
            anchors,
            missing_discrimination_prior: BetaPrior::UNIFORM,
            theta_sd: 1.0,
            difficulty_sd: 3.0,
            max_iters: 500,
            step_size: 2.0,
            tol: 1e-6,
            draws: 1000,
            seed: 0,
            keep_theta_draws: false,
            item_burn_in: 300,
            item_thin: 2,
            mcmc: McmcConfig::default(),
        }
    }
}

impl IrtConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: IrtConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn discrimination_prior_for(&self, key: &str) -> BetaPrior {
        self.anchors.get(key).copied().unwrap_or(self.discrimination_prior)
    }

    pub fn validate(&self) -> Result<()> {
        self.discrimination_prior.validate("discrimination_prior")?;
        self.missing_discrimination_prior.validate("missing_discrimination_prior")?;
        for (k, p) in &self.anchors {
            p.validate(&format!("anchors.{k}"))?;
        }
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.theta_sd, "theta_sd")?;
        positive(self.difficulty_sd, "difficulty_sd")?;
        positive(self.step_size, "step_size")?;
        positive(self.tol, "tol")?;
        if self.draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        if self.quadrature_points < 3 {
            return Err(Error::Config("quadrature_points must be at least 3".into()));
        }
        if self.item_thin == 0 {
            return Err(Error::Config("item_thin must be at least 1".into()));
        }
        if self.mcmc.samples == 0 || self.mcmc.thin == 0 {
            return Err(Error::Config("mcmc samples and thin must be at least 1".into()));
        }
        Ok(())
    }
}

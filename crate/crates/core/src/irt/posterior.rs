use serde::{Deserialize, Serialize};

use super::fit::FitDiagnostics;
use super::model::{IrtParams, StageParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

impl ScoreSummary {
    /// Summary of a sample: mean and type-7 5%/95% quantiles.
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let q05 = quantile_sorted(&sorted, 0.05);
        let q95 = quantile_sorted(&sorted, 0.95);
        // rounding in the mean can push it a hair outside a degenerate interval
        let slack = 1e-12 * (1.0 + q05.abs().max(q95.abs()));
        let mean = if mean < q05 && q05 - mean <= slack {
            q05
        } else if mean > q95 && mean - q95 <= slack {
            q95
        } else {
            mean
        };
        ScoreSummary { mean, q05, q95 }
    }
}

/// Type-7 (linear interpolation) quantile of ascending data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Greenwashing,
    NonGreenwashing,
    Unclassified,
}

impl Classification {
    pub const ALL: [Classification; 3] = [
        Classification::Greenwashing,
        Classification::NonGreenwashing,
        Classification::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Greenwashing => "GREENWASHING",
            Classification::NonGreenwashing => "NON_GREENWASHING",
            Classification::Unclassified => "UNCLASSIFIED",
        }
    }
}

impl std::str::FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Classification::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::parse("classification", format!("unknown label {s:?}")))
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sign rule on the 90% interval.
pub fn classify(summary: &ScoreSummary) -> Classification {
    if summary.q05 > 0.0 {
        Classification::Greenwashing
    } else if summary.q95 < 0.0 {
        Classification::NonGreenwashing
    } else {
        Classification::Unclassified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Outcome,
    Missingness,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Outcome => "outcome",
            Stage::Missingness => "missingness",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outcome" => Ok(Stage::Outcome),
            "missingness" => Ok(Stage::Missingness),
            other => Err(Error::parse("stage", format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub key: String,
    pub stage: Stage,
    pub item: usize,
    /// Summary of the discrimination λ.
    pub discrimination: ScoreSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    Laplace,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub theta_acceptance: f64,
    pub item_acceptance: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrtPosterior {
    pub method: InferenceMethod,
    pub ads: Vec<String>,
    /// Posterior mode the draws were centred on (or started from).
    pub mode: IrtParams,
    pub scores: Vec<ScoreSummary>,
    pub items: Vec<ItemSummary>,
    pub n_draws: usize,
    /// `theta_draws[i][d]`, kept only on request.
    pub theta_draws: Option<Vec<Vec<f64>>>,
    /// `(u, β)` draws per entry of `items`.
    pub item_draws: Vec<Vec<StageParams>>,
    pub diagnostics: FitDiagnostics,
    pub mcmc: Option<McmcDiagnostics>,
    pub warnings: Vec<String>,
}

impl IrtPosterior {
    pub fn classifications(&self) -> Vec<Classification> {
        self.scores.iter().map(classify).collect()
    }

    pub fn score_means(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.mean).collect()
    }

    pub fn item_summary(&self, key: &str, stage: Stage) -> Option<&ItemSummary> {
        self.items.iter().find(|s| s.key == key && s.stage == stage)
    }

    /// Reassembles draw `d` as a full parameter set; needs kept θ draws.
    pub fn draw(&self, d: usize) -> Option<IrtParams> {
        let theta = self.theta_draws.as_ref()?;
        if d >= self.n_draws {
            return None;
        }
        let mut p = self.mode.clone();
        for (t, draws) in p.theta.iter_mut().zip(theta) {
            *t = draws[d];
        }
        for (s, draws) in self.items.iter().zip(&self.item_draws) {
            match s.stage {
                Stage::Outcome => p.items[s.item].outcome = draws[d],
                Stage::Missingness => p.items[s.item].missing = Some(draws[d]),
            }
        }
        Some(p)
    }
}

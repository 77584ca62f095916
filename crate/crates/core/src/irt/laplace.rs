//! Posterior draws around the fitted mode.
//!
//! Each θ_i is drawn from a normal with precision equal to the negative
//! second derivative of the log posterior in θ_i given the items. Item stages
//! are far from Gaussian in `(u, β)` when a sign prior pushes `u` toward its
//! boundary, so each stage `(u, β)` is drawn by a short random-walk Metropolis
//! chain on its block density with every other stage at the mode: θ
//! integrated out for the marginal estimator, θ at the mode for the joint
//! one. The proposal shape is the block curvature at the mode. Draws of `u`
//! are mapped through `tanh(u/2)`, so every discrimination draw stays inside
//! (−1, 1).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{Estimator, IrtConfig};
use super::marginal::{stage_refs, Marginal};
use super::mcmc::{adapt, ADAPT_WINDOW, ITEM_TARGET};
use super::fit::MapFit;
use super::model::{Block2, Model, StageParams};
use super::posterior::{InferenceMethod, IrtPosterior, ItemSummary, ScoreSummary};
use crate::error::Result;
use crate::matrix::IndicatorMatrix;
use crate::seed;

/// Lower-triangular factor of the covariance `(−H)⁻¹`, or `None` when the
/// block is not negative definite.
pub(crate) fn block_cov_factor(b: &Block2) -> Option<[[f64; 2]; 2]> {
    let p11 = -b.hess[0][0];
    let p22 = -b.hess[1][1];
    let p12 = -b.hess[0][1];
    let det = p11 * p22 - p12 * p12;
    if !(p11 > 0.0 && det > 0.0 && det.is_finite()) {
        return None;
    }
    let c11 = p22 / det;
    let c22 = p11 / det;
    let c12 = -p12 / det;
    let l11 = c11.sqrt();
    let l21 = c12 / l11;
    let l22 = (c22 - l21 * l21).max(0.0).sqrt();
    Some([[l11, 0.0], [l21, l22]])
}

/// Diagonal fallback: `1/sqrt(|H_kk|)`, floored to avoid division by zero.
pub(crate) fn diagonal_factor(b: &Block2) -> [[f64; 2]; 2] {
    let sd = |h: f64| 1.0 / h.abs().max(1e-8).sqrt();
    [[sd(b.hess[0][0]), 0.0], [0.0, sd(b.hess[1][1])]]
}

/// Random-walk Metropolis on one `(u, β)` block, returning `config.draws`
/// states after burn-in and thinning, and the post-burn-in acceptance rate.
fn block_chain(
    target: impl Fn(StageParams) -> f64,
    start: StageParams,
    factor: [[f64; 2]; 2],
    config: &IrtConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<StageParams>, f64) {
    let mut state = start;
    let mut current = target(state);
    let mut scale = 1.7;
    let (mut window, mut accepted) = (0, 0);
    let burn_in = config.item_burn_in;
    let total = burn_in + config.draws * config.item_thin;
    let mut draws = Vec::with_capacity(config.draws);
    for step in 0..total {
        let sampling = step >= burn_in;
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let proposal = StageParams {
            disc_logit: state.disc_logit + scale * factor[0][0] * z0,
            difficulty: state.difficulty + scale * (factor[1][0] * z0 + factor[1][1] * z1),
        };
        let candidate = target(proposal);
        let u: f64 = rng.random();
        if u.ln() < candidate - current {
            state = proposal;
            current = candidate;
            window += 1;
            if sampling {
                accepted += 1;
            }
        }
        if !sampling && (step + 1) % ADAPT_WINDOW == 0 {
            adapt(&mut scale, &mut window, ITEM_TARGET);
        }
        if sampling && (step - burn_in + 1) % config.item_thin == 0 {
            draws.push(state);
        }
    }
    (draws, accepted as f64 / (total - burn_in) as f64)
}

pub(crate) fn theta_sd(model: &Model<'_>, fit: &MapFit, i: usize) -> f64 {
    let h = model.ad_terms(&fit.params, i, fit.params.theta[i]).2;
    1.0 / (-h).max(1e-12).sqrt()
}

/// Draws from the blockwise Laplace approximation around a MAP fit.
pub fn laplace_draws(fit: &MapFit, matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<IrtPosterior> {
    let model = Model::new(matrix, config)?;
    let mode = &fit.params;
    let n = matrix.n_ads();
    let d = config.draws;
    let mut warnings = Vec::new();
    if !fit.diagnostics.converged {
        warnings.push(format!(
            "Laplace draws taken around an unconverged fit (gradient norm {:.3e})",
            fit.diagnostics.gradient_norm
        ));
    }

    let per_ad: Vec<(ScoreSummary, Option<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sd = theta_sd(&model, fit, i);
            let mut rng = seed::rng(config.seed, i as u64);
            let draws: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mode.theta[i] + sd * z
                })
                .collect();
            let summary = ScoreSummary::from_draws(&draws);
            (summary, config.keep_theta_draws.then_some(draws))
        })
        .collect();

    let marginal = match config.estimator {
        Estimator::Marginal => Some(Marginal::new(matrix, config)?),
        Estimator::Joint => None,
    };
    let rows = marginal.as_ref().map(|m| m.log_rows(mode));
    let stages = stage_refs(matrix);
    let per_item: Vec<(ItemSummary, Vec<StageParams>, Vec<String>)> = stages
        .par_iter()
        .enumerate()
        .map(|(b, s)| {
            let key = &matrix.items()[s.item].key;
            let at = s.get(mode);
            let mut warnings = Vec::new();
            let curvature = model.stage_block(&mode.theta, s.item, at, s.missingness);
            let factor = block_cov_factor(&curvature).unwrap_or_else(|| {
                let msg = format!("{key} {} block curvature not positive definite; using diagonal", s.stage().as_str());
                log::warn!("{msg}");
                warnings.push(msg);
                diagonal_factor(&curvature)
            });
            let mut rng = seed::rng(config.seed, (n + b) as u64);
            let (draws, rate) = match (&marginal, &rows) {
                (Some(m), Some(rows)) => {
                    let target = m.block_target(mode, rows, b);
                    block_chain(|p| target.value(p), at, factor, config, &mut rng)
                }
                _ => block_chain(|p| model.stage_block(&mode.theta, s.item, p, s.missingness).value, at, factor, config, &mut rng),
            };
            if !(0.1..=0.6).contains(&rate) {
                let msg = format!("{key} {} item chain acceptance {rate:.3} outside [0.1, 0.6]", s.stage().as_str());
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let lambdas: Vec<f64> = draws.iter().map(StageParams::discrimination).collect();
            let summary = ItemSummary {
                key: key.clone(),
                stage: s.stage(),
                item: s.item,
                discrimination: ScoreSummary::from_draws(&lambdas),
            };
            (summary, draws, warnings)
        })
        .collect();

    let mut scores = Vec::with_capacity(n);
    let mut theta_draws = config.keep_theta_draws.then(|| Vec::with_capacity(n));
    for (s, draws) in per_ad {
        scores.push(s);
        if let (Some(all), Some(draws)) = (theta_draws.as_mut(), draws) {
            all.push(draws);
        }
    }
    let mut items = Vec::with_capacity(per_item.len());
    let mut item_draws = Vec::with_capacity(per_item.len());
    for (s, draws, w) in per_item {
        items.push(s);
        item_draws.push(draws);
        warnings.extend(w);
    }
    Ok(IrtPosterior {
        method: InferenceMethod::Laplace,
        ads: matrix.ads().to_vec(),
        mode: mode.clone(),
        scores,
        items,
        n_draws: d,
        theta_draws,
        item_draws,
        diagnostics: fit.diagnostics.clone(),
        mcmc: None,
        warnings,
    })
}

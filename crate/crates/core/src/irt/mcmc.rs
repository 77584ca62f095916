//! Random-walk Metropolis within blocks, for cross-checking the Laplace
//! approximation on small instances.
//!
//! Blocks are each θ_i and each item stage `(u, β)`. The chain starts at the
//! MAP fit, proposal shapes come from the block curvature there, and step
//! scales adapt during burn-in only. Every block owns its RNG stream, so the
//! chain is reproducible for a seed regardless of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::IrtConfig;
use super::fit::fit_map;
use super::laplace::{block_cov_factor, diagonal_factor, theta_sd};
use super::model::{Model, StageParams};
use super::posterior::{InferenceMethod, IrtPosterior, ItemSummary, McmcDiagnostics, ScoreSummary, Stage};
use crate::error::{Error, Result};
use crate::matrix::IndicatorMatrix;
use crate::seed;

pub(crate) const ADAPT_WINDOW: usize = 50;
const THETA_TARGET: f64 = 0.44;
pub(crate) const ITEM_TARGET: f64 = 0.35;
const MCMC_STREAM: u64 = 0x6d63_6d63;

struct ItemBlock {
    item: usize,
    stage: Stage,
    state: StageParams,
    factor: [[f64; 2]; 2],
    scale: f64,
    rng: ChaCha8Rng,
    window: usize,
    accepted: usize,
    samples: Vec<StageParams>,
}

struct ThetaBlock {
    state: f64,
    sd: f64,
    scale: f64,
    rng: ChaCha8Rng,
    window: usize,
    accepted: usize,
    samples: Vec<f64>,
}

pub(crate) fn adapt(scale: &mut f64, window: &mut usize, target: f64) {
    let rate = *window as f64 / ADAPT_WINDOW as f64;
    *scale *= (rate - target).exp();
    *window = 0;
}

pub fn mcmc_validate(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<IrtPosterior> {
    let n = matrix.n_ads();
    if n > config.mcmc.max_ads {
        return Err(Error::Guardrail {
            ads: n,
            limit: config.mcmc.max_ads,
        });
    }
    let fit = fit_map(matrix, config)?;
    let model = Model::new(matrix, config)?;
    let chain_seed = seed::split_seed(config.seed, MCMC_STREAM);
    let mut params = fit.params.clone();

    let mut thetas: Vec<ThetaBlock> = (0..n)
        .map(|i| ThetaBlock {
            state: params.theta[i],
            sd: theta_sd(&model, &fit, i),
            scale: 2.4,
            rng: seed::rng(chain_seed, i as u64),
            window: 0,
            accepted: 0,
            samples: Vec::with_capacity(config.mcmc.samples),
        })
        .collect();
    let mut items = Vec::new();
    for (j, p) in params.items.iter().enumerate() {
        let stages = [(Stage::Outcome, Some(p.outcome)), (Stage::Missingness, p.missing)];
        for (stage, at) in stages {
            let Some(at) = at else { continue };
            let block = model.stage_block(&params.theta, j, at, stage == Stage::Missingness);
            let factor = block_cov_factor(&block).unwrap_or_else(|| diagonal_factor(&block));
            items.push(ItemBlock {
                item: j,
                stage,
                state: at,
                factor,
                scale: 1.7,
                rng: seed::rng(chain_seed, (n + items.len()) as u64),
                window: 0,
                accepted: 0,
                samples: Vec::with_capacity(config.mcmc.samples),
            });
        }
    }

    let burn_in = config.mcmc.burn_in;
    let total = burn_in + config.mcmc.samples * config.mcmc.thin;
    for sweep in 0..total {
        let sampling = sweep >= burn_in;
        let keep = sampling && (sweep - burn_in + 1) % config.mcmc.thin == 0;
        let adapt_now = !sampling && (sweep + 1) % ADAPT_WINDOW == 0;

        thetas.par_iter_mut().enumerate().for_each(|(i, b)| {
            let current = model.ad_terms(&params, i, b.state).0;
            let z: f64 = b.rng.sample(StandardNormal);
            let proposal = b.state + b.scale * b.sd * z;
            let candidate = model.ad_terms(&params, i, proposal).0;
            let u: f64 = b.rng.random();
            if u.ln() < candidate - current {
                b.state = proposal;
                b.window += 1;
                if sampling {
                    b.accepted += 1;
                }
            }
            if adapt_now {
                adapt(&mut b.scale, &mut b.window, THETA_TARGET);
            }
            if keep {
                b.samples.push(b.state);
            }
        });
        for (t, b) in params.theta.iter_mut().zip(&thetas) {
            *t = b.state;
        }

        items.par_iter_mut().for_each(|b| {
            let missing = b.stage == Stage::Missingness;
            let current = model.stage_block(&params.theta, b.item, b.state, missing).value;
            let z0: f64 = b.rng.sample(StandardNormal);
            let z1: f64 = b.rng.sample(StandardNormal);
            let l = b.factor;
            let proposal = StageParams {
                disc_logit: b.state.disc_logit + b.scale * l[0][0] * z0,
                difficulty: b.state.difficulty + b.scale * (l[1][0] * z0 + l[1][1] * z1),
            };
            let candidate = model.stage_block(&params.theta, b.item, proposal, missing).value;
            let u: f64 = b.rng.random();
            if u.ln() < candidate - current {
                b.state = proposal;
                b.window += 1;
                if sampling {
                    b.accepted += 1;
                }
            }
            if adapt_now {
                adapt(&mut b.scale, &mut b.window, ITEM_TARGET);
            }
            if keep {
                b.samples.push(b.state);
            }
        });
        for b in &items {
            match b.stage {
                Stage::Outcome => params.items[b.item].outcome = b.state,
                Stage::Missingness => params.items[b.item].missing = Some(b.state),
            }
        }
    }

    let post_sweeps = (total - burn_in).max(1) as f64;
    let rate = |acc: usize, blocks: usize| {
        if blocks == 0 {
            f64::NAN
        } else {
            acc as f64 / (blocks as f64 * post_sweeps)
        }
    };
    let theta_acceptance = rate(thetas.iter().map(|b| b.accepted).sum(), thetas.len());
    let item_acceptance = rate(items.iter().map(|b| b.accepted).sum(), items.len());
    let mut warnings = Vec::new();
    for (what, r) in [("theta", theta_acceptance), ("item", item_acceptance)] {
        if r.is_finite() && !(0.1..=0.6).contains(&r) {
            let msg = format!("{what} acceptance rate {r:.3} outside [0.1, 0.6] after adaptation");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let scores = thetas.iter().map(|b| ScoreSummary::from_draws(&b.samples)).collect();
    let summaries = items
        .iter()
        .map(|b| {
            let lambdas: Vec<f64> = b.samples.iter().map(StageParams::discrimination).collect();
            ItemSummary {
                key: matrix.items()[b.item].key.clone(),
                stage: b.stage,
                item: b.item,
                discrimination: ScoreSummary::from_draws(&lambdas),
            }
        })
        .collect();
    let n_draws = config.mcmc.samples;
    Ok(IrtPosterior {
        method: InferenceMethod::Mcmc,
        ads: matrix.ads().to_vec(),
        mode: fit.params,
        scores,
        items: summaries,
        n_draws,
        theta_draws: config.keep_theta_draws.then(|| thetas.into_iter().map(|b| b.samples).collect()),
        item_draws: items.into_iter().map(|b| b.samples).collect(),
        diagnostics: fit.diagnostics,
        mcmc: Some(McmcDiagnostics {
            theta_acceptance,
            item_acceptance,
            sweeps: total,
        }),
        warnings,
    })
}

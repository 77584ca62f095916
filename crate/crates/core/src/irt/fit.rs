//! Posterior mode by alternating blockwise Newton ascent.
//!
//! Each sweep updates every θ_i given the items (1-D, strictly concave) and
//! then every item stage `(u, β)` given θ (2-D, damped Newton with
//! backtracking). Blocks within a sweep are independent, so both halves run
//! in parallel; every block sums over its data in a fixed order, which makes
//! the result identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Estimator, IrtConfig};
use super::marginal::fit_marginal;
use super::model::{discrimination_logit, Block2, IrtParams, Model, StageParams};
use crate::error::{Error, Result};
use crate::matrix::{IndicatorMatrix, Response};

pub(crate) const INNER_STEPS: usize = 4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_posterior: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub params: IrtParams,
    pub diagnostics: FitDiagnostics,
}

/// Deterministic starting point oriented by the sign-informative priors.
pub fn initial_params(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<IrtParams> {
    let signs: Vec<i8> = matrix
        .items()
        .iter()
        .map(|it| config.discrimination_prior_for(&it.key).sign())
        .collect();
    if signs.iter().all(|&s| s == 0) {
        return Err(Error::RotationUnidentified);
    }
    let raw: Vec<f64> = (0..matrix.n_ads())
        .map(|i| {
            let (mut sum, mut n) = (0.0, 0usize);
            for (cell, &s) in matrix.row(i).iter().zip(&signs) {
                if cell.is_missing() {
                    continue;
                }
                let signed = if *cell == Response::Yes { 1.0 } else { -1.0 };
                sum += if s < 0 { -signed } else { signed };
                n += 1;
            }
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut params = IrtParams::zeros(matrix);
    params.theta = raw
        .iter()
        .map(|x| if sd > 1e-12 { (x - mean) / sd } else { 0.0 })
        .collect();
    for (p, &s) in params.items.iter_mut().zip(&signs) {
        let g: f64 = match s {
            1 => 0.55,
            -1 => 0.45,
            _ => 0.5,
        };
        p.outcome.disc_logit = discrimination_logit(2.0 * g - 1.0);
    }
    Ok(params)
}

/// Newton ascent on one θ_i given the items, from `start`.
pub(crate) fn newton_theta(model: &Model<'_>, params: &IrtParams, i: usize, start: f64, max_step: f64, steps: usize) -> f64 {
    let mut th = start;
    for _ in 0..steps {
        let (f, g, h) = model.ad_terms(params, i, th);
        if g == 0.0 || h >= 0.0 {
            break;
        }
        let mut step = (-g / h).clamp(-max_step, max_step);
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let cand = th + step;
            if model.ad_terms(params, i, cand).0 >= f {
                moved = cand != th;
                th = cand;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    th
}

/// Solves `(−H + μI) δ = g`, raising μ until the system is positive definite.
pub(crate) fn damped_step(b: &Block2) -> [f64; 2] {
    let scale = 1.0 + b.hess[0][0].abs() + b.hess[1][1].abs();
    let mut mu = 0.0;
    loop {
        let a11 = -b.hess[0][0] + mu;
        let a22 = -b.hess[1][1] + mu;
        let a12 = -b.hess[0][1];
        let det = a11 * a22 - a12 * a12;
        if a11 > 0.0 && det > 1e-14 * scale * scale {
            return [(a22 * b.grad[0] - a12 * b.grad[1]) / det, (a11 * b.grad[1] - a12 * b.grad[0]) / det];
        }
        mu = if mu == 0.0 { 1e-6 * scale } else { mu * 10.0 };
        if !mu.is_finite() {
            return [0.0, 0.0];
        }
    }
}

/// Damped Newton ascent on a 2-parameter block with backtracking.
pub(crate) fn newton_block(block: impl Fn(StageParams) -> Block2, start: StageParams, max_step: f64, steps: usize) -> StageParams {
    let mut s = start;
    for _ in 0..steps {
        let b = block(s);
        let mut step = damped_step(&b);
        let len = step[0].hypot(step[1]);
        if len == 0.0 || !len.is_finite() {
            break;
        }
        if len > max_step {
            step = [step[0] * max_step / len, step[1] * max_step / len];
        }
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let cand = StageParams {
                disc_logit: s.disc_logit + step[0],
                difficulty: s.difficulty + step[1],
            };
            if block(cand).value >= b.value {
                moved = cand != s;
                s = cand;
                break;
            }
            step = [step[0] * 0.5, step[1] * 0.5];
        }
        if !moved {
            break;
        }
    }
    s
}

/// One θ sweep followed by one item sweep.
pub(crate) fn sweep(model: &Model<'_>, params: &mut IrtParams) {
    let step = model.config.step_size;
    let theta: Vec<f64> = (0..params.theta.len())
        .into_par_iter()
        .map(|i| newton_theta(model, params, i, params.theta[i], step, INNER_STEPS))
        .collect();
    params.theta = theta;
    let items: Vec<_> = (0..params.items.len())
        .into_par_iter()
        .map(|j| {
            let mut p = params.items[j];
            let theta = &params.theta;
            p.outcome = newton_block(|s| model.stage_block(theta, j, s, false), p.outcome, step, INNER_STEPS);
            if let Some(m) = p.missing {
                p.missing = Some(newton_block(|s| model.stage_block(theta, j, s, true), m, step, INNER_STEPS));
            }
            p
        })
        .collect();
    params.items = items;
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Point estimate used as the centre of the posterior draws: by default the
/// marginal item mode with θ at its conditional mode, or the joint mode.
pub fn fit_map(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<MapFit> {
    matrix.check_fittable()?;
    match config.estimator {
        Estimator::Marginal => fit_marginal(matrix, config),
        Estimator::Joint => fit_joint(matrix, config),
    }
}

pub(crate) fn diverged(iteration: usize) -> impl Fn(Error) -> Error {
    move |e: Error| match e {
        Error::NonFinite { .. } => Error::Divergence { iteration },
        other => other,
    }
}

fn fit_joint(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<MapFit> {
    let model = Model::new(matrix, config)?;
    let mut params = initial_params(matrix, config)?;
    let mut lp = model.log_posterior(&params).map_err(diverged(0))?;
    let mut grad_norm = norm(&model.gradient(&params).map_err(diverged(0))?);
    let mut iterations = 0;
    while grad_norm >= config.tol && iterations < config.max_iters {
        iterations += 1;
        sweep(&model, &mut params);
        lp = model.log_posterior(&params).map_err(diverged(iterations))?;
        grad_norm = norm(&model.gradient(&params).map_err(diverged(iterations))?);
    }
    let converged = grad_norm < config.tol;
    if !converged {
        log::warn!("joint fit stopped after {iterations} iterations with gradient norm {grad_norm:.3e}");
    }
    Ok(MapFit {
        params,
        diagnostics: FitDiagnostics {
            log_posterior: lp,
            gradient_norm: grad_norm,
            iterations,
            converged,
        },
    })
}

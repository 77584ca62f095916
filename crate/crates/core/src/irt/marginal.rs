//! Item parameters at the mode of their marginal posterior.
//!
//! θ is integrated out on a fixed trapezoid grid spanning ±6 prior standard
//! deviations. The mode is found by EM: the E-step turns each ad's grid
//! posterior into expected trial and success counts per node and item stage,
//! the M-step takes damped Newton steps on each stage against those counts.
//! By Fisher's identity the gradient of the M-step objective at the current
//! parameters is the gradient of the marginal log posterior, which gives the
//! stopping rule. Each θ then goes to its conditional mode given the items.

use rayon::prelude::*;

use super::config::{BetaPrior, IrtConfig};
use super::fit::{diverged, initial_params, newton_block, newton_theta, norm, FitDiagnostics, MapFit, INNER_STEPS};
use super::model::{beta_logit_terms, block_terms, log_sigmoid, normal_logpdf, sigmoid, Block2, IrtParams, Model, StageParams};
use super::posterior::Stage;
use crate::error::{Error, Result};
use crate::matrix::IndicatorMatrix;

const GRID_HALF_WIDTH: f64 = 6.0;
const THETA_STEPS: usize = 100;

/// Quadrature nodes with log weights that include the N(0, sd) prior.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl Grid {
    pub fn new(points: usize, sd: f64) -> Self {
        let half = GRID_HALF_WIDTH * sd;
        let step = 2.0 * half / (points - 1) as f64;
        let nodes: Vec<f64> = (0..points).map(|q| -half + q as f64 * step).collect();
        let log_weights = nodes
            .iter()
            .enumerate()
            .map(|(q, &t)| {
                let end = if q == 0 || q + 1 == points { 0.5f64.ln() } else { 0.0 };
                normal_logpdf(t, sd) + step.ln() + end
            })
            .collect();
        Grid { nodes, log_weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}

/// One item stage: the outcome stage of an item or its missingness stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StageRef {
    pub item: usize,
    pub missingness: bool,
}

impl StageRef {
    pub fn get(&self, params: &IrtParams) -> StageParams {
        let p = &params.items[self.item];
        if self.missingness {
            p.missing.expect("missingness stage on a non-missable item")
        } else {
            p.outcome
        }
    }

    pub fn set(&self, params: &mut IrtParams, s: StageParams) {
        let p = &mut params.items[self.item];
        if self.missingness {
            p.missing = Some(s);
        } else {
            p.outcome = s;
        }
    }

    pub fn stage(&self) -> Stage {
        if self.missingness {
            Stage::Missingness
        } else {
            Stage::Outcome
        }
    }
}

/// Stages in flat-vector order: each item's outcome, then its missingness.
pub(crate) fn stage_refs(matrix: &IndicatorMatrix) -> Vec<StageRef> {
    let mut out = Vec::new();
    for (item, it) in matrix.items().iter().enumerate() {
        out.push(StageRef {
            item,
            missingness: false,
        });
        if it.can_be_missing {
            out.push(StageRef {
                item,
                missingness: true,
            });
        }
    }
    out
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-ad grid posteriors at one parameter value.
struct EStep {
    /// Normalized node weights, `n_ads × Q` row-major.
    post: Vec<f64>,
    /// Marginal log-likelihood of each ad's row.
    loglik: Vec<f64>,
}

pub(crate) struct Marginal<'a> {
    pub model: Model<'a>,
    pub grid: Grid,
    pub stages: Vec<StageRef>,
    /// `responses[s][i]`: what stage `s` sees for ad `i`.
    responses: Vec<Vec<Option<bool>>>,
}

impl<'a> Marginal<'a> {
    pub fn new(matrix: &'a IndicatorMatrix, config: &'a IrtConfig) -> Result<Self> {
        let model = Model::new(matrix, config)?;
        let stages = stage_refs(matrix);
        let responses = stages
            .iter()
            .map(|s| (0..matrix.n_ads()).map(|i| model.stage_response(i, s.item, s.missingness)).collect())
            .collect();
        Ok(Marginal {
            grid: Grid::new(config.quadrature_points, config.theta_sd),
            model,
            stages,
            responses,
        })
    }

    fn prior(&self, k: usize) -> BetaPrior {
        let s = self.stages[k];
        self.model.stage_prior(s.item, s.missingness)
    }

    /// `[ln(1 − p_q), ln p_q]` over the grid.
    fn log_tables(&self, s: StageParams) -> [Vec<f64>; 2] {
        let lam = s.discrimination();
        let eta: Vec<f64> = self.grid.nodes.iter().map(|t| lam * t - s.difficulty).collect();
        [eta.iter().map(|e| log_sigmoid(-e)).collect(), eta.iter().map(|e| log_sigmoid(*e)).collect()]
    }

    /// Unnormalized log grid posterior of every ad, `n_ads × Q` row-major.
    pub fn log_rows(&self, params: &IrtParams) -> Vec<f64> {
        let q = self.grid.len();
        let tables: Vec<[Vec<f64>; 2]> = self.stages.iter().map(|s| self.log_tables(s.get(params))).collect();
        let mut rows = vec![0.0; self.model.matrix.n_ads() * q];
        rows.par_chunks_mut(q).enumerate().for_each(|(i, row)| {
            row.copy_from_slice(&self.grid.log_weights);
            for (k, tab) in tables.iter().enumerate() {
                if let Some(y) = self.responses[k][i] {
                    for (r, l) in row.iter_mut().zip(&tab[usize::from(y)]) {
                        *r += l;
                    }
                }
            }
        });
        rows
    }

    fn e_step(&self, params: &IrtParams) -> EStep {
        let q = self.grid.len();
        let mut post = self.log_rows(params);
        let loglik: Vec<f64> = post
            .par_chunks_mut(q)
            .map(|row| {
                let lse = logsumexp(row);
                for r in row.iter_mut() {
                    *r = (*r - lse).exp();
                }
                lse
            })
            .collect();
        EStep { post, loglik }
    }

    /// Expected `(node, trials, successes)` for stage `k`.
    fn counts(&self, post: &[f64], k: usize) -> Vec<(f64, f64, f64)> {
        let q = self.grid.len();
        let mut n = vec![0.0; q];
        let mut r = vec![0.0; q];
        for (row, y) in post.chunks(q).zip(&self.responses[k]) {
            let Some(y) = *y else { continue };
            for (nq, w) in n.iter_mut().zip(row) {
                *nq += w;
            }
            if y {
                for (rq, w) in r.iter_mut().zip(row) {
                    *rq += w;
                }
            }
        }
        self.grid.nodes.iter().zip(n).zip(r).map(|((&t, n), r)| (t, n, r)).collect()
    }

    fn block(&self, counts: &[(f64, f64, f64)], k: usize, s: StageParams) -> Block2 {
        block_terms(counts.iter().copied(), s, self.prior(k), self.model.config.difficulty_sd)
    }

    fn prior_value(&self, k: usize, s: StageParams) -> f64 {
        beta_logit_terms(s.disc_logit, self.prior(k)).0 + normal_logpdf(s.difficulty, self.model.config.difficulty_sd)
    }

    /// Marginal log posterior and its gradient over the stages, in order.
    fn evaluate(&self, params: &IrtParams) -> (f64, Vec<[f64; 2]>, Vec<Vec<(f64, f64, f64)>>) {
        let e = self.e_step(params);
        let counts: Vec<Vec<(f64, f64, f64)>> = (0..self.stages.len()).into_par_iter().map(|k| self.counts(&e.post, k)).collect();
        let grads = counts
            .iter()
            .enumerate()
            .map(|(k, c)| self.block(c, k, self.stages[k].get(params)).grad)
            .collect();
        let mut lp: f64 = e.loglik.iter().sum();
        for (k, s) in self.stages.iter().enumerate() {
            lp += self.prior_value(k, s.get(params));
        }
        (lp, grads, counts)
    }

    /// Target density of one stage's `(u, β)` with every other stage held at
    /// `params` and θ integrated out.
    pub fn block_target(&self, params: &IrtParams, rows: &[f64], k: usize) -> BlockTarget {
        let q = self.grid.len();
        let tab = self.log_tables(self.stages[k].get(params));
        let mut target = BlockTarget {
            nodes: self.grid.nodes.clone(),
            yes: Vec::new(),
            no: Vec::new(),
            prior: self.prior(k),
            difficulty_sd: self.model.config.difficulty_sd,
        };
        for (row, y) in rows.chunks(q).zip(&self.responses[k]) {
            let Some(y) = *y else { continue };
            let own = &tab[usize::from(y)];
            let rest: Vec<f64> = row.iter().zip(own).map(|(r, o)| r - o).collect();
            let m = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dest = if y { &mut target.yes } else { &mut target.no };
            dest.extend(rest.iter().map(|r| (r - m).exp()));
        }
        target
    }
}

/// Marginal block density of one stage: per ad `ln Σ_q E_iq P(y_i | t_q)`
/// with `E` the ad's grid weights from every other stage.
pub(crate) struct BlockTarget {
    nodes: Vec<f64>,
    yes: Vec<f64>,
    no: Vec<f64>,
    prior: BetaPrior,
    difficulty_sd: f64,
}

impl BlockTarget {
    pub fn value(&self, s: StageParams) -> f64 {
        let lam = s.discrimination();
        let q = self.nodes.len();
        let p: Vec<f64> = self.nodes.iter().map(|t| sigmoid(lam * t - s.difficulty)).collect();
        let p_no: Vec<f64> = self.nodes.iter().map(|t| sigmoid(s.difficulty - lam * t)).collect();
        let mut v = beta_logit_terms(s.disc_logit, self.prior).0 + normal_logpdf(s.difficulty, self.difficulty_sd);
        for (rows, probs) in [(&self.yes, &p), (&self.no, &p_no)] {
            for row in rows.chunks(q) {
                v += row.iter().zip(probs.iter()).map(|(e, p)| e * p).sum::<f64>().ln();
            }
        }
        v
    }
}

pub(crate) fn fit_marginal(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<MapFit> {
    let marg = Marginal::new(matrix, config)?;
    let mut params = initial_params(matrix, config)?;
    let step = config.step_size;
    let mut iterations = 0;
    let (lp, item_grad_norm) = loop {
        let (lp, grads, counts) = marg.evaluate(&params);
        let flat: Vec<f64> = grads.iter().flatten().copied().collect();
        let grad_norm = norm(&flat);
        if !lp.is_finite() || !grad_norm.is_finite() {
            return Err(diverged(iterations)(Error::NonFinite { index: 0 }));
        }
        if grad_norm < config.tol || iterations >= config.max_iters {
            break (lp, grad_norm);
        }
        iterations += 1;
        let updated: Vec<StageParams> = (0..marg.stages.len())
            .into_par_iter()
            .map(|k| newton_block(|s| marg.block(&counts[k], k, s), marg.stages[k].get(&params), step, INNER_STEPS))
            .collect();
        for (s, u) in marg.stages.iter().zip(updated) {
            s.set(&mut params, u);
        }
    };

    // θ given the items, started from each ad's grid posterior mean
    let e = marg.e_step(&params);
    let q = marg.grid.len();
    let starts: Vec<f64> = e
        .post
        .chunks(q)
        .map(|row| row.iter().zip(&marg.grid.nodes).map(|(w, t)| w * t).sum())
        .collect();
    let model = &marg.model;
    let fixed = &params;
    let theta: Vec<f64> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &t0)| newton_theta(model, fixed, i, t0, step, THETA_STEPS))
        .collect();
    params.theta = theta;
    let theta_grad: Vec<f64> = (0..params.theta.len())
        .into_par_iter()
        .map(|i| model.ad_terms(&params, i, params.theta[i]).1)
        .collect();
    if let Some(index) = params.theta.iter().zip(&theta_grad).position(|(t, g)| !t.is_finite() || !g.is_finite()) {
        return Err(diverged(iterations)(Error::NonFinite { index }));
    }
    let gradient_norm = item_grad_norm.hypot(norm(&theta_grad));
    let converged = gradient_norm < config.tol;
    if !converged {
        log::warn!("marginal fit stopped after {iterations} iterations with gradient norm {gradient_norm:.3e}");
    }
    Ok(MapFit {
        params,
        diagnostics: FitDiagnostics {
            log_posterior: lp,
            gradient_norm,
            iterations,
            converged,
        },
    })
}

fn check_items(params: &IrtParams, matrix: &IndicatorMatrix) -> Result<()> {
    let items = IrtParams {
        theta: vec![0.0; matrix.n_ads()],
        items: params.items.clone(),
    };
    items.check_shape(matrix)?;
    match items.first_non_finite() {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Log posterior of the item parameters with θ integrated out on the grid.
/// `params.theta` is ignored.
pub fn marginal_log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<f64> {
    check_items(params, matrix)?;
    Ok(Marginal::new(matrix, config)?.evaluate(params).0)
}

/// Gradient of [`marginal_log_posterior`] over the item coordinates, laid out
/// as `[per item (u, β[, uᵐ, βᵐ])…]`.
pub fn grad_marginal_log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<Vec<f64>> {
    check_items(params, matrix)?;
    let grads = Marginal::new(matrix, config)?.evaluate(params).1;
    Ok(grads.into_iter().flatten().collect())
}

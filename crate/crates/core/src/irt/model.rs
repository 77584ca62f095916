//! Likelihood, priors, analytic gradient and block curvature.
//!
//! For ad `i` and item `j` with latent score `θ_i`:
//!
//! * outcome: `P(y_ij = 1) = σ(λ_j θ_i − β_j)`, used when the cell is observed;
//! * missingness (missable items only): `P(m_ij = 1) = σ(λᵐ_j θ_i − βᵐ_j)`.
//!
//! Discriminations are stored on the logit scale, `λ = 2σ(u) − 1 = tanh(u/2)`,
//! and `g = σ(u)` carries a Beta prior. All densities are expressed in the
//! unconstrained coordinates, so the Beta log density picks up the Jacobian
//! `g(1 − g)`:  `a ln g + b ln(1 − g) − ln B(a, b)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BetaPrior, IrtConfig};
use crate::error::{Error, Result};
use crate::matrix::{IndicatorMatrix, Response};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `ln(1e-12)`: floor applied to `ln g` and `ln(1 − g)` in the Beta prior.
pub(crate) const LN_G_FLOOR: f64 = -27.631_021_115_928_547;
const MAX_ABS_DISCRIMINATION: f64 = 1.0 - f64::EPSILON;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn linear_predictor(discrimination: f64, theta: f64, difficulty: f64) -> f64 {
    discrimination * theta - difficulty
}

/// Probability of a positive response (or of a missing cell for the
/// missingness stage).
#[inline]
pub fn response_probability(discrimination: f64, theta: f64, difficulty: f64) -> f64 {
    sigmoid(linear_predictor(discrimination, theta, difficulty))
}

/// Maps the unconstrained coordinate to a discrimination in `(−1, 1)`.
#[inline]
pub fn discrimination(u: f64) -> f64 {
    (0.5 * u).tanh().clamp(-MAX_ABS_DISCRIMINATION, MAX_ABS_DISCRIMINATION)
}

/// Inverse of [`discrimination`].
#[inline]
pub fn discrimination_logit(lambda: f64) -> f64 {
    let l = lambda.clamp(-MAX_ABS_DISCRIMINATION, MAX_ABS_DISCRIMINATION);
    2.0 * l.atanh()
}

#[inline]
pub(crate) fn normal_logpdf(x: f64, sd: f64) -> f64 {
    let z = x / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Log density, first and second derivative of a Beta prior on `σ(u)`,
/// expressed in `u`.
#[inline]
pub(crate) fn beta_logit_terms(u: f64, prior: BetaPrior) -> (f64, f64, f64) {
    let ln_g = log_sigmoid(u);
    let ln_1mg = log_sigmoid(-u);
    let g = sigmoid(u);
    let one_minus_g = sigmoid(-u);
    let mut value = -prior.ln_beta();
    let (mut d1, mut d2) = (0.0, 0.0);
    if ln_g > LN_G_FLOOR {
        value += prior.alpha * ln_g;
        d1 += prior.alpha * one_minus_g;
        d2 -= prior.alpha * g * one_minus_g;
    } else {
        value += prior.alpha * LN_G_FLOOR;
    }
    if ln_1mg > LN_G_FLOOR {
        value += prior.beta * ln_1mg;
        d1 -= prior.beta * g;
        d2 -= prior.beta * g * one_minus_g;
    } else {
        value += prior.beta * LN_G_FLOOR;
    }
    (value, d1, d2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    /// Unconstrained discrimination coordinate `u`.
    pub disc_logit: f64,
    pub difficulty: f64,
}

impl StageParams {
    pub fn discrimination(&self) -> f64 {
        discrimination(self.disc_logit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    pub outcome: StageParams,
    /// Present exactly for missable items.
    pub missing: Option<StageParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtParams {
    pub theta: Vec<f64>,
    pub items: Vec<ItemParams>,
}

impl IrtParams {
    /// All-zero parameters shaped for a matrix.
    pub fn zeros(matrix: &IndicatorMatrix) -> Self {
        let zero = StageParams {
            disc_logit: 0.0,
            difficulty: 0.0,
        };
        IrtParams {
            theta: vec![0.0; matrix.n_ads()],
            items: matrix
                .items()
                .iter()
                .map(|it| ItemParams {
                    outcome: zero,
                    missing: it.can_be_missing.then_some(zero),
                })
                .collect(),
        }
    }

    pub fn discriminations(&self) -> Vec<f64> {
        self.items.iter().map(|p| p.outcome.discrimination()).collect()
    }

    pub fn dim(&self) -> usize {
        self.theta.len() + self.items.iter().map(|p| 2 + 2 * usize::from(p.missing.is_some())).sum::<usize>()
    }

    /// Flattens to `[θ…, per item (u, β[, uᵐ, βᵐ])…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.theta);
        for p in &self.items {
            v.push(p.outcome.disc_logit);
            v.push(p.outcome.difficulty);
            if let Some(m) = p.missing {
                v.push(m.disc_logit);
                v.push(m.difficulty);
            }
        }
        v
    }

    /// Inverse of [`IrtParams::to_vec`] using `self` as the shape template.
    pub fn with_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let n = self.theta.len();
        let mut out = self.clone();
        out.theta.copy_from_slice(&v[..n]);
        let mut k = n;
        for p in &mut out.items {
            p.outcome.disc_logit = v[k];
            p.outcome.difficulty = v[k + 1];
            k += 2;
            if let Some(m) = &mut p.missing {
                m.disc_logit = v[k];
                m.difficulty = v[k + 1];
                k += 2;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_shape(&self, matrix: &IndicatorMatrix) -> Result<()> {
        if self.theta.len() != matrix.n_ads() {
            return Err(Error::Dimension {
                expected: matrix.n_ads(),
                found: self.theta.len(),
            });
        }
        if self.items.len() != matrix.n_items() {
            return Err(Error::Dimension {
                expected: matrix.n_items(),
                found: self.items.len(),
            });
        }
        for (p, it) in self.items.iter().zip(matrix.items()) {
            if p.missing.is_some() != it.can_be_missing {
                return Err(Error::Matrix(format!(
                    "item {} missingness parameters do not match can_be_missing",
                    it.key
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn first_non_finite(&self) -> Option<usize> {
        self.to_vec().iter().position(|x| !x.is_finite())
    }
}

/// Gradient, Hessian and value of a 2-parameter `(u, β)` block.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Block2 {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// A matrix bound to its config: resolved priors and parameter offsets.
pub(crate) struct Model<'a> {
    pub matrix: &'a IndicatorMatrix,
    pub config: &'a IrtConfig,
    pub disc_priors: Vec<BetaPrior>,
    /// Offset of each item's `u` in the flat vector.
    pub offsets: Vec<usize>,
    pub dim: usize,
}

impl<'a> Model<'a> {
    pub fn new(matrix: &'a IndicatorMatrix, config: &'a IrtConfig) -> Result<Self> {
        config.validate()?;
        let disc_priors = matrix.items().iter().map(|it| config.discrimination_prior_for(&it.key)).collect();
        let mut offsets = Vec::with_capacity(matrix.n_items());
        let mut k = matrix.n_ads();
        for it in matrix.items() {
            offsets.push(k);
            k += if it.can_be_missing { 4 } else { 2 };
        }
        Ok(Model {
            matrix,
            config,
            disc_priors,
            offsets,
            dim: k,
        })
    }

    /// Log-likelihood of one ad's row plus its θ prior.
    #[inline]
    pub fn ad_terms(&self, params: &IrtParams, i: usize, theta: f64) -> (f64, f64, f64) {
        let row = self.matrix.row(i);
        let sd = self.config.theta_sd;
        let mut value = normal_logpdf(theta, sd);
        let mut d1 = -theta / (sd * sd);
        let mut d2 = -1.0 / (sd * sd);
        for (cell, p) in row.iter().zip(&params.items) {
            if let Some(m) = p.missing {
                let lam = m.discrimination();
                let eta = linear_predictor(lam, theta, m.difficulty);
                let missing = cell.is_missing();
                let (v, r, w) = bernoulli_logit(missing, eta);
                value += v;
                d1 += r * lam;
                d2 -= w * lam * lam;
            }
            if !cell.is_missing() {
                let lam = p.outcome.discrimination();
                let eta = linear_predictor(lam, theta, p.outcome.difficulty);
                let (v, r, w) = bernoulli_logit(*cell == Response::Yes, eta);
                value += v;
                d1 += r * lam;
                d2 -= w * lam * lam;
            }
        }
        (value, d1, d2)
    }

    pub fn stage_prior(&self, j: usize, missingness: bool) -> BetaPrior {
        if missingness {
            self.config.missing_discrimination_prior
        } else {
            self.disc_priors[j]
        }
    }

    /// The binary response an item stage models for one cell, or `None`
    /// when the cell does not enter that stage.
    #[inline]
    pub fn stage_response(&self, i: usize, j: usize, missingness: bool) -> Option<bool> {
        let cell = self.matrix.get(i, j);
        if missingness {
            Some(cell.is_missing())
        } else if cell.is_missing() {
            None
        } else {
            Some(cell == Response::Yes)
        }
    }

    /// Likelihood of one item stage over all ads plus its priors, with
    /// derivatives in `(u, β)`.
    pub fn stage_block(&self, theta: &[f64], j: usize, stage: StageParams, missingness: bool) -> Block2 {
        let data = theta.iter().enumerate().filter_map(|(i, &th)| {
            self.stage_response(i, j, missingness)
                .map(|y| (th, 1.0, if y { 1.0 } else { 0.0 }))
        });
        block_terms(data, stage, self.stage_prior(j, missingness), self.config.difficulty_sd)
    }

    pub fn log_posterior(&self, params: &IrtParams) -> Result<f64> {
        params.check_shape(self.matrix)?;
        if let Some(index) = params.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let rows: Vec<f64> = (0..self.matrix.n_ads())
            .into_par_iter()
            .map(|i| self.ad_terms(params, i, params.theta[i]).0)
            .collect();
        let mut total = 0.0;
        for (i, v) in rows.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            total += v;
        }
        let sd = self.config.difficulty_sd;
        for (j, p) in params.items.iter().enumerate() {
            let mut v = beta_logit_terms(p.outcome.disc_logit, self.disc_priors[j]).0
                + normal_logpdf(p.outcome.difficulty, sd);
            if let Some(m) = p.missing {
                v += beta_logit_terms(m.disc_logit, self.config.missing_discrimination_prior).0
                    + normal_logpdf(m.difficulty, sd);
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { index: self.offsets[j] });
            }
            total += v;
        }
        Ok(total)
    }

    pub fn gradient(&self, params: &IrtParams) -> Result<Vec<f64>> {
        params.check_shape(self.matrix)?;
        if let Some(index) = params.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let mut grad = vec![0.0; self.dim];
        let n = self.matrix.n_ads();
        grad[..n]
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, g)| *g = self.ad_terms(params, i, params.theta[i]).1);
        let item_grads: Vec<[f64; 4]> = (0..self.matrix.n_items())
            .into_par_iter()
            .map(|j| {
                let p = &params.items[j];
                let b = self.stage_block(&params.theta, j, p.outcome, false);
                let mut out = [b.grad[0], b.grad[1], 0.0, 0.0];
                if let Some(m) = p.missing {
                    let bm = self.stage_block(&params.theta, j, m, true);
                    out[2] = bm.grad[0];
                    out[3] = bm.grad[1];
                }
                out
            })
            .collect();
        for (j, g) in item_grads.iter().enumerate() {
            let k = self.offsets[j];
            let width = if params.items[j].missing.is_some() { 4 } else { 2 };
            grad[k..k + width].copy_from_slice(&g[..width]);
        }
        if let Some(index) = grad.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(grad)
    }
}

/// Log density with derivatives in `(u, β)` of one item stage over
/// weighted binomial data `(θ, trials, successes)`, plus its priors.
pub(crate) fn block_terms(
    data: impl Iterator<Item = (f64, f64, f64)>,
    stage: StageParams,
    prior: BetaPrior,
    difficulty_sd: f64,
) -> Block2 {
    let u = stage.disc_logit;
    let g = sigmoid(u);
    let omg = sigmoid(-u);
    let lam = discrimination(u);
    let dl = 2.0 * g * omg;
    let d2l = dl * (1.0 - 2.0 * g);
    let (mut value, mut gu, mut gb) = (0.0, 0.0, 0.0);
    let (mut huu, mut hub, mut hbb) = (0.0, 0.0, 0.0);
    for (th, n, k) in data {
        let eta = linear_predictor(lam, th, stage.difficulty);
        let p = sigmoid(eta);
        let q = sigmoid(-eta);
        let r = k - n * p;
        let w = n * p * q;
        value += k * log_sigmoid(eta) + (n - k) * log_sigmoid(-eta);
        gu += r * th * dl;
        gb -= r;
        huu += -w * th * th * dl * dl + r * th * d2l;
        hub += w * th * dl;
        hbb -= w;
    }
    let (pv, p1, p2) = beta_logit_terms(u, prior);
    let dsd = difficulty_sd;
    value += pv + normal_logpdf(stage.difficulty, dsd);
    gu += p1;
    huu += p2;
    gb -= stage.difficulty / (dsd * dsd);
    hbb -= 1.0 / (dsd * dsd);
    Block2 {
        value,
        grad: [gu, gb],
        hess: [[huu, hub], [hub, hbb]],
    }
}

/// Value, residual `y − p` and weight `p(1 − p)` of a logit Bernoulli term.
#[inline]
pub(crate) fn bernoulli_logit(y: bool, eta: f64) -> (f64, f64, f64) {
    let p = sigmoid(eta);
    let q = sigmoid(-eta);
    if y {
        (log_sigmoid(eta), q, p * q)
    } else {
        (log_sigmoid(-eta), -p, p * q)
    }
}

/// Log posterior density in the unconstrained parameterization.
pub fn log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<f64> {
    Model::new(matrix, config)?.log_posterior(params)
}

/// Analytic gradient of [`log_posterior`], laid out as [`IrtParams::to_vec`].
pub fn grad_log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<Vec<f64>> {
    Model::new(matrix, config)?.gradient(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{ItemDescriptor, ItemSource};

    fn one_cell(source: ItemSource, missable: bool, cell: Response) -> IndicatorMatrix {
        IndicatorMatrix::new(
            vec!["a".into()],
            vec![ItemDescriptor {
                key: "x".into(),
                source,
                can_be_missing: missable,
            }],
            vec![cell],
        )
        .unwrap()
    }

    fn priors_only(params: &IrtParams, cfg: &IrtConfig) -> f64 {
        let mut v: f64 = params.theta.iter().map(|t| normal_logpdf(*t, cfg.theta_sd)).sum();
        for p in &params.items {
            v += beta_logit_terms(p.outcome.disc_logit, cfg.discrimination_prior).0
                + normal_logpdf(p.outcome.difficulty, cfg.difficulty_sd);
            if let Some(m) = p.missing {
                v += beta_logit_terms(m.disc_logit, cfg.missing_discrimination_prior).0
                    + normal_logpdf(m.difficulty, cfg.difficulty_sd);
            }
        }
        v
    }

    #[test]
    fn symmetric_outcome_term_is_log_half() {
        let m = one_cell(ItemSource::Keyword, false, Response::Yes);
        let cfg = IrtConfig::default();
        let p = IrtParams::zeros(&m);
        let lp = log_posterior(&p, &m, &cfg).unwrap();
        assert!((lp - priors_only(&p, &cfg) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn missing_cell_contributes_only_missingness_term() {
        let m = one_cell(ItemSource::Llm, true, Response::Missing);
        let cfg = IrtConfig::default();
        let p = IrtParams::zeros(&m);
        let lp = log_posterior(&p, &m, &cfg).unwrap();
        assert!((lp - priors_only(&p, &cfg) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn discrimination_stays_open_interval() {
        for u in [-1e6, -80.0, -1.0, 0.0, 1.0, 80.0, 1e6] {
            let l = discrimination(u);
            assert!(l > -1.0 && l < 1.0, "{u} -> {l}");
        }
        assert!((discrimination(discrimination_logit(0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn beta_prior_derivatives_match_differences() {
        for prior in [BetaPrior::new(1.0, 1.0), BetaPrior::new(1000.0, 0.001), BetaPrior::new(0.001, 1000.0)] {
            for u in [-3.0, -0.2, 0.0, 0.7, 5.0, 13.0] {
                let h = 1e-5;
                let (_, d1, d2) = beta_logit_terms(u, prior);
                let fd1 = (beta_logit_terms(u + h, prior).0 - beta_logit_terms(u - h, prior).0) / (2.0 * h);
                let fd2 = (beta_logit_terms(u + h, prior).1 - beta_logit_terms(u - h, prior).1) / (2.0 * h);
                assert!((d1 - fd1).abs() <= 1e-6 * (1.0 + d1.abs()), "{prior:?} {u}: {d1} vs {fd1}");
                assert!((d2 - fd2).abs() <= 1e-6 * (1.0 + d2.abs()), "{prior:?} {u}: {d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn anchor_prior_mode_is_finite() {
        // a(1 − g) = b g  ⇒  g = a / (a + b)
        let prior = BetaPrior::new(1000.0, 0.001);
        let u_star = (1000.0f64 / 0.001).ln();
        assert!(beta_logit_terms(u_star, prior).1.abs() < 1e-9);
    }

    #[test]
    fn non_finite_parameter_reported() {
        let m = one_cell(ItemSource::Keyword, false, Response::Yes);
        let mut p = IrtParams::zeros(&m);
        p.items[0].outcome.difficulty = f64::NAN;
        match log_posterior(&p, &m, &IrtConfig::default()) {
            Err(Error::NonFinite { index }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_vector_round_trip() {
        let m = one_cell(ItemSource::Llm, true, Response::No);
        let p = IrtParams::zeros(&m);
        let v: Vec<f64> = (0..p.dim()).map(|k| k as f64 * 0.5).collect();
        assert_eq!(p.with_vec(&v).unwrap().to_vec(), v);
        assert!(p.with_vec(&v[1..]).is_err());
    }
}

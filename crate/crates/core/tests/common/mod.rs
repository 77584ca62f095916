//! Fixtures and naive oracles shared by the integration tests.
#![allow(dead_code)]

use greenwash::irt::{BetaPrior, IrtConfig, IrtParams, ItemParams, StageParams};
use greenwash::{IndicatorMatrix, ItemDescriptor, ItemSource, Response};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random matrix, parameters and config: up to `max_ads` × `max_items`, with
/// missing cells on annotator items and anchors on some instances.
pub fn random_instance(seed: u64, max_ads: usize, max_items: usize) -> (IndicatorMatrix, IrtParams, IrtConfig) {
    let mut r = rng(seed);
    let n = r.random_range(5..=max_ads);
    let j = r.random_range(2..=max_items);
    let mut items = Vec::with_capacity(j);
    for k in 0..j {
        let source = match (k, r.random_range(0..3)) {
            (0, _) => ItemSource::Keyword,
            (_, 0) => ItemSource::Keyword,
            (_, 1) => ItemSource::Llm,
            _ => ItemSource::Stance,
        };
        let key = match k {
            0 => "natural_gas".to_string(),
            1 if source == ItemSource::Keyword => "fossil_fuel".to_string(),
            _ => format!("item{k:02}"),
        };
        items.push(ItemDescriptor {
            key,
            source,
            can_be_missing: source == ItemSource::Llm,
        });
    }
    let mut cells = Vec::with_capacity(n * j);
    for _ in 0..n {
        for it in &items {
            let c = if it.can_be_missing && r.random_bool(0.2) {
                Response::Missing
            } else {
                Response::from_bool(r.random_bool(0.5))
            };
            cells.push(c);
        }
    }
    let ads = (0..n).map(|i| format!("ad{i:03}")).collect();
    let matrix = IndicatorMatrix::new(ads, items, cells).expect("valid fixture");

    let wide = Normal::new(0.0, 1.5).unwrap();
    let narrow = Normal::new(0.0, 1.0).unwrap();
    let stage = |r: &mut ChaCha8Rng| StageParams {
        disc_logit: wide.sample(r),
        difficulty: narrow.sample(r),
    };
    let theta = (0..n).map(|_| wide.sample(&mut r)).collect();
    let params = IrtParams {
        theta,
        items: matrix
            .items()
            .iter()
            .map(|it| ItemParams {
                outcome: stage(&mut r),
                missing: it.can_be_missing.then(|| stage(&mut r)),
            })
            .collect(),
    };
    let mut config = IrtConfig {
        theta_sd: r.random_range(0.5..2.5),
        difficulty_sd: r.random_range(1.0..4.0),
        discrimination_prior: BetaPrior::new(r.random_range(0.5..3.0), r.random_range(0.5..3.0)),
        missing_discrimination_prior: BetaPrior::new(r.random_range(0.5..3.0), r.random_range(0.5..3.0)),
        ..IrtConfig::default()
    };
    if r.random_bool(0.5) {
        config.anchors.clear();
    }
    (matrix, params, config)
}

fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn naive_bernoulli(y: bool, eta: f64) -> f64 {
    let p = naive_sigmoid(eta);
    if y {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

fn naive_normal(x: f64, sd: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - x * x / (2.0 * sd * sd)
}

fn naive_beta_on_logit(u: f64, prior: BetaPrior) -> f64 {
    const FLOOR: f64 = 1e-12;
    let g = naive_sigmoid(u);
    let ln_b = libm::lgamma(prior.alpha) + libm::lgamma(prior.beta) - libm::lgamma(prior.alpha + prior.beta);
    prior.alpha * g.max(FLOOR).ln() + prior.beta * (1.0 - g).max(FLOOR).ln() - ln_b
}

/// Log-likelihood of one ad's row at `th`.
pub fn naive_row(params: &IrtParams, matrix: &IndicatorMatrix, i: usize, th: f64) -> f64 {
    let mut total = 0.0;
    for (j, it) in matrix.items().iter().enumerate() {
        let cell = matrix.get(i, j);
        let p = &params.items[j];
        if it.can_be_missing {
            let m = p.missing.unwrap();
            let lam = (m.disc_logit / 2.0).tanh();
            total += naive_bernoulli(cell == Response::Missing, lam * th - m.difficulty);
        }
        if cell != Response::Missing {
            let lam = (p.outcome.disc_logit / 2.0).tanh();
            total += naive_bernoulli(cell == Response::Yes, lam * th - p.outcome.difficulty);
        }
    }
    total
}

pub fn naive_log_likelihood(params: &IrtParams, matrix: &IndicatorMatrix) -> f64 {
    (0..matrix.n_ads()).map(|i| naive_row(params, matrix, i, params.theta[i])).sum()
}

fn naive_item_priors(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> f64 {
    let mut total = 0.0;
    for (it, p) in matrix.items().iter().zip(&params.items) {
        let prior = config.anchors.get(&it.key).copied().unwrap_or(config.discrimination_prior);
        total += naive_beta_on_logit(p.outcome.disc_logit, prior) + naive_normal(p.outcome.difficulty, config.difficulty_sd);
        if let Some(m) = p.missing {
            total += naive_beta_on_logit(m.disc_logit, config.missing_discrimination_prior)
                + naive_normal(m.difficulty, config.difficulty_sd);
        }
    }
    total
}

/// Item-parameter posterior with θ integrated out by composite Simpson's
/// rule over ±`half_width` prior sds.
pub fn naive_marginal_log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig, half_width: f64, intervals: usize) -> f64 {
    let sd = config.theta_sd;
    let (a, b) = (-half_width * sd, half_width * sd);
    let h = (b - a) / intervals as f64;
    let mut total = naive_item_priors(params, matrix, config);
    for i in 0..matrix.n_ads() {
        let logs: Vec<f64> = (0..=intervals)
            .map(|k| {
                let th = a + h * k as f64;
                naive_normal(th, sd) + naive_row(params, matrix, i, th)
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (k, l) in logs.iter().enumerate() {
            let w = if k == 0 || k == intervals { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * (l - top).exp();
        }
        total += top + (s * h / 3.0).ln();
    }
    total
}

/// Log posterior written as one loop over cells, independent of the library.
pub fn naive_log_posterior(params: &IrtParams, matrix: &IndicatorMatrix, config: &IrtConfig) -> f64 {
    let mut total = 0.0;
    for i in 0..matrix.n_ads() {
        let th = params.theta[i];
        total += naive_normal(th, config.theta_sd);
        for (j, it) in matrix.items().iter().enumerate() {
            let cell = matrix.get(i, j);
            let p = &params.items[j];
            if it.can_be_missing {
                let m = p.missing.unwrap();
                let lam = (m.disc_logit / 2.0).tanh();
                total += naive_bernoulli(cell == Response::Missing, lam * th - m.difficulty);
            }
            if cell != Response::Missing {
                let lam = (p.outcome.disc_logit / 2.0).tanh();
                total += naive_bernoulli(cell == Response::Yes, lam * th - p.outcome.difficulty);
            }
        }
    }
    for (it, p) in matrix.items().iter().zip(&params.items) {
        let prior = config.anchors.get(&it.key).copied().unwrap_or(config.discrimination_prior);
        total += naive_beta_on_logit(p.outcome.disc_logit, prior) + naive_normal(p.outcome.difficulty, config.difficulty_sd);
        if let Some(m) = p.missing {
            total += naive_beta_on_logit(m.disc_logit, config.missing_discrimination_prior)
                + naive_normal(m.difficulty, config.difficulty_sd);
        }
    }
    total
}

/// Central differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = 1e-5 * x[k].abs().max(1.0);
            v[k] = x[k] + h;
            let up = f(&v);
            v[k] = x[k] - h;
            let down = f(&v);
            v[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(1, |a|, |b|)`.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Gauss-Jordan elimination with partial pivoting on a dense square system.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|k| b[k] / a[k][k]).collect()
}

/// `(XᵀX)⁻¹ Xᵀy` via the normal equations.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    solve(xtx, xty)
}

pub fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

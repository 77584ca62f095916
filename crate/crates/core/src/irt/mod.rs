//! Ideal-point item response model with bounded discriminations, sign
//! anchors and a missingness stage sharing the latent score.

mod config;
mod fit;
mod laplace;
mod marginal;
mod mcmc;
mod model;
mod posterior;

use std::io::{BufRead, Write};
use std::path::Path;

pub use config::{BetaPrior, Estimator, IrtConfig, McmcConfig};
pub use fit::{fit_map, initial_params, FitDiagnostics, MapFit};
pub use laplace::laplace_draws;
pub use marginal::{grad_marginal_log_posterior, marginal_log_posterior};
pub use mcmc::mcmc_validate;
pub use model::{
    discrimination, discrimination_logit, grad_log_posterior, linear_predictor, log_posterior, log_sigmoid,
    response_probability, sigmoid, IrtParams, ItemParams, StageParams,
};
pub use posterior::{
    classify, quantile_sorted, Classification, InferenceMethod, IrtPosterior, ItemSummary, McmcDiagnostics,
    ScoreSummary, Stage,
};

use crate::error::{Error, Result};
use crate::matrix::IndicatorMatrix;

/// Point fit followed by posterior draws around it.
pub fn fit_laplace(matrix: &IndicatorMatrix, config: &IrtConfig) -> Result<IrtPosterior> {
    let fit = fit_map(matrix, config)?;
    laplace_draws(&fit, matrix, config)
}

pub const SCORES_FILE: &str = "scores.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_scores<W: Write>(posterior: &IrtPosterior, mut w: W) -> std::io::Result<()> {
    writeln!(w, "ad_id\tmean\tq05\tq95\tclassification")?;
    for (ad, s) in posterior.ads.iter().zip(&posterior.scores) {
        writeln!(w, "{ad}\t{}\t{}\t{}\t{}", s.mean, s.q05, s.q95, classify(s))?;
    }
    w.flush()
}

pub fn write_items<W: Write>(posterior: &IrtPosterior, mut w: W) -> std::io::Result<()> {
    writeln!(w, "key\tstage\tmean\tq05\tq95")?;
    for s in &posterior.items {
        let d = s.discrimination;
        writeln!(w, "{}\t{}\t{}\t{}\t{}", s.key, s.stage.as_str(), d.mean, d.q05, d.q95)?;
    }
    w.flush()
}

pub fn write_diagnostics<W: Write>(posterior: &IrtPosterior, mut w: W) -> std::io::Result<()> {
    let d = &posterior.diagnostics;
    let method = match posterior.method {
        InferenceMethod::Laplace => "map",
        InferenceMethod::Mcmc => "mcmc",
    };
    writeln!(w, "key\tvalue")?;
    writeln!(w, "method\t{method}")?;
    writeln!(w, "draws\t{}", posterior.n_draws)?;
    writeln!(w, "log_posterior\t{}", d.log_posterior)?;
    writeln!(w, "gradient_norm\t{}", d.gradient_norm)?;
    writeln!(w, "iterations\t{}", d.iterations)?;
    writeln!(w, "converged\t{}", d.converged)?;
    if let Some(m) = &posterior.mcmc {
        writeln!(w, "theta_acceptance\t{}", m.theta_acceptance)?;
        writeln!(w, "item_acceptance\t{}", m.item_acceptance)?;
        writeln!(w, "sweeps\t{}", m.sweeps)?;
    }
    for warning in &posterior.warnings {
        writeln!(w, "warning\t{warning}")?;
    }
    w.flush()
}

/// Writes `scores.tsv`, `items.tsv` and `diagnostics.tsv` into `dir`.
pub fn write_fit_dir(posterior: &IrtPosterior, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let targets: [(&str, fn(&IrtPosterior, _) -> std::io::Result<()>); 3] = [
        (SCORES_FILE, write_scores),
        (ITEMS_FILE, write_items),
        (DIAGNOSTICS_FILE, write_diagnostics),
    ];
    for (name, writer) in targets {
        let path = dir.join(name);
        writer(posterior, create(&path)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// One row of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub ad_id: String,
    pub summary: ScoreSummary,
    pub classification: Classification,
}

/// Rows of a tab-separated table with the given header prefix, split into
/// exactly `width` fields.
fn read_table<R: BufRead, T>(
    r: R,
    what: &str,
    header: &str,
    width: usize,
    mut row: impl FnMut(&[&str], &dyn Fn(&str) -> Result<f64>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<{what} stream>"), e))?;
        if n == 0 {
            if !line.starts_with(header) {
                return Err(Error::parse(what, "missing header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("{what} line {}", n + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != width {
            return Err(Error::parse(ctx, format!("expected {width} fields")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(ctx.clone(), e.to_string()));
        out.push(row(&f, &num)?);
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_scores<R: BufRead>(r: R) -> Result<Vec<ScoreRow>> {
    read_table(r, "scores", "ad_id\t", 5, |f, num| {
        Ok(ScoreRow {
            ad_id: f[0].to_string(),
            summary: ScoreSummary {
                mean: num(f[1])?,
                q05: num(f[2])?,
                q95: num(f[3])?,
            },
            classification: f[4].parse()?,
        })
    })
}

pub fn read_scores_path(path: &Path) -> Result<Vec<ScoreRow>> {
    read_scores(open(path)?)
}

/// Reads an items table back into summaries (`item` holds the row index).
pub fn read_items<R: BufRead>(r: R) -> Result<Vec<ItemSummary>> {
    let mut k = 0;
    read_table(r, "items", "key\t", 5, |f, num| {
        k += 1;
        Ok(ItemSummary {
            key: f[0].to_string(),
            stage: f[1].parse()?,
            item: k - 1,
            discrimination: ScoreSummary {
                mean: num(f[2])?,
                q05: num(f[3])?,
                q95: num(f[4])?,
            },
        })
    })
}

pub fn read_items_path(path: &Path) -> Result<Vec<ItemSummary>> {
    read_items(open(path)?)
}

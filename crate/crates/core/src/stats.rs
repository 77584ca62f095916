//! OLS with squares and pairwise interactions.
//!
//! Model formulas are written like `a + b + a^2 + a:b`; the intercept is
//! implicit and `- 1` (or a leading `0 +`) drops it. Design columns are
//! always ordered intercept, main effects, squares, interactions, whatever
//! order the formula lists them in.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CovariateTable;

/// Relative size of a QR diagonal entry below which a column counts as
/// linearly dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Main(String),
    Square(String),
    Interaction(String, String),
}

impl Term {
    fn rank(&self) -> u8 {
        match self {
            Term::Main(_) => 0,
            Term::Square(_) => 1,
            Term::Interaction(..) => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Term::Main(a) => a.clone(),
            Term::Square(a) => format!("{a}^2"),
            Term::Interaction(a, b) => format!("{a}:{b}"),
        }
    }

    fn columns(&self) -> Vec<&str> {
        match self {
            Term::Main(a) | Term::Square(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    /// Same interaction regardless of the order its parents are written in.
    fn same_as(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Interaction(a, b), Term::Interaction(c, d)) => (a == c && b == d) || (a == d && b == c),
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: String,
    /// In design-column order.
    pub terms: Vec<Term>,
    pub intercept: bool,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || "+:^".contains(c))
}

impl ModelSpec {
    pub fn parse(outcome: &str, formula: &str) -> Result<Self> {
        let bad = |msg: String| Error::parse("model terms", msg);
        if !valid_name(outcome) {
            return Err(bad(format!("invalid outcome name {outcome:?}")));
        }
        let mut intercept = true;
        let mut terms: Vec<Term> = Vec::new();
        let mut rest = formula.trim();
        if let Some(r) = rest.strip_suffix("- 1").or_else(|| rest.strip_suffix("-1")) {
            intercept = false;
            rest = r.trim_end();
        }
        for (k, raw) in rest.split('+').enumerate() {
            let t = raw.trim();
            if k == 0 && t == "0" {
                intercept = false;
                continue;
            }
            if t == "1" {
                continue;
            }
            let term = if let Some((a, b)) = t.split_once(':') {
                let (a, b) = (a.trim(), b.trim());
                if !valid_name(a) || !valid_name(b) || a == b {
                    return Err(bad(format!("invalid interaction {t:?}")));
                }
                Term::Interaction(a.into(), b.into())
            } else if let Some(a) = t.strip_suffix("^2") {
                let a = a.trim();
                if !valid_name(a) {
                    return Err(bad(format!("invalid square {t:?}")));
                }
                Term::Square(a.into())
            } else if valid_name(t) {
                Term::Main(t.into())
            } else {
                return Err(bad(format!("invalid term {t:?}")));
            };
            if terms.iter().any(|x| x.same_as(&term)) {
                return Err(bad(format!("duplicate term {}", term.name())));
            }
            terms.push(term);
        }
        if terms.is_empty() && !intercept {
            return Err(bad("model has no columns".into()));
        }
        // stable: formula order within each kind
        terms.sort_by_key(Term::rank);
        Ok(ModelSpec {
            outcome: outcome.into(),
            terms,
            intercept,
        })
    }

    /// Column names in design order.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.terms.len() + 1);
        if self.intercept {
            out.push("(Intercept)".to_string());
        }
        out.extend(self.terms.iter().map(Term::name));
        out
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len() + usize::from(self.intercept)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Source row of each design row.
    pub rows: Vec<usize>,
    /// Rows removed because a referenced cell was missing.
    pub dropped: usize,
}

/// Builds `(X, y)` with listwise deletion.
pub fn design_matrix(table: &CovariateTable, spec: &ModelSpec) -> Result<Design> {
    let col = |name: &str| table.column_index(name).ok_or_else(|| Error::UnknownColumn(name.to_string()));
    let outcome = col(&spec.outcome)?;
    let term_cols: Vec<Vec<usize>> = spec
        .terms
        .iter()
        .map(|t| t.columns().into_iter().map(col).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let p = spec.n_columns();
    let mut data = Vec::new();
    let mut ys = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = 0;
    'rows: for r in 0..table.n_rows() {
        let Some(y) = table.value(r, outcome) else {
            dropped += 1;
            continue;
        };
        let mut line = Vec::with_capacity(p);
        if spec.intercept {
            line.push(1.0);
        }
        for (t, cols) in spec.terms.iter().zip(&term_cols) {
            let mut vals = Vec::with_capacity(2);
            for &c in cols {
                match table.value(r, c) {
                    Some(v) => vals.push(v),
                    None => {
                        dropped += 1;
                        continue 'rows;
                    }
                }
            }
            line.push(match t {
                Term::Main(_) => vals[0],
                Term::Square(_) => vals[0] * vals[0],
                Term::Interaction(..) => vals[0] * vals[1],
            });
        }
        data.extend(line);
        ys.push(y);
        rows.push(r);
    }
    let n = rows.len();
    if n <= p {
        return Err(Error::InsufficientObservations { n, p });
    }
    Ok(Design {
        names: spec.column_names(),
        x: DMatrix::from_row_slice(n, p, &data),
        y: DVector::from_vec(ys),
        rows,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    /// `σ̂²(XᵀX)⁻¹`.
    #[default]
    Classical,
    /// White's heteroskedasticity-consistent estimator with the `n/(n − p)`
    /// small-sample factor.
    Hc1,
}

impl std::str::FromStr for Covariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Covariance::Classical),
            "hc1" => Ok(Covariance::Hc1),
            other => Err(Error::Config(format!("unknown covariance {other:?} (classical | hc1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residual_se: f64,
    pub f_statistic: f64,
    pub df_model: usize,
    pub df_resid: usize,
    pub n: usize,
    pub intercept: bool,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Least squares through a Householder QR of `X`. `names` label the columns.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String], intercept: bool, covariance: Covariance) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, found: y.len() });
    }
    if names.len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: names.len(),
        });
    }
    if n <= p {
        return Err(Error::InsufficientObservations { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for k in 0..p {
        let scale = x.column(k).norm();
        if scale == 0.0 || r[(k, k)].abs() <= RANK_TOL * scale {
            return Err(Error::RankDeficient(names[k].clone()));
        }
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(names[p - 1].clone()))?;
    let fitted = x * &beta;
    let resid = y - &fitted;
    let ssr = resid.norm_squared();
    let df_resid = n - p;
    let sigma2 = ssr / df_resid as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient(names[p - 1].clone()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let cov = match covariance {
        Covariance::Classical => &xtx_inv * sigma2,
        Covariance::Hc1 => {
            let mut meat = DMatrix::zeros(p, p);
            for i in 0..n {
                let xi = x.row(i).transpose();
                meat += &xi * xi.transpose() * (resid[i] * resid[i]);
            }
            &xtx_inv * meat * &xtx_inv * (n as f64 / df_resid as f64)
        }
    };
    let se: Vec<f64> = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let t_values = coefficients.iter().zip(&se).map(|(b, s)| b / s).collect();

    let sst = if intercept {
        let mean = y.mean();
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 0.0 };
    let df_model = p - usize::from(intercept);
    let df_total = n - usize::from(intercept);
    let adj_r_squared = 1.0 - (1.0 - r_squared) * df_total as f64 / df_resid as f64;
    let f_statistic = if df_model == 0 {
        f64::NAN
    } else {
        ((sst - ssr) / df_model as f64) / sigma2
    };
    Ok(OlsFit {
        names: names.to_vec(),
        coefficients,
        std_errors: se,
        t_values,
        covariance: cov,
        r_squared,
        adj_r_squared,
        residual_se: sigma2.sqrt(),
        f_statistic,
        df_model,
        df_resid,
        n,
        intercept,
        fitted: fitted.iter().copied().collect(),
        residuals: resid.iter().copied().collect(),
    })
}

/// Builds the design and fits it.
pub fn fit_spec(table: &CovariateTable, spec: &ModelSpec, covariance: Covariance) -> Result<(OlsFit, Design)> {
    let d = design_matrix(table, spec)?;
    let fit = ols(&d.x, &d.y, &d.names, spec.intercept, covariance)?;
    Ok((fit, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalEffect {
    pub moderator: f64,
    pub effect: f64,
    pub std_error: f64,
}

/// `b_var + b_inter · m` with delta-method standard errors over `grid`.
pub fn marginal_effect(fit: &OlsFit, var: &str, moderator: &str, grid: &[f64]) -> Result<Vec<MarginalEffect>> {
    let missing = || Error::MissingInteraction {
        var: var.to_string(),
        moderator: moderator.to_string(),
    };
    let v = fit.coefficient(var).ok_or_else(missing)?;
    let i = fit
        .coefficient(&format!("{var}:{moderator}"))
        .or_else(|| fit.coefficient(&format!("{moderator}:{var}")))
        .ok_or_else(missing)?;
    let c = &fit.covariance;
    Ok(grid
        .iter()
        .map(|&m| MarginalEffect {
            moderator: m,
            effect: fit.coefficients[v] + fit.coefficients[i] * m,
            std_error: (c[(v, v)] + m * m * c[(i, i)] + 2.0 * m * c[(v, i)]).max(0.0).sqrt(),
        })
        .collect())
}

/// Coefficient table followed by the fit block.
pub fn write_ols<W: Write>(fit: &OlsFit, dropped: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "term\testimate\tstd_error\tt_value")?;
    for k in 0..fit.names.len() {
        writeln!(w, "{}\t{}\t{}\t{}", fit.names[k], fit.coefficients[k], fit.std_errors[k], fit.t_values[k])?;
    }
    writeln!(w)?;
    writeln!(w, "statistic\tvalue")?;
    writeln!(w, "r_squared\t{}", fit.r_squared)?;
    writeln!(w, "adj_r_squared\t{}", fit.adj_r_squared)?;
    writeln!(w, "residual_se\t{}", fit.residual_se)?;
    writeln!(w, "f_statistic\t{}", fit.f_statistic)?;
    writeln!(w, "df_model\t{}", fit.df_model)?;
    writeln!(w, "df_resid\t{}", fit.df_resid)?;
    writeln!(w, "n\t{}", fit.n)?;
    writeln!(w, "dropped\t{dropped}")?;
    w.flush()
}

pub fn write_marginal_effects<W: Write>(effects: &[MarginalEffect], mut w: W) -> std::io::Result<()> {
    writeln!(w, "moderator\teffect\tstd_error")?;
    for e in effects {
        writeln!(w, "{}\t{}\t{}", e.moderator, e.effect, e.std_error)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|k| format!("x{k}")).collect()
    }

    #[test]
    fn formula_orders_columns() {
        let s = ModelSpec::parse("y", "a:b + b^2 + a + b + a^2").unwrap();
        assert_eq!(s.column_names(), ["(Intercept)", "a", "b", "b^2", "a^2", "a:b"]);
        assert_eq!(s.n_columns(), 6);
        assert!(!ModelSpec::parse("y", "a + b - 1").unwrap().intercept);
        assert!(!ModelSpec::parse("y", "0 + a").unwrap().intercept);
        assert!(ModelSpec::parse("y", "a + a").is_err());
        assert!(ModelSpec::parse("y", "a:b + b:a").is_err());
        assert!(ModelSpec::parse("y", "a + ").is_err());
        assert!(ModelSpec::parse("y", "a:a").is_err());
    }

    #[test]
    fn exact_line() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(5, |i, _| 2.0 * i as f64 + 1.0);
        let f = ols(&x, &y, &names(2), true, Covariance::Classical).unwrap();
        assert!((f.coefficients[0] - 1.0).abs() < 1e-12 && (f.coefficients[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
        assert!(f.residual_se < 1e-12);
    }

    #[test]
    fn constant_outcome() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { (i * i) as f64 });
        let y = DVector::from_element(6, 3.0);
        let f = ols(&x, &y, &names(2), true, Covariance::Classical).unwrap();
        assert!(f.coefficients[1].abs() < 1e-12);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn dependent_column_is_named() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 1.0,
        });
        let y = DVector::from_fn(6, |i, _| i as f64);
        match ols(&x, &y, &names(3), true, Covariance::Classical) {
            Err(Error::RankDeficient(c)) => assert_eq!(c, "x2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(2, 2, 1.0);
        let y = DVector::from_element(2, 1.0);
        assert!(matches!(
            ols(&x, &y, &names(2), true, Covariance::Classical),
            Err(Error::InsufficientObservations { n: 2, p: 2 })
        ));
    }

    #[test]
    fn design_drops_incomplete_rows_and_multiplies_parents() {
        let t = CovariateTable::new(
            (0..6).map(|i| format!("u{i}")).collect(),
            vec!["y".into(), "a".into(), "b".into()],
            vec![
                Some(1.0), Some(2.0), Some(3.0),
                Some(2.0), None, Some(1.0),
                Some(0.0), Some(-1.0), Some(4.0),
                Some(5.0), Some(0.5), Some(2.0),
                Some(3.0), Some(3.0), Some(-2.0),
                Some(1.5), Some(0.0), Some(7.0),
            ],
        )
        .unwrap();
        let s = ModelSpec::parse("y", "a + b + a:b").unwrap();
        let d = design_matrix(&t, &s).unwrap();
        assert_eq!(d.dropped, 1);
        assert_eq!(d.rows, vec![0, 2, 3, 4, 5]);
        for r in 0..d.x.nrows() {
            assert_eq!(d.x[(r, 3)], d.x[(r, 1)] * d.x[(r, 2)]);
        }
        assert!(matches!(design_matrix(&t, &ModelSpec::parse("y", "zz").unwrap()), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn marginal_effect_is_linear() {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(1, 1)] = 0.04;
        cov[(2, 2)] = 0.09;
        cov[(1, 2)] = -0.01;
        cov[(2, 1)] = -0.01;
        let fit = OlsFit {
            names: vec!["(Intercept)".into(), "T".into(), "T:R".into()],
            coefficients: vec![0.0, 0.674, -0.683],
            std_errors: vec![0.0; 3],
            t_values: vec![0.0; 3],
            covariance: cov,
            r_squared: 0.0,
            adj_r_squared: 0.0,
            residual_se: 0.0,
            f_statistic: 0.0,
            df_model: 2,
            df_resid: 10,
            n: 13,
            intercept: true,
            fitted: vec![],
            residuals: vec![],
        };
        let e = marginal_effect(&fit, "T", "R", &[0.0, 1.0]).unwrap();
        assert_eq!(e[0].effect, 0.674);
        assert!((e[1].effect + 0.009).abs() < 1e-12);
        assert!((e[1].std_error - (0.04f64 + 0.09 - 0.02).sqrt()).abs() < 1e-15);
        assert!(marginal_effect(&fit, "R", "T", &[0.0]).is_err());
    }
}

//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in a
//! fixed order with their own wall-clock budgets. Exits non-zero if any fail.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use greenwash::aggregate::{classification_shares, weighted_group_scores};
use greenwash::filter::{keyword_count_table, screen, FilterOutcome, LexiconSet};
use greenwash::ingest::{AdRecord, ImpressionCell, ImpressionKind};
use greenwash::irt::{self, classify, Classification, ScoreSummary, Stage};
use greenwash::network::{build_links, high_score_threshold, EmbeddingStore, LinkConfig};
use greenwash::simulate::{self, pearson, SimConfig};
use greenwash::stats::{self, Covariance, OlsFit};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (m, p, c) = common::random_instance(seed, 50, 10);
        let x = p.to_vec();
        let analytic = irt::grad_log_posterior(&p, &m, &c).map_err(|e| e.to_string())?;
        let fd = common::finite_difference(|v| irt::log_posterior(&p.with_vec(v).unwrap(), &m, &c).unwrap(), &x);
        worst = worst.max(common::max_rel_error(&analytic, &fd));
    }
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 20 instances (< 1e-5)"))
}

fn likelihood_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut with_missing = 0;
    for seed in 0..20 {
        let (m, p, c) = common::random_instance(1000 + seed, 50, 10);
        with_missing += usize::from(m.n_missing() > 0);
        let lib = irt::log_posterior(&p, &m, &c).map_err(|e| e.to_string())?;
        let naive = common::naive_log_posterior(&p, &m, &c);
        worst = worst.max((lib - naive).abs() / naive.abs().max(1.0));
    }
    check(
        worst <= 1e-12 && with_missing > 0,
        format!("max relative difference {worst:.2e} (<= 1e-12); {with_missing}/20 fixtures have missing cells"),
    )
}

fn parameter_recovery() -> Outcome {
    let config = SimConfig::default();
    let (mut covered, mut total) = (0.0, 0.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let data = simulate::generate(&config, seed).map_err(|e| e.to_string())?;
        let mut irt_config = config.irt_config();
        irt_config.seed = seed;
        let post = irt::fit_laplace(&data.matrix, &irt_config).map_err(|e| e.to_string())?;
        let r = simulate::recovery_report(&data.truth, &post).map_err(|e| e.to_string())?;
        ok &= r.theta_correlation >= 0.9 && r.sign_agreement >= 0.9;
        covered += r.coverage * r.n_ads as f64;
        total += r.n_ads as f64;
        lines.push(format!("{:.3}/{:.2}/{:.3}", r.theta_correlation, r.sign_agreement, r.coverage));
    }
    let coverage = covered / total;
    ok &= (0.85..=0.95).contains(&coverage);
    check(
        ok,
        format!(
            "N=2000 J=15, per seed corr/sign/coverage [{}]; pooled coverage {coverage:.4} in [0.85, 0.95]",
            lines.join(" ")
        ),
    )
}

fn anchor_behavior() -> Outcome {
    let config = SimConfig {
        n_ads: 500,
        ..SimConfig::default()
    };
    let mut good = 0;
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..20u64 {
        let data = simulate::generate(&config, 100 + seed).map_err(|e| e.to_string())?;
        let post = irt::fit_laplace(&data.matrix, &config.irt_config()).map_err(|e| e.to_string())?;
        let lam = |key: &str| post.item_summary(key, Stage::Outcome).map(|s| s.discrimination.mean).unwrap_or(f64::NAN);
        let (pos, neg) = (lam(&config.positive_anchor), lam(&config.negative_anchor));
        worst = (worst.0.min(pos), worst.1.max(neg));
        let sign = pearson(&post.score_means(), &data.truth.theta) > 0.0;
        good += usize::from(pos > 0.9 && neg < -0.9 && sign);
    }
    check(
        good == 20,
        format!("{good}/20 seeds; min λ̂+ {:.4}, max λ̂- {:.4}", worst.0, worst.1),
    )
}

fn missingness_informative() -> Outcome {
    let key = "llm_mistral";
    let config = SimConfig {
        missing_discrimination_overrides: [(key.to_string(), -0.6)].into(),
        ..SimConfig::default()
    };
    let mut rows = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let data = simulate::generate(&config, seed).map_err(|e| e.to_string())?;
        let post = irt::fit_laplace(&data.matrix, &config.irt_config()).map_err(|e| e.to_string())?;
        let s = post
            .item_summary(key, Stage::Missingness)
            .ok_or("missingness stage absent")?
            .discrimination;
        ok &= s.mean < 0.0 && s.q95 < 0.0;
        rows.push(format!("{:.3} [{:.3}, {:.3}]", s.mean, s.q05, s.q95));
    }
    check(ok, format!("true λᵐ = -0.6, fitted per seed: {}", rows.join("; ")))
}

fn mcmc_cross_check() -> Outcome {
    let config = SimConfig {
        n_ads: 100,
        ..SimConfig::default()
    };
    let data = simulate::generate(&config, 0).map_err(|e| e.to_string())?;
    let mut irt_config = config.irt_config();
    irt_config.keep_theta_draws = true;
    let lap = irt::fit_laplace(&data.matrix, &irt_config).map_err(|e| e.to_string())?;
    let mc = irt::mcmc_validate(&data.matrix, &irt_config).map_err(|e| e.to_string())?;
    let draws = mc.theta_draws.as_ref().ok_or("no MCMC draws kept")?;
    let mut close = 0;
    for (i, (a, b)) in lap.scores.iter().zip(&mc.scores).enumerate() {
        let d = &draws[i];
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        close += usize::from((a.mean - b.mean).abs() < 0.2 * sd);
    }
    let share = close as f64 / lap.scores.len() as f64;
    check(
        share >= 0.9,
        format!("{close}/{} ads within 0.2 posterior sd (>= 90%)", lap.scores.len()),
    )
}

fn classification_rule() -> Outcome {
    let s = |mean, q05, q95| ScoreSummary { mean, q05, q95 };
    let table = [
        (s(7.05, 3.06, 10.9), Classification::Greenwashing),
        (s(0.5, 0.01, 1.0), Classification::Greenwashing),
        (s(-2.0, -3.0, -0.5), Classification::NonGreenwashing),
        (s(0.1, -1.0, 1.0), Classification::Unclassified),
        (s(-0.1, -1.0, 0.2), Classification::Unclassified),
        (s(0.5, 0.0, 1.0), Classification::Unclassified),
        (s(-0.5, -1.0, 0.0), Classification::Unclassified),
        (s(0.0, 0.0, 0.0), Classification::Unclassified),
    ];
    let bad: Vec<String> = table
        .iter()
        .filter(|(x, want)| classify(x) != *want)
        .map(|(x, want)| format!("{x:?} -> {:?}, want {want:?}", classify(x)))
        .collect();
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("(7.05, 3.06, 10.9) -> GREENWASHING; {} rule rows agree", table.len())
        } else {
            bad.join("; ")
        },
    )
}

fn network_oracle() -> Outcome {
    // exhaustive enumeration on random 50-ad fixtures
    let mut fixtures = 0;
    for seed in 0..20u64 {
        let mut r = common::rng(seed);
        let n = 50;
        let dim = 4;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let bases: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| normal.sample(&mut r)).collect()).collect();
        let mut ads = Vec::new();
        let mut store = EmbeddingStore::new(dim);
        let mut scores = HashMap::new();
        for i in 0..n {
            let id = format!("ad{i:02}");
            let page = format!("p{}", r.random_range(0..8));
            let base = &bases[r.random_range(0..3)];
            let v: Vec<f64> = base.iter().map(|b| b + 0.3 * normal.sample(&mut r)).collect();
            store.insert(id.clone(), v).map_err(|e| e.to_string())?;
            scores.insert(id.clone(), normal.sample(&mut r) + if r.random_bool(0.4) { 1.5 } else { 0.0 });
            ads.push(AdRecord::new(id, page, ""));
        }
        let config = LinkConfig {
            min_pairs: r.random_range(1..4),
            min_cos: r.random_range(0.5..0.95),
            ..LinkConfig::default()
        };
        let graph = build_links(&ads, &store, &scores, None, &config).map_err(|e| e.to_string())?;

        let all: Vec<f64> = ads.iter().map(|a| scores[&a.ad_id]).collect();
        let t = high_score_threshold(&all).map_err(|e| e.to_string())?;
        let mut want: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
        for a in 0..n {
            for b in a + 1..n {
                let (x, y) = (&ads[a], &ads[b]);
                if x.page_id == y.page_id || scores[&x.ad_id] < t || scores[&y.ad_id] < t {
                    continue;
                }
                let c = common::naive_cosine(store.get(&x.ad_id).unwrap(), store.get(&y.ad_id).unwrap());
                if c >= config.min_cos {
                    let key = if x.page_id < y.page_id {
                        (x.page_id.clone(), y.page_id.clone())
                    } else {
                        (y.page_id.clone(), x.page_id.clone())
                    };
                    let e = want.entry(key).or_default();
                    e.0 += 1;
                    e.1 += c;
                }
            }
        }
        want.retain(|_, (count, _)| *count >= config.min_pairs);
        let got: BTreeMap<(String, String), (usize, f64)> = graph
            .edges
            .iter()
            .map(|e| ((e.page_a.clone(), e.page_b.clone()), (e.count, e.mean_cosine)))
            .collect();
        let same = want.len() == got.len()
            && want.iter().zip(&got).all(|((ka, (ca, sa)), (kb, (cb, mb)))| {
                ka == kb && ca == cb && (sa / *ca as f64 - mb).abs() < 1e-12
            });
        if !same {
            return Err(format!("seed {seed}: oracle {want:?} vs build_links {got:?}"));
        }
        fixtures += usize::from(!want.is_empty());
    }

    // planted networks at the generating thresholds, scored by true θ
    let mut planted_ok = 0;
    for seed in 0..5u64 {
        let data = simulate::generate(&SimConfig::default(), seed).map_err(|e| e.to_string())?;
        let scores: HashMap<String, f64> =
            data.truth.ads.iter().cloned().zip(data.truth.theta.iter().copied()).collect();
        let config = LinkConfig {
            min_pairs: 5,
            min_cos: 0.8,
            ..LinkConfig::default()
        };
        let graph = build_links(&data.ads, &data.embeddings, &scores, Some(&data.registry), &config)
            .map_err(|e| e.to_string())?;
        let got: BTreeSet<(String, String)> = graph.edges.iter().map(|e| (e.page_a.clone(), e.page_b.clone())).collect();
        let want: BTreeSet<(String, String)> = data.truth.planted_edges.iter().cloned().collect();
        if got != want {
            return Err(format!("planted seed {seed}: got {got:?}, planted {want:?}"));
        }
        planted_ok += 1;
    }
    Ok(format!(
        "20/20 random fixtures equal exhaustive enumeration ({fixtures} with edges); {planted_ok}/5 planted networks exact at min_pairs=5, min_cos=0.8"
    ))
}

fn ols_oracle() -> Outcome {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    let names: Vec<String> = ["(Intercept)", "a", "b"].iter().map(|s| s.to_string()).collect();
    for seed in 0..20u64 {
        let mut r = common::rng(seed);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![1.0, normal.sample(&mut r) * 3.0, normal.sample(&mut r) + 2.0])
            .collect();
        let y: Vec<f64> = rows.iter().map(|x| 0.5 + 1.5 * x[1] - 2.0 * x[2] + normal.sample(&mut r)).collect();
        let oracle = common::normal_equations(&rows, &y);
        let x = DMatrix::from_fn(20, 3, |i, k| rows[i][k]);
        let fit = stats::ols(&x, &DVector::from_vec(y), &names, true, Covariance::Classical).map_err(|e| e.to_string())?;
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }

    // exact fit
    let x = DMatrix::from_fn(20, 3, |i, k| match k {
        0 => 1.0,
        1 => i as f64,
        _ => ((i * i) % 7) as f64,
    });
    let y = DVector::from_fn(20, |i, _| 1.0 + 2.0 * x[(i, 1)] - 3.0 * x[(i, 2)]);
    let exact = stats::ols(&x, &y, &names, true, Covariance::Classical).map_err(|e| e.to_string())?;

    // interaction: y = b0 + b_var v + b_mod m + b_int v m
    let inter_names: Vec<String> = ["(Intercept)", "v", "m", "v:m"].iter().map(|s| s.to_string()).collect();
    let mut r = common::rng(7);
    let xi = DMatrix::from_fn(30, 4, |_, _| 0.0);
    let mut xi = xi;
    let mut yi = DVector::zeros(30);
    for i in 0..30 {
        let (v, m) = (normal.sample(&mut r), r.random_range(0.0..1.0));
        xi[(i, 0)] = 1.0;
        xi[(i, 1)] = v;
        xi[(i, 2)] = m;
        xi[(i, 3)] = v * m;
        yi[i] = 0.2 + 0.9 * v - 0.4 * m + 0.3 * v * m + 0.1 * normal.sample(&mut r);
    }
    let fit = stats::ols(&xi, &yi, &inter_names, true, Covariance::Classical).map_err(|e| e.to_string())?;
    let at_zero = stats::marginal_effect(&fit, "v", "m", &[0.0]).map_err(|e| e.to_string())?;
    let b_var = fit.coefficients[fit.coefficient("v").unwrap()];

    let reported = OlsFit {
        coefficients: vec![0.0, 0.674, 0.0, -0.683],
        ..fit.clone()
    };
    let me = stats::marginal_effect(&reported, "v", "m", &[0.0, 1.0]).map_err(|e| e.to_string())?;

    let ok = worst < 1e-10
        && (exact.r_squared - 1.0).abs() < 1e-12
        && at_zero[0].effect == b_var
        && (me[0].effect - 0.674).abs() < 1e-12
        && (me[1].effect + 0.009).abs() < 1e-12;
    check(
        ok,
        format!(
            "max |b - normal equations| {worst:.2e} (< 1e-10); exact-fit R² = {}; effect at m=0 equals b_var: {}; (0.674, -0.683) -> {:.3}, {:.3}",
            exact.r_squared,
            at_zero[0].effect == b_var,
            me[0].effect,
            me[1].effect
        ),
    )
}

fn filter_counts() -> Outcome {
    let corpus = [
        ("a01", "Natural gas keeps the lights on."),
        ("a02", "The icecap will melt within decades."),
        ("a03", "Icecaps flooding coastal towns is climate change."),
        ("a04", "Beautiful icecap photography."),
        ("a05", "Charcoal grills for summer."),
        ("a06", "Coal miners built this state; fossil fuels power it."),
        ("a07", "Vote for clean coal on election day."),
        ("a08", "Recycling and sustainable farming protect the environment."),
        ("a09", "Melting glaciers and floods everywhere."),
        ("a10", "Global warming and greenhouse gas emissions."),
        ("a11", "COAL-fired plants run all night."),
        ("a12", "The icecap melted and the river flooded."),
    ];
    let ads: Vec<AdRecord> = corpus.iter().map(|(id, text)| AdRecord::new(*id, "p", *text)).collect();
    let lex = LexiconSet::shipped();
    let counts = keyword_count_table(&ads, &lex);
    let got: BTreeMap<&str, usize> = counts.rows.iter().map(|(k, n)| (k.as_str(), *n)).collect();
    let want: BTreeMap<&str, usize> = [
        ("carbon_capture", 0),
        ("carbon_removal", 0),
        ("climate", 1),
        ("coal", 3),
        ("extinction", 0),
        ("fossil_fuel", 1),
        ("global_warming", 1),
        ("greenhouse", 1),
        ("icecap_melt_flood", 3),
        ("natural_gas", 1),
        ("recycle", 1),
        ("sustainable", 1),
    ]
    .into();
    let outcomes: Vec<&str> = ads.iter().map(|a| screen(a, &lex).as_str()).collect();
    let want_outcomes = [
        "kept",
        "kept",
        "kept",
        "not_climate",
        "not_climate",
        "kept",
        "electoral",
        "kept",
        "not_climate",
        "kept",
        "kept",
        "kept",
    ];
    let charcoal = lex.keyword_vector(&ads[4]).bits.get("coal") == Some(&false);
    let kept = outcomes.iter().filter(|o| **o == FilterOutcome::Kept.as_str()).count();
    let again = keyword_count_table(&ads, &lex);
    let ok = got == want && counts.any_keywords == 9 && outcomes == want_outcomes && charcoal && again == counts;
    check(
        ok,
        format!(
            "12-ad fixture: counts {} hand table, any_keyword {} (want 9), {kept} kept, icecap conjunction 3, charcoal excluded from coal: {charcoal}",
            if got == want { "match" } else { "differ from" },
            counts.any_keywords
        ),
    )
}

fn random_ads(r: &mut impl Rng, n: usize, groups: &[&str]) -> (Vec<AdRecord>, HashMap<String, f64>) {
    let mut ads = Vec::with_capacity(n);
    let mut scores = HashMap::new();
    for i in 0..n {
        let id = format!("ad{i:03}");
        let mut a = AdRecord::new(id.clone(), "p", "");
        a.impression_kind = ImpressionKind::Count;
        let mut cells = Vec::new();
        for g in groups {
            if r.random_bool(0.7) {
                let value = if r.random_bool(0.1) { 0.0 } else { r.random_range(1.0..1e4) };
                cells.push(ImpressionCell {
                    group_key: g.to_string(),
                    value,
                });
            }
        }
        a.impressions.insert("country".into(), cells);
        scores.insert(id, r.random_range(-5.0..5.0));
        ads.push(a);
    }
    (ads, scores)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn aggregation_identities() -> Outcome {
    let groups = ["A", "B", "C", "D"];
    for seed in 0..100u64 {
        let mut r = common::rng(seed);
        let n = r.random_range(3..30);
        let (ads, scores) = random_ads(&mut r, n, &groups);
        let base = weighted_group_scores(&scores, &ads, "country").map_err(|e| e.to_string())?;

        let c: f64 = r.random_range(-3.0..3.0);
        let scaled: HashMap<String, f64> = scores.iter().map(|(k, v)| (k.clone(), v * c)).collect();
        let s = weighted_group_scores(&scaled, &ads, "country").map_err(|e| e.to_string())?;
        if !base.iter().zip(&s).all(|(a, b)| close(a.weighted_mean * c, b.weighted_mean)) {
            return Err(format!("seed {seed}: scale equivariance fails for c = {c}"));
        }

        let target = groups[r.random_range(0..groups.len())];
        let k: f64 = r.random_range(0.01..100.0);
        let mut reweighted = ads.clone();
        for a in &mut reweighted {
            for cell in a.impressions.get_mut("country").unwrap() {
                if cell.group_key == target {
                    cell.value *= k;
                }
            }
        }
        let w = weighted_group_scores(&scores, &reweighted, "country").map_err(|e| e.to_string())?;
        if !base.iter().zip(&w).all(|(a, b)| a.group_key == b.group_key && close(a.weighted_mean, b.weighted_mean)) {
            return Err(format!("seed {seed}: weight invariance fails in group {target}"));
        }

        let mut merged = ads.clone();
        for a in &mut merged {
            for cell in a.impressions.get_mut("country").unwrap() {
                if cell.group_key == "A" || cell.group_key == "B" {
                    cell.group_key = "AB".into();
                }
            }
        }
        let m = weighted_group_scores(&scores, &merged, "country").map_err(|e| e.to_string())?;
        let parts: Vec<_> = base.iter().filter(|g| g.group_key == "A" || g.group_key == "B").collect();
        if !parts.is_empty() {
            let wsum: f64 = parts.iter().map(|g| g.total_weight).sum();
            let mean = parts.iter().map(|g| g.weighted_mean * g.total_weight).sum::<f64>() / wsum;
            let ab = m.iter().find(|g| g.group_key == "AB").ok_or("merged group missing")?;
            if !close(ab.weighted_mean, mean) || !close(ab.total_weight, wsum) {
                return Err(format!("seed {seed}: partition consistency {} vs {mean}", ab.weighted_mean));
            }
        }

        let classes: HashMap<String, Classification> = scores
            .iter()
            .map(|(k, v)| (k.clone(), Classification::ALL[(v.abs() as usize) % 3]))
            .collect();
        let shares = classification_shares(&classes, &ads, "country").map_err(|e| e.to_string())?;
        if shares.iter().any(|g| (g.greenwashing + g.non_greenwashing + g.unclassified - 1.0).abs() > 1e-9) {
            return Err(format!("seed {seed}: class shares do not sum to 1"));
        }
    }
    Ok("scale equivariance, weight invariance, partition consistency and share sums hold on 100 seeds".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let code = greenwash::cli::run(std::iter::once("greenwash").chain(args.iter().copied()));
    if code == 0 {
        Ok(())
    } else {
        Err(format!("greenwash {} exited {code}", args.join(" ")))
    }
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// A manifest without the fields that name the output directory or the
/// clock: timestamps, the command line and input paths (digests stay).
fn stable_manifest(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let o = v.as_object_mut().unwrap();
    for k in ["started", "finished", "args", "threads"] {
        o.remove(k);
    }
    for input in o["inputs"].as_array_mut().unwrap() {
        input.as_object_mut().unwrap().remove("path");
    }
    v
}

fn score_column(path: &Path) -> Vec<f64> {
    irt::read_scores_path(path).unwrap().iter().map(|r| r.summary.mean).collect()
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sim = tmp.path().join("sim");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&["--seed", "7", "simulate", "--n-ads", "600", "--out", &s(&sim)])?;
    let runs = [("one", "4"), ("two", "4"), ("single", "1")];
    for (name, threads) in runs {
        let out = tmp.path().join(name);
        run_cli(&["--seed", "7", "--threads", threads, "pipeline", "--input", &s(&sim), "--out", &s(&out)])?;
    }
    let a = files_under(&tmp.path().join("one"));
    let b = files_under(&tmp.path().join("two"));
    if a.keys().ne(b.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let mut differing = Vec::new();
    for (k, va) in &a {
        let vb = &b[k];
        let same = if k.ends_with("manifest.json") {
            stable_manifest(va) == stable_manifest(vb)
        } else {
            va == vb
        };
        if !same {
            differing.push(k.clone());
        }
    }
    let fit = |run: &str| score_column(&tmp.path().join(run).join("fit").join(irt::SCORES_FILE));
    let (many, one) = (fit("one"), fit("single"));
    let dev = many.iter().zip(&one).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ok = differing.is_empty() && many.len() == one.len() && !many.is_empty() && dev <= 1e-8;
    check(
        ok,
        format!(
            "{} files compared, {} differ {:?} (manifests compared without timestamps, args and input paths); 4 vs 1 threads max |Δscore| {dev:.1e} over {} ads",
            a.len(),
            differing.len(),
            differing,
            many.len()
        ),
    )
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    // the test harness passes flags such as --nocapture; none apply here
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { name: "irt gradient check", budget: Some(secs(10)), run: gradient_check },
        Criterion { name: "likelihood oracle", budget: Some(secs(1)), run: likelihood_oracle },
        Criterion { name: "parameter recovery", budget: Some(secs(300)), run: parameter_recovery },
        Criterion { name: "anchor behavior", budget: None, run: anchor_behavior },
        Criterion { name: "missingness informativeness", budget: Some(secs(120)), run: missingness_informative },
        Criterion { name: "mcmc cross-check", budget: Some(secs(180)), run: mcmc_cross_check },
        Criterion { name: "classification rule", budget: None, run: classification_rule },
        Criterion { name: "network oracle", budget: Some(secs(10)), run: network_oracle },
        Criterion { name: "ols oracle", budget: Some(secs(1)), run: ols_oracle },
        Criterion { name: "filter determinism and counts", budget: Some(secs(1)), run: filter_counts },
        Criterion { name: "aggregation identities", budget: Some(secs(5)), run: aggregation_identities },
        Criterion { name: "end-to-end determinism", budget: None, run: end_to_end_determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over budget {:?}", c.budget.unwrap())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        failed += usize::from(status == "FAIL");
        let budget = c.budget.map(|b| format!(" / {}s", b.as_secs())).unwrap_or_default();
        println!("{status} [{}] ({:.2}s{budget}) {detail}", c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

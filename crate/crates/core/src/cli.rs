//! Command-line entry point.
//!
//! Every subcommand writes into its `--out` directory only, starting with a
//! `manifest.json`. All randomness comes from `--seed` through per-stage
//! child seeds. `--config` takes one TOML file whose sections (`[irt]`,
//! `[network]`, `[annotate]`, `[simulate]`, `[schema]`) override defaults;
//! command-line flags override the file. Environment variables are ignored.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::aggregate;
use crate::annotate::{self, AnnotateOptions, AnnotationColumn, OfflineClient, ReplayCache};
use crate::error::{Error, Result};
use crate::filter::{self, FilterOutcome, LexiconConfig, LexiconSet};
use crate::ingest::{self, AdRecord, AdSchema, EntityRegistry};
use crate::irt::{self, Estimator, IrtConfig};
use crate::manifest::RunManifest;
use crate::matrix::{IndicatorMatrix, ItemSource};
use crate::network::{self, EmbeddingStore, LinkConfig, PairRule, ThresholdScope};
use crate::simulate::{self, SimConfig};
use crate::stats::{self, Covariance, ModelSpec};

/// Settings file layout; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub irt: IrtConfig,
    pub network: LinkConfig,
    pub annotate: AnnotateOptions,
    pub simulate: SimConfig,
    pub schema: AdSchema,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.irt.validate()?;
        c.simulate.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Parser)]
#[command(name = "greenwash", version, about = "Score political ads for greenwashing and map the pages behind them")]
pub struct Cli {
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep climate-relevant, non-electoral ads and code their keyword bits.
    Filter(FilterArgs),
    /// Add annotator columns (replayed replies, stance files) and build the matrix.
    Annotate(AnnotateArgs),
    /// Fit the ideal-point model to an indicator matrix.
    Fit(FitArgs),
    /// Impression-weighted group scores from a fit.
    Score(ScoreArgs),
    /// Page similarity network of high-scoring ads.
    Network(NetworkArgs),
    /// OLS with squares and interactions.
    Regress(RegressArgs),
    /// Write a synthetic corpus with known truth.
    Simulate(SimulateArgs),
    /// Compare a fit against simulation truth.
    Recovery(RecoveryArgs),
    /// filter → annotate → fit → score → network in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub ads: PathBuf,
    /// Lexicon TOML (default: the shipped lexicon).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Ads to code, normally the filter's `kept.jsonl`.
    #[arg(long)]
    pub ads: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Replay cache of raw annotator replies (line-delimited JSON).
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Annotator item keys to code from the replay cache (default: all in it).
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    /// Precomputed column files (e.g. a stance model), repeatable.
    #[arg(long = "column")]
    pub columns: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Point fit plus posterior draws (default).
    Map,
    /// Random-walk Metropolis; validation on small instances only.
    Mcmc,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "map")]
    pub method: Method,
    #[arg(long)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory holding `scores.tsv`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub ads: PathBuf,
    /// Breakdown dimensions, e.g. country, region, age (repeatable).
    #[arg(long, required = true, value_delimiter = ',')]
    pub by: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub min_pairs: Option<usize>,
    #[arg(long)]
    pub min_cos: Option<f64>,
    #[arg(long)]
    pub pair_rule: Option<PairRule>,
    #[arg(long)]
    pub threshold_scope: Option<ThresholdScope>,
}

impl LinkArgs {
    fn apply(&self, mut c: LinkConfig) -> LinkConfig {
        if let Some(v) = self.min_pairs {
            c.min_pairs = v;
        }
        if let Some(v) = self.min_cos {
            c.min_cos = v;
        }
        if let Some(v) = self.pair_rule {
            c.pair_rule = v;
        }
        if let Some(v) = self.threshold_scope {
            c.threshold_scope = v;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub ads: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[command(flatten)]
    pub link: LinkArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Delimited covariate table; the first column holds unit ids.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    /// Formula such as `a + b + a^2 + a:b`.
    #[arg(long)]
    pub terms: String,
    /// Marginal effect of `var` over `moderator`, written `var:moderator`.
    #[arg(long)]
    pub interaction: Option<String>,
    /// Moderator values for the marginal effect.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    pub grid: Vec<f64>,
    #[arg(long, default_value = "classical")]
    pub covariance: Covariance,
    /// Field delimiter (default: tab for .tsv, comma otherwise).
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n_ads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoveryArgs {
    /// Simulation output directory (truth files).
    #[arg(long)]
    pub truth: PathBuf,
    /// Fit directory.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// A `simulate` output directory; supplies every input not given below,
    /// and its `config.toml` when `--config` is absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub ads: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long = "column")]
    pub columns: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = ["country".to_string(), "age".to_string()])]
    pub by: Vec<String>,
    #[command(flatten)]
    pub link: LinkArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// File names written by the subcommands.
pub mod outputs {
    pub const KEPT: &str = "kept.jsonl";
    pub const SCREEN: &str = "screen.tsv";
    pub const KEYWORDS: &str = "keywords.tsv";
    pub const KEYWORD_COUNTS: &str = "keyword_counts.tsv";
    pub const MATRIX: &str = "matrix.tsv";
    pub const ANNOTATION_STATS: &str = "annotation_stats.tsv";
    pub const GROUP_SCORES: &str = "group_scores.tsv";
    pub const CLASS_SHARES: &str = "class_shares.tsv";
    pub const GRAPH: &str = "graph.dot";
    pub const EDGES: &str = "edges.tsv";
    pub const SEED_GRAPH: &str = "seed_graph.dot";
    pub const SEED_EDGES: &str = "seed_edges.tsv";
    pub const DIFFERENCES: &str = "score_differences.tsv";
    pub const OLS: &str = "ols.tsv";
    pub const MARGINAL_EFFECTS: &str = "marginal_effects.tsv";
    pub const RECOVERY: &str = "recovery.tsv";

    pub fn column(key: &str) -> String {
        format!("column_{key}.tsv")
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 failed run, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(&cli);
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            1
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli, args: Vec<String>) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads,
        args,
        config,
        config_path: cli.config.clone(),
    };
    pool.install(|| match &cli.command {
        Command::Filter(a) => ctx.filter(a.ads.as_path(), a.lexicon.as_deref(), &a.out, "filter").map(|_| ()),
        Command::Annotate(a) => ctx
            .annotate(&a.ads, a.lexicon.as_deref(), a.replay.as_deref(), &a.items, &a.columns, &a.out, "annotate")
            .map(|_| ()),
        Command::Fit(a) => ctx.fit(a, &a.matrix, &a.out, "fit"),
        Command::Score(a) => ctx.score(&a.fit, &a.ads, &a.by, &a.out, "score"),
        Command::Network(a) => ctx.network(&a.ads, &a.embeddings, &a.fit, &a.registry, &a.link, &a.out, "network"),
        Command::Regress(a) => ctx.regress(a),
        Command::Simulate(a) => ctx.simulate(a),
        Command::Recovery(a) => ctx.recovery(a),
        Command::Pipeline(a) => ctx.pipeline(a),
    })
}

#[derive(Clone)]
struct Ctx {
    seed: u64,
    threads: Option<usize>,
    args: Vec<String>,
    config: RunConfig,
    config_path: Option<PathBuf>,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_ads(path: &Path, schema: &AdSchema) -> Result<Vec<AdRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = ingest::parse_ads(std::io::BufReader::new(f), schema)?;
    for e in &parsed.errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    Ok(parsed.records)
}

fn read_lexicon(path: Option<&Path>) -> Result<(LexiconSet, Option<PathBuf>)> {
    match path {
        Some(p) => Ok((filter::compile_lexicon(&LexiconConfig::read(p)?)?, Some(p.to_path_buf()))),
        None => Ok((LexiconSet::shipped(), None)),
    }
}

fn read_registry(path: &Path) -> Result<EntityRegistry> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest::parse_registry(f)
}

fn score_map(fit_dir: &Path) -> Result<Vec<irt::ScoreRow>> {
    irt::read_scores_path(&fit_dir.join(irt::SCORES_FILE))
}

impl Ctx {
    fn manifest(&self, subcommand: &str, settings: serde_json::Value, out: &Path, inputs: &[&Path]) -> Result<RunManifest> {
        let mut m = RunManifest::new(subcommand, self.seed, self.threads, settings, self.args.clone());
        if let Some(p) = &self.config_path {
            m.add_input(p)?;
        }
        for p in inputs {
            m.add_input(p)?;
        }
        m.write(out)?;
        Ok(m)
    }

    fn json<T: Serialize>(value: &T) -> serde_json::Value {
        serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
    }

    fn filter(&self, ads_path: &Path, lexicon: Option<&Path>, out: &Path, name: &str) -> Result<PathBuf> {
        let (lex, lex_path) = read_lexicon(lexicon)?;
        let mut inputs = vec![ads_path];
        inputs.extend(lex_path.as_deref());
        let mut m = self.manifest(
            name,
            serde_json::json!({ "schema": Self::json(&self.config.schema), "lexicon": lex_path }),
            out,
            &inputs,
        )?;
        let ads = read_ads(ads_path, &self.config.schema)?;
        let outcomes: Vec<FilterOutcome> = {
            use rayon::prelude::*;
            ads.par_iter().map(|a| filter::screen(a, &lex)).collect()
        };
        write_with(&out.join(outputs::SCREEN), |w| {
            writeln!(w, "ad_id\toutcome")?;
            for (a, o) in ads.iter().zip(&outcomes) {
                writeln!(w, "{}\t{}", a.ad_id, o.as_str())?;
            }
            Ok(())
        })?;
        let kept: Vec<AdRecord> = ads
            .into_iter()
            .zip(&outcomes)
            .filter(|(_, o)| **o == FilterOutcome::Kept)
            .map(|(a, _)| a)
            .collect();
        let kept_path = out.join(outputs::KEPT);
        ingest::write_ads(create(&kept_path)?, &kept)?;
        let vectors: Vec<_> = kept.iter().map(|a| lex.keyword_vector(a)).collect();
        let keys = lex.item_keys();
        write_with(&out.join(outputs::KEYWORDS), |w| {
            writeln!(w, "ad_id\t{}", keys.join("\t"))?;
            for v in &vectors {
                let bits: Vec<&str> = keys.iter().map(|k| if v.bits.get(k) == Some(&true) { "1" } else { "0" }).collect();
                writeln!(w, "{}\t{}", v.ad_id, bits.join("\t"))?;
            }
            Ok(())
        })?;
        let counts = filter::count_vectors(keys, &vectors);
        write_with(&out.join(outputs::KEYWORD_COUNTS), |w| {
            writeln!(w, "key\tads")?;
            for (k, n) in &counts.rows {
                writeln!(w, "{k}\t{n}")?;
            }
            writeln!(w, "any_keyword\t{}", counts.any_keywords)
        })?;
        log::info!("filter: kept {} ads", kept.len());
        m.finish(out)?;
        Ok(kept_path)
    }

    #[allow(clippy::too_many_arguments)]
    fn annotate(
        &self,
        ads_path: &Path,
        lexicon: Option<&Path>,
        replay: Option<&Path>,
        items: &[String],
        columns: &[PathBuf],
        out: &Path,
        name: &str,
    ) -> Result<PathBuf> {
        let (lex, lex_path) = read_lexicon(lexicon)?;
        let mut inputs: Vec<&Path> = vec![ads_path];
        inputs.extend(lex_path.as_deref());
        inputs.extend(replay);
        inputs.extend(columns.iter().map(PathBuf::as_path));
        let mut m = self.manifest(
            name,
            serde_json::json!({ "annotate": Self::json(&self.config.annotate), "items": items }),
            out,
            &inputs,
        )?;
        let ads = read_ads(ads_path, &self.config.schema)?;
        let vectors: Vec<_> = ads.iter().map(|a| lex.keyword_vector(a)).collect();
        let cache = match replay {
            Some(p) => ReplayCache::load(p)?,
            None => ReplayCache::in_memory(),
        };
        let keys: Vec<String> = if items.is_empty() { cache.item_keys() } else { items.to_vec() };
        let seed = m.stage_seed("annotate");
        let mut cols = Vec::new();
        let mut stats_rows = Vec::new();
        for key in &keys {
            let outcome = annotate::annotate_corpus(&ads, &OfflineClient, &cache, key, seed, &self.config.annotate)?;
            stats_rows.push((key.clone(), outcome.stats));
            cols.push(outcome.column);
        }
        for p in columns {
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            let default_key = p.file_stem().and_then(|s| s.to_str()).unwrap_or("column");
            let default_key = default_key.strip_prefix("column_").unwrap_or(default_key);
            cols.push(AnnotationColumn::read(std::io::BufReader::new(f), default_key, ItemSource::Stance)?);
        }
        let seen: BTreeSet<&str> = cols.iter().map(|c| c.item_key.as_str()).collect();
        if seen.len() != cols.len() {
            return Err(Error::Config("the same annotator item was supplied twice".into()));
        }
        let matrix = annotate::assemble_matrix(&vectors, &cols)?;
        for c in &cols {
            let path = out.join(outputs::column(&c.item_key));
            let mut w = create(&path)?;
            c.write(&mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        write_with(&out.join(outputs::ANNOTATION_STATS), |w| {
            writeln!(w, "item_key\tcache_hits\tclient_calls\ttransport_missing\tparse_missing")?;
            for (k, s) in &stats_rows {
                writeln!(w, "{k}\t{}\t{}\t{}\t{}", s.cache_hits, s.client_calls, s.transport_missing, s.parse_missing)?;
            }
            Ok(())
        })?;
        let matrix_path = out.join(outputs::MATRIX);
        let mut w = create(&matrix_path)?;
        matrix.write(&mut w)?;
        w.flush().map_err(|e| Error::io(&matrix_path, e))?;
        m.finish(out)?;
        Ok(matrix_path)
    }

    fn irt_config(&self, estimator: Option<Estimator>, draws: Option<usize>) -> Result<IrtConfig> {
        let mut c = self.config.irt.clone();
        if let Some(e) = estimator {
            c.estimator = e;
        }
        if let Some(d) = draws {
            c.draws = d;
        }
        c.seed = crate::seed::stage_seed(self.seed, "fit");
        c.validate()?;
        Ok(c)
    }

    fn fit_matrix(&self, method: Method, config: &IrtConfig, matrix_path: &Path, out: &Path, name: &str) -> Result<()> {
        let mut m = self.manifest(
            name,
            serde_json::json!({ "irt": Self::json(config), "method": format!("{method:?}").to_lowercase() }),
            out,
            &[matrix_path],
        )?;
        let matrix = IndicatorMatrix::read_path(matrix_path)?;
        let posterior = match method {
            Method::Map => irt::fit_laplace(&matrix, config)?,
            Method::Mcmc => irt::mcmc_validate(&matrix, config)?,
        };
        irt::write_fit_dir(&posterior, out)?;
        m.finish(out)
    }

    fn fit(&self, a: &FitArgs, matrix: &Path, out: &Path, name: &str) -> Result<()> {
        let config = self.irt_config(a.estimator, a.draws)?;
        self.fit_matrix(a.method, &config, matrix, out, name)
    }

    fn score(&self, fit: &Path, ads_path: &Path, by: &[String], out: &Path, name: &str) -> Result<()> {
        let scores_path = fit.join(irt::SCORES_FILE);
        let mut m = self.manifest(name, serde_json::json!({ "by": by }), out, &[scores_path.as_path(), ads_path])?;
        let rows = score_map(fit)?;
        let ads = read_ads(ads_path, &self.config.schema)?;
        let means: HashMap<String, f64> = rows.iter().map(|r| (r.ad_id.clone(), r.summary.mean)).collect();
        let classes: HashMap<String, irt::Classification> = rows.iter().map(|r| (r.ad_id.clone(), r.classification)).collect();
        // only scored ads enter the aggregation
        let scored: Vec<AdRecord> = ads.into_iter().filter(|a| means.contains_key(&a.ad_id)).collect();
        let mut groups = Vec::new();
        let mut shares = Vec::new();
        for dim in by {
            groups.push((dim, aggregate::weighted_group_scores(&means, &scored, dim)?));
            shares.push((dim, aggregate::classification_shares(&classes, &scored, dim)?));
        }
        write_with(&out.join(outputs::GROUP_SCORES), |w| {
            writeln!(w, "dimension\tgroup_key\tweighted_mean\ttotal_weight\tn_ads")?;
            for (dim, gs) in &groups {
                for g in gs {
                    writeln!(w, "{dim}\t{}\t{}\t{}\t{}", g.group_key, g.weighted_mean, g.total_weight, g.n_ads)?;
                }
            }
            Ok(())
        })?;
        write_with(&out.join(outputs::CLASS_SHARES), |w| {
            writeln!(w, "dimension\tgroup_key\tgreenwashing\tnon_greenwashing\tunclassified\ttotal_weight\tn_ads")?;
            for (dim, ss) in &shares {
                for g in ss {
                    writeln!(
                        w,
                        "{dim}\t{}\t{}\t{}\t{}\t{}\t{}",
                        g.group_key, g.greenwashing, g.non_greenwashing, g.unclassified, g.total_weight, g.n_ads
                    )?;
                }
            }
            Ok(())
        })?;
        m.finish(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn network(
        &self,
        ads_path: &Path,
        embeddings: &Path,
        fit: &Path,
        registry: &Path,
        link: &LinkArgs,
        out: &Path,
        name: &str,
    ) -> Result<()> {
        let config = link.apply(self.config.network.clone());
        if !(config.min_cos >= -1.0 && config.min_cos <= 1.0) || config.min_pairs == 0 {
            return Err(Error::Config("min_cos must lie in [-1, 1] and min_pairs be at least 1".into()));
        }
        let scores_path = fit.join(irt::SCORES_FILE);
        let mut m = self.manifest(
            name,
            serde_json::json!({ "network": Self::json(&config) }),
            out,
            &[ads_path, embeddings, scores_path.as_path(), registry],
        )?;
        let rows = score_map(fit)?;
        let scores: HashMap<String, f64> = rows.iter().map(|r| (r.ad_id.clone(), r.summary.mean)).collect();
        let ads: Vec<AdRecord> = read_ads(ads_path, &self.config.schema)?
            .into_iter()
            .filter(|a| scores.contains_key(&a.ad_id))
            .collect();
        let store = EmbeddingStore::read_path(embeddings)?;
        let reg = read_registry(registry)?;
        let graph = network::build_links(&ads, &store, &scores, Some(&reg), &config)?;
        let seeded = network::seed_filter(&graph, &reg);
        let diffs = network::score_differences(&seeded);
        write_with(&out.join(outputs::GRAPH), |w| graph.write_dot(w))?;
        write_with(&out.join(outputs::EDGES), |w| graph.write_edge_table(w))?;
        write_with(&out.join(outputs::SEED_GRAPH), |w| seeded.write_dot(w))?;
        write_with(&out.join(outputs::SEED_EDGES), |w| seeded.write_edge_table(w))?;
        write_with(&out.join(outputs::DIFFERENCES), |w| network::write_score_differences(&diffs, w))?;
        m.finish(out)
    }

    fn regress(&self, a: &RegressArgs) -> Result<()> {
        let spec = ModelSpec::parse(&a.outcome, &a.terms)?;
        let mut m = self.manifest(
            "regress",
            serde_json::json!({
                "spec": Self::json(&spec),
                "covariance": Self::json(&a.covariance),
                "interaction": a.interaction,
                "grid": a.grid,
            }),
            &a.out,
            &[a.data.as_path()],
        )?;
        let delimiter = match a.delimiter {
            Some(c) if c.is_ascii() => c as u8,
            Some(c) => return Err(Error::Config(format!("delimiter {c:?} must be a single ASCII character"))),
            None if a.data.extension().is_some_and(|e| e == "tsv") => b'\t',
            None => b',',
        };
        let f = std::fs::File::open(&a.data).map_err(|e| Error::io(&a.data, e))?;
        let table = ingest::parse_covariates(f, &[], delimiter)?;
        let (fit, design) = stats::fit_spec(&table, &spec, a.covariance)?;
        write_with(&a.out.join(outputs::OLS), |w| stats::write_ols(&fit, design.dropped, w))?;
        if let Some(inter) = &a.interaction {
            let (var, moderator) = inter
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("--interaction expects var:moderator, got {inter:?}")))?;
            let effects = stats::marginal_effect(&fit, var, moderator, &a.grid)?;
            write_with(&a.out.join(outputs::MARGINAL_EFFECTS), |w| stats::write_marginal_effects(&effects, w))?;
        }
        m.finish(&a.out)
    }

    fn simulate(&self, a: &SimulateArgs) -> Result<()> {
        let mut config = self.config.simulate.clone();
        if let Some(n) = a.n_ads {
            config.n_ads = n;
        }
        config.validate()?;
        let mut m = self.manifest("simulate", serde_json::json!({ "simulate": Self::json(&config) }), &a.out, &[])?;
        let data = simulate::generate(&config, m.stage_seed("simulate"))?;
        data.write(&a.out)?;
        m.finish(&a.out)
    }

    fn recovery(&self, a: &RecoveryArgs) -> Result<()> {
        let scores_path = a.fit.join(irt::SCORES_FILE);
        let items_path = a.fit.join(irt::ITEMS_FILE);
        let mut m = self.manifest(
            "recovery",
            serde_json::Value::Null,
            &a.out,
            &[scores_path.as_path(), items_path.as_path()],
        )?;
        let truth = simulate::read_truth(&a.truth)?;
        let rows = irt::read_scores_path(&scores_path)?;
        let items = irt::read_items_path(&items_path)?;
        let ads: Vec<String> = rows.iter().map(|r| r.ad_id.clone()).collect();
        let summaries: Vec<irt::ScoreSummary> = rows.iter().map(|r| r.summary).collect();
        let report = simulate::recovery_from_summaries(&truth, &ads, &summaries, &items)?;
        write_with(&a.out.join(outputs::RECOVERY), |w| report.write(w))?;
        m.finish(&a.out)
    }

    fn pipeline(&self, a: &PipelineArgs) -> Result<()> {
        // a simulated directory carries the settings it was generated under
        if let (None, Some(dir)) = (&self.config_path, &a.input) {
            let path = dir.join(simulate::files::CONFIG);
            if path.exists() {
                let ctx = Ctx {
                    config: RunConfig::read(&path)?,
                    config_path: Some(path),
                    ..self.clone()
                };
                return ctx.pipeline_with(a);
            }
        }
        self.pipeline_with(a)
    }

    fn pipeline_with(&self, a: &PipelineArgs) -> Result<()> {
        let from_input = |name: &str| a.input.as_ref().map(|d| d.join(name));
        let pick = |given: &Option<PathBuf>, name: &str| given.clone().or_else(|| from_input(name));
        let ads = pick(&a.ads, simulate::files::ADS)
            .ok_or_else(|| Error::Config("pipeline needs --ads or --input".into()))?;
        let lexicon = pick(&a.lexicon, simulate::files::LEXICON).filter(|p| p.exists());
        let replay = pick(&a.replay, simulate::files::REPLAY).filter(|p| p.exists());
        let embeddings = pick(&a.embeddings, simulate::files::EMBEDDINGS).filter(|p| p.exists());
        let registry = pick(&a.registry, simulate::files::REGISTRY).filter(|p| p.exists());
        let mut columns = a.columns.clone();
        if columns.is_empty() {
            if let Some(dir) = &a.input {
                let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| Error::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("column_") && n.ends_with(".tsv"))
                    })
                    .collect();
                found.sort();
                columns = found;
            }
        }

        let out = &a.out;
        let mut m = self.manifest(
            "pipeline",
            serde_json::json!({ "config": Self::json(&self.config), "by": a.by }),
            out,
            &[ads.as_path()],
        )?;
        let kept = self.filter(&ads, lexicon.as_deref(), &out.join("filter"), "pipeline:filter")?;
        let matrix = self.annotate(
            &kept,
            lexicon.as_deref(),
            replay.as_deref(),
            &[],
            &columns,
            &out.join("annotate"),
            "pipeline:annotate",
        )?;
        let config = self.irt_config(None, None)?;
        let fit_dir = out.join("fit");
        self.fit_matrix(Method::Map, &config, &matrix, &fit_dir, "pipeline:fit")?;
        self.score(&fit_dir, &kept, &a.by, &out.join("score"), "pipeline:score")?;
        match (embeddings, registry) {
            (Some(e), Some(r)) => self.network(&kept, &e, &fit_dir, &r, &a.link, &out.join("network"), "pipeline:network")?,
            _ => log::warn!("pipeline: no embeddings or registry; network stage skipped"),
        }
        m.finish(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(run(["greenwash", "--help"]), 0);
        assert_eq!(run(["greenwash", "fit", "--bogus"]), 2);
        assert_eq!(run(["greenwash"]), 2);
    }

    #[test]
    fn config_sections_parse() {
        let c = RunConfig::from_toml("[irt]\ndraws = 5\n[network]\nmin_pairs = 3\n").unwrap();
        assert_eq!(c.irt.draws, 5);
        assert_eq!(c.network.min_pairs, 3);
        assert!(RunConfig::from_toml("[nope]\nx = 1\n").is_err());
    }

    #[test]
    fn validation_failure_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.tsv");
        let out = dir.path().join("out");
        assert_eq!(
            run(["greenwash", "fit", "--matrix", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            1
        );
    }
}

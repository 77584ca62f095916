//! Synthetic corpora with known ground truth.
//!
//! Cells are drawn from the likelihood in [`crate::irt`]: for missable items
//! the missingness indicator first, then the outcome if observed. Ads also get
//! text that re-derives the same keyword bits through the shipped lexicon,
//! cached annotator replies that parse back to the same LLM cells, impressions,
//! embeddings with planted near-duplicate clusters, and a seed-page registry.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotate::{build_prompt, prompt_hash, AnnotationColumn, Provenance, ReplayEntry};
use crate::error::{Error, Result};
use crate::filter::{LexEntry, LexiconConfig, PatternKind};
use crate::ingest::{AdRecord, EntityRegistry, EntityType, ImpressionCell, ImpressionKind, RegistryEntry};
use crate::irt::{self, IrtPosterior, ItemSummary, ScoreSummary, Stage};
use crate::matrix::{IndicatorMatrix, ItemDescriptor, ItemSource, Response};
use crate::network::EmbeddingStore;
use crate::seed;

/// Largest duplicate-noise scale for which planted clusters stay above a
/// cosine of 0.8 with high probability (expected cosine ≈ 1/(1 + s²)).
pub const MAX_DUPLICATE_NOISE: f64 = 0.3;

const FILLER: &str = "for our environment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_ads: usize,
    /// Keyword items; keys must exist in the lexicon.
    pub keyword_items: Vec<String>,
    /// Annotator items subject to missingness.
    pub llm_items: Vec<String>,
    /// Fully observed non-keyword items.
    pub stance_items: Vec<String>,
    pub positive_anchor: String,
    pub negative_anchor: String,
    /// True |λ| of the two anchor items.
    pub anchor_discrimination: f64,
    /// Range of |λ| for the other items; signs are random.
    pub discrimination_range: [f64; 2],
    pub difficulty_range: [f64; 2],
    /// Range of |λᵐ|; signs are random.
    pub missing_discrimination_range: [f64; 2],
    pub missing_difficulty: f64,
    /// When false no cell is missing.
    pub missingness: bool,
    /// Fixed λᵐ for named items.
    pub missing_discrimination_overrides: BTreeMap<String, f64>,
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub n_pages: usize,
    pub n_seed_pages: usize,
    /// Planted edges with at least one seed endpoint.
    pub planted_seed_edges: usize,
    /// Planted edges between two non-seed pages.
    pub planted_other_edges: usize,
    pub planted_ads_per_side: usize,
    /// Planted ads have θ = mean + this many sds.
    pub planted_theta_sds: f64,
    pub embedding_dim: usize,
    pub duplicate_noise: f64,
    pub countries: Vec<String>,
    pub age_groups: Vec<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        SimConfig {
            n_ads: 2000,
            keyword_items: s(&[
                "carbon_capture",
                "climate",
                "coal",
                "fossil_fuel",
                "global_warming",
                "greenhouse",
                "natural_gas",
                "sustainable",
            ]),
            llm_items: s(&["llm_deepseek", "llm_gemma2", "llm_llama", "llm_mistral", "llm_phi3", "llm_qwen"]),
            stance_items: s(&["stance_debate"]),
            positive_anchor: "natural_gas".into(),
            negative_anchor: "fossil_fuel".into(),
            anchor_discrimination: 0.9,
            discrimination_range: [0.5, 0.95],
            difficulty_range: [-1.0, 1.0],
            missing_discrimination_range: [0.3, 0.8],
            missing_difficulty: 1.7,
            missingness: true,
            missing_discrimination_overrides: BTreeMap::new(),
            theta_mean: 0.0,
            theta_sd: 2.0,
            n_pages: 40,
            n_seed_pages: 4,
            planted_seed_edges: 3,
            planted_other_edges: 1,
            planted_ads_per_side: 3,
            planted_theta_sds: 2.5,
            embedding_dim: 32,
            duplicate_noise: 0.15,
            countries: s(&["BR", "DE", "FR", "GB", "US"]),
            age_groups: s(&["18-24", "25-34", "35-44", "45-54", "55-64", "65+"]),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn n_items(&self) -> usize {
        self.keyword_items.len() + self.llm_items.len() + self.stance_items.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_ads == 0 || self.n_items() == 0 || self.n_pages == 0 {
            return bad("n_ads, item lists and n_pages must be non-empty".into());
        }
        if self.n_seed_pages > self.n_pages {
            return bad("n_seed_pages exceeds n_pages".into());
        }
        for anchor in [&self.positive_anchor, &self.negative_anchor] {
            if !self.keyword_items.contains(anchor) {
                return bad(format!("anchor {anchor} is not a keyword item"));
            }
        }
        let mut keys: Vec<&String> = self.keyword_items.iter().chain(&self.llm_items).chain(&self.stance_items).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return bad("item keys must be unique".into());
        }
        let in_unit = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] < 1.0;
        if !in_unit(self.discrimination_range) || !in_unit(self.missing_discrimination_range) {
            return bad("discrimination ranges must satisfy 0 <= lo <= hi < 1".into());
        }
        if !(self.anchor_discrimination > 0.0 && self.anchor_discrimination < 1.0) {
            return bad("anchor_discrimination must lie in (0, 1)".into());
        }
        if self.missing_discrimination_overrides.values().any(|l| l.abs() >= 1.0) {
            return bad("missingness discrimination overrides must lie in (-1, 1)".into());
        }
        if !(self.theta_sd > 0.0) || self.embedding_dim == 0 || self.duplicate_noise < 0.0 {
            return bad("theta_sd and embedding_dim must be positive, duplicate_noise non-negative".into());
        }
        let planted = self.planted_seed_edges + self.planted_other_edges;
        if self.planted_seed_edges > self.n_seed_pages
            || self.n_seed_pages + self.planted_seed_edges + 2 * self.planted_other_edges > self.n_pages
        {
            return bad("not enough pages for the planted edges".into());
        }
        if planted * 2 * self.planted_ads_per_side > self.n_ads {
            return bad("not enough ads for the planted edges".into());
        }
        if self.countries.is_empty() || self.age_groups.is_empty() {
            return bad("countries and age_groups must be non-empty".into());
        }
        Ok(())
    }

    /// Matching fit configuration: same θ scale and anchors.
    pub fn irt_config(&self) -> irt::IrtConfig {
        let mut c = irt::IrtConfig {
            theta_sd: self.theta_sd,
            ..Default::default()
        };
        c.anchors.clear();
        c.anchors.insert(self.positive_anchor.clone(), irt::BetaPrior::new(1000.0, 0.001));
        c.anchors.insert(self.negative_anchor.clone(), irt::BetaPrior::new(0.001, 1000.0));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthItem {
    pub key: String,
    pub source: ItemSource,
    pub discrimination: f64,
    pub difficulty: f64,
    pub missing_discrimination: Option<f64>,
    pub missing_difficulty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub ads: Vec<String>,
    pub theta: Vec<f64>,
    /// Sorted by key, aligned with the matrix items.
    pub items: Vec<TruthItem>,
    /// Planted page pairs, `(a, b)` with `a < b`.
    pub planted_edges: Vec<(String, String)>,
}

impl SimTruth {
    pub fn item(&self, key: &str) -> Option<&TruthItem> {
        self.items.iter().find(|i| i.key == key)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SimConfig,
    pub seed: u64,
    pub truth: SimTruth,
    pub matrix: IndicatorMatrix,
    pub ads: Vec<AdRecord>,
    pub embeddings: EmbeddingStore,
    pub registry: EntityRegistry,
    /// Cached raw annotator replies reproducing the LLM columns.
    pub replay: Vec<ReplayEntry>,
    /// Pre-coded stance columns.
    pub stance_columns: Vec<AnnotationColumn>,
    /// Lexicon restricted to the simulated keyword items.
    pub lexicon: LexiconConfig,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn signed(rng: &mut ChaCha8Rng, magnitude: f64) -> f64 {
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Text that the lexicon entry matches.
fn phrase(entry: &LexEntry) -> String {
    let strip = |p: &str| p.trim_end_matches('*').replace('\\', "");
    match entry.kind {
        PatternKind::Conjunction => entry.clauses.first().map(|c| c.iter().map(|p| strip(p)).collect::<Vec<_>>().join(" and ")).unwrap_or_default(),
        _ => entry.patterns.first().map(|p| strip(p)).unwrap_or_default(),
    }
}

fn sim_lexicon(config: &SimConfig) -> Result<(LexiconConfig, BTreeMap<String, String>)> {
    let shipped = LexiconConfig::shipped();
    let en = shipped
        .languages
        .iter()
        .find(|l| l.tag == shipped.default_language)
        .ok_or_else(|| Error::Config("lexicon has no default language".into()))?;
    let mut phrases = BTreeMap::new();
    let mut terms = Vec::new();
    for t in &en.terms {
        if !t.item {
            terms.push(t.clone());
        } else if config.keyword_items.contains(&t.key) {
            phrases.insert(t.key.clone(), phrase(t));
            terms.push(t.clone());
        }
    }
    if let Some(k) = config.keyword_items.iter().find(|k| !phrases.contains_key(*k)) {
        return Err(Error::Config(format!("keyword item {k} is not in the lexicon")));
    }
    let lexicon = LexiconConfig {
        default_language: en.tag.clone(),
        languages: vec![crate::filter::LanguageConfig {
            tag: en.tag.clone(),
            word_boundaries: en.word_boundaries,
            terms,
            electoral: en.electoral.clone(),
        }],
    };
    Ok((lexicon, phrases))
}

fn shares(rng: &mut ChaCha8Rng, groups: &[String]) -> Vec<ImpressionCell> {
    let raw: Vec<f64> = groups.iter().map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    groups
        .iter()
        .zip(raw)
        .map(|(g, r)| ImpressionCell {
            group_key: g.clone(),
            value: r / total * 0.999,
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

const YES_REPLIES: [&str; 3] = ["yes", "Yes.", "Answer: yes"];
const NO_REPLIES: [&str; 3] = ["No.", "no", "Answer: No"];
const BAD_REPLIES: [&str; 3] = ["I am unable to determine that.", "Greenwashing?", ""];

pub fn generate(config: &SimConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let (lexicon, phrases) = sim_lexicon(config)?;
    let mut rng = seed::rng(seed, 0);

    // items, sorted by key as the pipeline orders them
    let mut items: Vec<(String, ItemSource)> = config
        .keyword_items
        .iter()
        .map(|k| (k.clone(), ItemSource::Keyword))
        .chain(config.llm_items.iter().map(|k| (k.clone(), ItemSource::Llm)))
        .chain(config.stance_items.iter().map(|k| (k.clone(), ItemSource::Stance)))
        .collect();
    items.sort();
    let truth_items: Vec<TruthItem> = items
        .iter()
        .map(|(key, source)| {
            let discrimination = if *key == config.positive_anchor {
                config.anchor_discrimination
            } else if *key == config.negative_anchor {
                -config.anchor_discrimination
            } else {
                let m = uniform(&mut rng, config.discrimination_range);
                signed(&mut rng, m)
            };
            let difficulty = uniform(&mut rng, config.difficulty_range);
            let (md, mb) = if *source == ItemSource::Llm && config.missingness {
                let m = uniform(&mut rng, config.missing_discrimination_range);
                let random = signed(&mut rng, m);
                let lam = config.missing_discrimination_overrides.get(key).copied().unwrap_or(random);
                (Some(lam), Some(config.missing_difficulty))
            } else {
                (None, None)
            };
            TruthItem {
                key: key.clone(),
                source: *source,
                discrimination,
                difficulty,
                missing_discrimination: md,
                missing_difficulty: mb,
            }
        })
        .collect();

    let n = config.n_ads;
    let width = n.to_string().len().max(4);
    let ad_ids: Vec<String> = (0..n).map(|i| format!("ad{:0width$}", i + 1)).collect();
    let theta_dist = Normal::new(config.theta_mean, config.theta_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut theta: Vec<f64> = (0..n).map(|_| theta_dist.sample(&mut rng)).collect();

    // pages: seeds first
    let pw = config.n_pages.to_string().len().max(3);
    let page_ids: Vec<String> = (0..config.n_pages).map(|p| format!("page{:0pw$}", p + 1)).collect();
    let mut page_of: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.n_pages)).collect();

    // planted edges: seed k with page n_seed + k; then non-seed pairs after those
    let mut planted_pairs = Vec::new();
    for k in 0..config.planted_seed_edges {
        planted_pairs.push((k, config.n_seed_pages + k));
    }
    let base = config.n_seed_pages + config.planted_seed_edges;
    for k in 0..config.planted_other_edges {
        planted_pairs.push((base + 2 * k, base + 2 * k + 1));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut planted_cluster: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let high = config.theta_mean + config.planted_theta_sds * config.theta_sd;
    for (e, &(pa, pb)) in planted_pairs.iter().enumerate() {
        for page in [pa, pb] {
            for _ in 0..config.planted_ads_per_side {
                let i = order[next];
                next += 1;
                page_of[i] = page;
                planted_cluster[i] = Some(e);
                theta[i] = high;
            }
        }
    }
    // cells
    let j_count = truth_items.len();
    let mut cells = Vec::with_capacity(n * j_count);
    for &th in &theta {
        for t in &truth_items {
            let missing = match (t.missing_discrimination, t.missing_difficulty) {
                (Some(l), Some(b)) => rng.random::<f64>() < irt::response_probability(l, th, b),
                _ => false,
            };
            cells.push(if missing {
                Response::Missing
            } else {
                Response::from_bool(rng.random::<f64>() < irt::response_probability(t.discrimination, th, t.difficulty))
            });
        }
    }
    let descriptors: Vec<ItemDescriptor> = truth_items
        .iter()
        .enumerate()
        .map(|(j, t)| ItemDescriptor {
            key: t.key.clone(),
            source: t.source,
            can_be_missing: (0..n).any(|i| cells[i * j_count + j].is_missing()),
        })
        .collect();
    let matrix = IndicatorMatrix::new(ad_ids.clone(), descriptors, cells)?;

    // ad records and annotator artefacts
    let funders: Vec<String> = (0..config.n_pages).map(|p| format!("Funder {}", (b'A' + (p % 26) as u8) as char)).collect();
    let mut ads = Vec::with_capacity(n);
    let mut replay = Vec::new();
    let mut stance: Vec<BTreeMap<String, Response>> = vec![BTreeMap::new(); config.stance_items.len()];
    for i in 0..n {
        let page = page_of[i];
        let mut words = Vec::new();
        for (j, t) in truth_items.iter().enumerate() {
            if t.source == ItemSource::Keyword && matrix.get(i, j) == Response::Yes {
                words.push(phrases[&t.key].clone());
            }
        }
        let text = if words.is_empty() {
            format!("Act now {FILLER}.")
        } else {
            format!("{} {FILLER}.", words.join(", "))
        };
        let mut ad = AdRecord::new(ad_ids[i].clone(), page_ids[page].clone(), text);
        ad.page_name = format!("Page {}", page + 1);
        ad.funder = funders[page].clone();
        ad.impression_kind = ImpressionKind::Share;
        ad.impressions_total = Some(rng.random_range(1_000..100_000) as f64);
        ad.impressions.insert("country".into(), shares(&mut rng, &config.countries));
        ad.impressions.insert("age".into(), shares(&mut rng, &config.age_groups));

        let hash = prompt_hash(&build_prompt(&ad.text, &ad.page_name));
        for (j, t) in truth_items.iter().enumerate() {
            match t.source {
                ItemSource::Llm => {
                    let pool = match matrix.get(i, j) {
                        Response::Yes => &YES_REPLIES,
                        Response::No => &NO_REPLIES,
                        Response::Missing => &BAD_REPLIES,
                    };
                    replay.push(ReplayEntry {
                        item_key: t.key.clone(),
                        ad_id: ad.ad_id.clone(),
                        prompt_hash: hash.clone(),
                        raw_response: pool[rng.random_range(0..pool.len())].to_string(),
                    });
                }
                ItemSource::Stance => {
                    let k = config.stance_items.iter().position(|s| *s == t.key).expect("stance item listed");
                    stance[k].insert(ad.ad_id.clone(), matrix.get(i, j));
                }
                ItemSource::Keyword => {}
            }
        }
        ads.push(ad);
    }
    let stance_columns = config
        .stance_items
        .iter()
        .zip(stance)
        .map(|(key, values)| AnnotationColumn {
            item_key: key.clone(),
            source: ItemSource::Stance,
            values,
            provenance: Provenance {
                annotator: "simulated".into(),
                model_version: "truth".into(),
                seed,
            },
        })
        .collect();

    // embeddings
    let dim = config.embedding_dim;
    let bases: Vec<Vec<f64>> = planted_pairs.iter().map(|_| random_unit(&mut rng, dim)).collect();
    let mut embeddings = EmbeddingStore::new(dim);
    let noise_sd = config.duplicate_noise / (dim as f64).sqrt();
    for i in 0..n {
        let v = match planted_cluster[i] {
            Some(e) => bases[e]
                .iter()
                .map(|b| b + noise_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            None => random_unit(&mut rng, dim),
        };
        embeddings.insert(ad_ids[i].clone(), v)?;
    }

    // registry
    let types = [
        EntityType::OilCompany,
        EntityType::TradeAssociation,
        EntityType::ThinkTank,
        EntityType::InterestGroup,
        EntityType::Subsidiary,
    ];
    let mut registry = EntityRegistry::default();
    for p in 0..config.n_seed_pages {
        registry.insert(RegistryEntry {
            page_id: page_ids[p].clone(),
            entity_name: format!("Page {}", p + 1),
            entity_type: types[p % types.len()],
        })?;
    }

    let truth = SimTruth {
        ads: ad_ids,
        theta,
        items: truth_items,
        planted_edges: planted_pairs
            .iter()
            .map(|&(a, b)| (page_ids[a].clone(), page_ids[b].clone()))
            .collect(),
    };
    Ok(SyntheticDataset {
        config: config.clone(),
        seed,
        truth,
        matrix,
        ads,
        embeddings,
        registry,
        replay,
        stance_columns,
        lexicon,
    })
}

/// File names written by [`SyntheticDataset::write`].
pub mod files {
    pub const ADS: &str = "ads.jsonl";
    pub const MATRIX: &str = "matrix.tsv";
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const REGISTRY: &str = "registry.csv";
    pub const REPLAY: &str = "replay.jsonl";
    pub const LEXICON: &str = "lexicon.toml";
    pub const CONFIG: &str = "config.toml";
    pub const TRUTH_THETA: &str = "truth_theta.tsv";
    pub const TRUTH_ITEMS: &str = "truth_items.tsv";
    pub const TRUTH_EDGES: &str = "truth_edges.tsv";

    pub fn stance(key: &str) -> String {
        format!("column_{key}.tsv")
    }
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

impl SyntheticDataset {
    /// Writes every pipeline input plus the truth files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let io = |name: &str| {
            let p = dir.join(name);
            move |e: std::io::Error| Error::io(&p, e)
        };
        write_file(dir, files::ADS, |w| crate::ingest::write_ads(w, &self.ads))?;
        write_file(dir, files::MATRIX, |w| self.matrix.write(w))?;
        write_file(dir, files::EMBEDDINGS, |w| self.embeddings.write(w).map_err(io(files::EMBEDDINGS)))?;
        write_file(dir, files::REGISTRY, |w| self.registry.write(w))?;
        write_file(dir, files::REPLAY, |w| {
            for e in &self.replay {
                let line = serde_json::to_string(e).map_err(|e| Error::parse("replay", e))?;
                writeln!(w, "{line}").map_err(io(files::REPLAY))?;
            }
            Ok(())
        })?;
        for col in &self.stance_columns {
            write_file(dir, &files::stance(&col.item_key), |w| col.write(w))?;
        }
        write_file(dir, files::LEXICON, |w| {
            let text = toml::to_string(&self.lexicon).map_err(|e| Error::parse("lexicon", e))?;
            w.write_all(text.as_bytes()).map_err(io(files::LEXICON))
        })?;
        write_file(dir, files::CONFIG, |w| {
            #[derive(Serialize)]
            struct Out<'a> {
                simulate: &'a SimConfig,
                irt: irt::IrtConfig,
            }
            let text = toml::to_string(&Out {
                simulate: &self.config,
                irt: self.config.irt_config(),
            })
            .map_err(|e| Error::parse("config", e))?;
            w.write_all(text.as_bytes()).map_err(io(files::CONFIG))
        })?;
        write_file(dir, files::TRUTH_THETA, |w| {
            let e = io(files::TRUTH_THETA);
            writeln!(w, "ad_id\ttheta").map_err(&e)?;
            for (a, t) in self.truth.ads.iter().zip(&self.truth.theta) {
                writeln!(w, "{a}\t{t}").map_err(&e)?;
            }
            Ok(())
        })?;
        write_file(dir, files::TRUTH_ITEMS, |w| {
            let e = io(files::TRUTH_ITEMS);
            writeln!(w, "key\tsource\tdiscrimination\tdifficulty\tmissing_discrimination\tmissing_difficulty").map_err(&e)?;
            for t in &self.truth.items {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    t.key,
                    t.source.as_str(),
                    t.discrimination,
                    t.difficulty,
                    opt(t.missing_discrimination),
                    opt(t.missing_difficulty)
                )
                .map_err(&e)?;
            }
            Ok(())
        })?;
        write_file(dir, files::TRUTH_EDGES, |w| {
            let e = io(files::TRUTH_EDGES);
            writeln!(w, "page_a\tpage_b").map_err(&e)?;
            for (a, b) in &self.truth.planted_edges {
                writeln!(w, "{a}\t{b}").map_err(&e)?;
            }
            Ok(())
        })
    }
}

fn read_tsv(path: &Path) -> Result<Vec<Vec<String>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n > 0 && !line.is_empty() {
            rows.push(line.split('\t').map(str::to_string).collect());
        }
    }
    Ok(rows)
}

/// Reads the truth files written by [`SyntheticDataset::write`].
pub fn read_truth(dir: &Path) -> Result<SimTruth> {
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|e| Error::parse(what.to_string(), e));
    let optnum = |s: &str, what: &str| if s == "NA" { Ok(None) } else { num(s, what).map(Some) };
    let mut ads = Vec::new();
    let mut theta = Vec::new();
    for r in read_tsv(&dir.join(files::TRUTH_THETA))? {
        if r.len() != 2 {
            return Err(Error::parse(files::TRUTH_THETA, "expected 2 fields"));
        }
        ads.push(r[0].clone());
        theta.push(num(&r[1], files::TRUTH_THETA)?);
    }
    let mut items = Vec::new();
    for r in read_tsv(&dir.join(files::TRUTH_ITEMS))? {
        if r.len() != 6 {
            return Err(Error::parse(files::TRUTH_ITEMS, "expected 6 fields"));
        }
        items.push(TruthItem {
            key: r[0].clone(),
            source: r[1].parse().map_err(|e: String| Error::parse(files::TRUTH_ITEMS, e))?,
            discrimination: num(&r[2], files::TRUTH_ITEMS)?,
            difficulty: num(&r[3], files::TRUTH_ITEMS)?,
            missing_discrimination: optnum(&r[4], files::TRUTH_ITEMS)?,
            missing_difficulty: optnum(&r[5], files::TRUTH_ITEMS)?,
        });
    }
    let planted_edges = read_tsv(&dir.join(files::TRUTH_EDGES))?
        .into_iter()
        .map(|r| match r.as_slice() {
            [a, b] => Ok((a.clone(), b.clone())),
            _ => Err(Error::parse(files::TRUTH_EDGES, "expected 2 fields")),
        })
        .collect::<Result<_>>()?;
    Ok(SimTruth {
        ads,
        theta,
        items,
        planted_edges,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_ads: usize,
    pub theta_correlation: f64,
    /// Share of outcome items whose fitted λ has the true sign.
    pub sign_agreement: f64,
    /// Share of ads whose 90% interval covers the true θ.
    pub coverage: f64,
    pub n_items: usize,
}

impl RecoveryReport {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "n_ads\t{}", self.n_ads)?;
        writeln!(w, "n_items\t{}", self.n_items)?;
        writeln!(w, "theta_correlation\t{}", self.theta_correlation)?;
        writeln!(w, "sign_agreement\t{}", self.sign_agreement)?;
        writeln!(w, "coverage_90\t{}", self.coverage)?;
        w.flush()
    }
}

/// Compares a posterior with the generating truth, matching by ad id and
/// item key.
pub fn recovery_report(truth: &SimTruth, posterior: &IrtPosterior) -> Result<RecoveryReport> {
    recovery_from_summaries(truth, &posterior.ads, &posterior.scores, &posterior.items)
}

/// [`recovery_report`] on summaries read back from a fit directory.
pub fn recovery_from_summaries(
    truth: &SimTruth,
    ads: &[String],
    scores: &[ScoreSummary],
    items: &[ItemSummary],
) -> Result<RecoveryReport> {
    let index: HashMap<&str, usize> = ads.iter().enumerate().map(|(k, a)| (a.as_str(), k)).collect();
    let mut est = Vec::with_capacity(truth.ads.len());
    let mut tru = Vec::with_capacity(truth.ads.len());
    let mut covered = 0usize;
    for (a, t) in truth.ads.iter().zip(&truth.theta) {
        let k = *index.get(a.as_str()).ok_or_else(|| Error::Coverage {
            what: "posterior".into(),
            ids: vec![a.clone()],
        })?;
        let s = scores[k];
        est.push(s.mean);
        tru.push(*t);
        if s.q05 <= *t && *t <= s.q95 {
            covered += 1;
        }
    }
    let mut agree = 0usize;
    let mut n_items = 0usize;
    for t in &truth.items {
        if let Some(s) = items.iter().find(|s| s.key == t.key && s.stage == Stage::Outcome) {
            n_items += 1;
            if s.discrimination.mean.signum() == t.discrimination.signum() {
                agree += 1;
            }
        }
    }
    Ok(RecoveryReport {
        n_ads: est.len(),
        theta_correlation: pearson(&est, &tru),
        sign_agreement: if n_items == 0 { 0.0 } else { agree as f64 / n_items as f64 },
        coverage: if est.is_empty() { 0.0 } else { covered as f64 / est.len() as f64 },
        n_items,
    })
}

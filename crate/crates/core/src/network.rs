//! Page similarity network built from ad embeddings and scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AdRecord, EntityRegistry};

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

#[inline]
fn cosine_with_norms(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector("<argument>".into()));
    }
    Ok(cosine_with_norms(u, v, nu, nv))
}

/// Mean plus one sample standard deviation.
pub fn high_score_threshold(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::TooFewScores(scores.len()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(mean + var.sqrt())
}

/// Fixed-dimension ad embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, ad_id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let ad_id = ad_id.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse("embeddings", format!("non-finite component for ad {ad_id}")));
        }
        let n = norm(&vector);
        if n == 0.0 {
            return Err(Error::ZeroVector(ad_id));
        }
        if self.index.contains_key(&ad_id) {
            return Err(Error::DuplicateAdId(ad_id));
        }
        self.index.insert(ad_id.clone(), self.ids.len());
        self.ids.push(ad_id);
        self.data.extend_from_slice(&vector);
        self.norms.push(n);
        Ok(())
    }

    pub fn get(&self, ad_id: &str) -> Option<&[f64]> {
        self.index.get(ad_id).map(|&k| self.slot(k))
    }

    fn slot(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// One line per ad: id followed by whitespace-separated components.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut store: Option<EmbeddingStore> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings stream>", e))?;
            let mut fields = line.split_whitespace();
            let Some(id) = fields.next() else { continue };
            let vector = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(format!("embeddings line {}", n + 1), e))?;
            let s = store.get_or_insert_with(|| EmbeddingStore::new(vector.len()));
            s.insert(id, vector).map_err(|e| match e {
                Error::Dimension { expected, found } => Error::parse(
                    format!("embeddings line {}", n + 1),
                    format!("expected {expected} components, found {found}"),
                ),
                other => other,
            })?;
        }
        Ok(store.unwrap_or_default())
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for x in self.slot(k) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// How the minimum link strength is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairRule {
    /// Qualifying cross-page ad pairs.
    #[default]
    Pairs,
    /// Distinct ads (on either page) taking part in a qualifying pair.
    PerPageAds,
}

impl std::str::FromStr for PairRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(PairRule::Pairs),
            "per-page-ads" => Ok(PairRule::PerPageAds),
            other => Err(Error::Config(format!("unknown pair rule {other:?} (pairs | per-page-ads)"))),
        }
    }
}

/// Which distribution defines a high score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    /// Mean + 1 sd over all scored ads.
    #[default]
    Global,
    /// Mean + 1 sd within the ad's own page (pages with < 2 ads never qualify).
    PerPage,
}

impl std::str::FromStr for ThresholdScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(ThresholdScope::Global),
            "per-page" => Ok(ThresholdScope::PerPage),
            other => Err(Error::Config(format!("unknown threshold scope {other:?} (global | per-page)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub min_pairs: usize,
    pub min_cos: f64,
    pub pair_rule: PairRule,
    pub threshold_scope: ThresholdScope,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            min_pairs: 5,
            min_cos: 0.8,
            pair_rule: PairRule::Pairs,
            threshold_scope: ThresholdScope::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageNode {
    pub page_id: String,
    pub name: String,
    /// Most common funder among the page's ads.
    pub funder: String,
    pub mean_score: f64,
    pub n_ads: usize,
    pub is_seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEdge {
    /// `page_a < page_b`.
    pub page_a: String,
    pub page_b: String,
    pub count: usize,
    pub mean_cosine: f64,
    /// `mean_score(page_b) − mean_score(page_a)`.
    pub score_difference: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PageGraph {
    /// Sorted by page id.
    pub nodes: Vec<PageNode>,
    /// Sorted by `(page_a, page_b)`.
    pub edges: Vec<PageEdge>,
}

impl PageGraph {
    pub fn node(&self, page_id: &str) -> Option<&PageNode> {
        self.nodes
            .binary_search_by(|n| n.page_id.as_str().cmp(page_id))
            .ok()
            .map(|k| &self.nodes[k])
    }

    pub fn write_dot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let q = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        writeln!(w, "graph pages {{")?;
        for n in &self.nodes {
            writeln!(
                w,
                "  {} [label={}, mean_score={}, is_seed={}];",
                q(&n.page_id),
                q(&n.name),
                n.mean_score,
                n.is_seed
            )?;
        }
        for e in &self.edges {
            writeln!(
                w,
                "  {} -- {} [count={}, mean_cosine={}, difference={}];",
                q(&e.page_a),
                q(&e.page_b),
                e.count,
                e.mean_cosine,
                e.score_difference
            )?;
        }
        writeln!(w, "}}")?;
        w.flush()
    }

    pub fn write_edge_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "page_a\tpage_b\tcount\tmean_cosine\tscore_difference")?;
        for e in &self.edges {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", e.page_a, e.page_b, e.count, e.mean_cosine, e.score_difference)?;
        }
        w.flush()
    }
}

fn most_common(values: &[&str]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap order makes the lexicographically smallest win ties
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in counts {
        match best {
            Some((_, bc)) if c <= bc => {}
            _ => best = Some((v, c)),
        }
    }
    best.map(|(v, _)| v.to_string()).unwrap_or_default()
}

struct HighAd {
    slot: usize,
    norm: f64,
}

/// Links pages whose high-scoring ads are near duplicates of each other.
pub fn build_links(
    ads: &[AdRecord],
    embeddings: &EmbeddingStore,
    scores: &HashMap<String, f64>,
    registry: Option<&EntityRegistry>,
    config: &LinkConfig,
) -> Result<PageGraph> {
    let missing: Vec<String> = ads.iter().filter(|a| !scores.contains_key(&a.ad_id)).map(|a| a.ad_id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::Coverage {
            what: "scores".into(),
            ids: missing,
        });
    }
    let missing: Vec<String> = ads.iter().filter(|a| embeddings.get(&a.ad_id).is_none()).map(|a| a.ad_id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::Coverage {
            what: "embeddings".into(),
            ids: missing,
        });
    }

    let mut pages: BTreeMap<&str, Vec<&AdRecord>> = BTreeMap::new();
    for ad in ads {
        pages.entry(ad.page_id.as_str()).or_default().push(ad);
    }
    let nodes: Vec<PageNode> = pages
        .iter()
        .map(|(page_id, page_ads)| {
            let mean_score = page_ads.iter().map(|a| scores[&a.ad_id]).sum::<f64>() / page_ads.len() as f64;
            let funders: Vec<&str> = page_ads.iter().map(|a| a.funder.as_str()).collect();
            let names: Vec<&str> = page_ads.iter().map(|a| a.page_name.as_str()).collect();
            PageNode {
                page_id: page_id.to_string(),
                name: most_common(&names),
                funder: most_common(&funders),
                mean_score,
                n_ads: page_ads.len(),
                is_seed: registry.is_some_and(|r| r.contains(page_id)),
            }
        })
        .collect();

    let high: Vec<(&str, Vec<HighAd>)> = match config.threshold_scope {
        ThresholdScope::Global => {
            let all: Vec<f64> = ads.iter().map(|a| scores[&a.ad_id]).collect();
            let t = high_score_threshold(&all)?;
            pages
                .iter()
                .map(|(p, page_ads)| (*p, page_ads.iter().filter(|a| scores[&a.ad_id] >= t).copied().collect::<Vec<_>>()))
                .collect::<Vec<_>>()
        }
        ThresholdScope::PerPage => pages
            .iter()
            .map(|(p, page_ads)| {
                let s: Vec<f64> = page_ads.iter().map(|a| scores[&a.ad_id]).collect();
                let kept = match high_score_threshold(&s) {
                    Ok(t) => page_ads.iter().filter(|a| scores[&a.ad_id] >= t).copied().collect(),
                    Err(_) => Vec::new(),
                };
                (*p, kept)
            })
            .collect(),
    }
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .map(|(p, v)| {
        let high = v
            .iter()
            .map(|a| {
                let slot = embeddings.index[&a.ad_id];
                HighAd {
                    slot,
                    norm: embeddings.norms[slot],
                }
            })
            .collect();
        (p, high)
    })
    .collect();

    let mean_by_page: HashMap<&str, f64> = nodes.iter().map(|n| (n.page_id.as_str(), n.mean_score)).collect();
    let page_pairs: Vec<(usize, usize)> = (0..high.len()).flat_map(|a| (a + 1..high.len()).map(move |b| (a, b))).collect();
    let edges: Vec<PageEdge> = page_pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let (pa, ads_a) = &high[a];
            let (pb, ads_b) = &high[b];
            let mut pairs = 0usize;
            let mut cos_sum = 0.0;
            let mut used_a = BTreeSet::new();
            let mut used_b = BTreeSet::new();
            for (ia, x) in ads_a.iter().enumerate() {
                for (ib, y) in ads_b.iter().enumerate() {
                    let c = cosine_with_norms(embeddings.slot(x.slot), embeddings.slot(y.slot), x.norm, y.norm);
                    if c >= config.min_cos {
                        pairs += 1;
                        cos_sum += c;
                        used_a.insert(ia);
                        used_b.insert(ib);
                    }
                }
            }
            let count = match config.pair_rule {
                PairRule::Pairs => pairs,
                PairRule::PerPageAds => used_a.len() + used_b.len(),
            };
            (pairs > 0 && count >= config.min_pairs).then(|| PageEdge {
                page_a: pa.to_string(),
                page_b: pb.to_string(),
                count,
                mean_cosine: cos_sum / pairs as f64,
                score_difference: mean_by_page[pb] - mean_by_page[pa],
            })
        })
        .collect();

    Ok(PageGraph { nodes, edges })
}

/// Keeps edges touching a registry page, and the nodes those edges use.
pub fn seed_filter(graph: &PageGraph, registry: &EntityRegistry) -> PageGraph {
    let edges: Vec<PageEdge> = graph
        .edges
        .iter()
        .filter(|e| registry.contains(&e.page_a) || registry.contains(&e.page_b))
        .cloned()
        .collect();
    let used: BTreeSet<&str> = edges.iter().flat_map(|e| [e.page_a.as_str(), e.page_b.as_str()]).collect();
    let nodes = graph
        .nodes
        .iter()
        .filter(|n| used.contains(n.page_id.as_str()))
        .cloned()
        .map(|mut n| {
            n.is_seed = registry.contains(&n.page_id);
            n
        })
        .collect();
    PageGraph { nodes, edges }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDifference {
    pub seed_page: String,
    pub seed_name: String,
    pub linked_page: String,
    pub linked_name: String,
    pub linked_funder: String,
    pub seed_mean: f64,
    pub linked_mean: f64,
    /// `linked_mean − seed_mean`: positive when the seed page's ads carry
    /// less greenwashing than the linked page's.
    pub difference: f64,
}

/// One row per (seed, linked page) orientation, largest difference first.
pub fn score_differences(graph: &PageGraph) -> Vec<ScoreDifference> {
    let mut rows = Vec::new();
    for e in &graph.edges {
        let (Some(a), Some(b)) = (graph.node(&e.page_a), graph.node(&e.page_b)) else {
            continue;
        };
        for (seed, linked) in [(a, b), (b, a)] {
            if seed.is_seed {
                rows.push(ScoreDifference {
                    seed_page: seed.page_id.clone(),
                    seed_name: seed.name.clone(),
                    linked_page: linked.page_id.clone(),
                    linked_name: linked.name.clone(),
                    linked_funder: linked.funder.clone(),
                    seed_mean: seed.mean_score,
                    linked_mean: linked.mean_score,
                    difference: linked.mean_score - seed.mean_score,
                });
            }
        }
    }
    rows.sort_by(|x, y| {
        y.difference
            .total_cmp(&x.difference)
            .then_with(|| x.seed_page.cmp(&y.seed_page))
            .then_with(|| x.linked_page.cmp(&y.linked_page))
    });
    rows
}

pub fn write_score_differences<W: Write>(rows: &[ScoreDifference], mut w: W) -> std::io::Result<()> {
    writeln!(w, "seed_page\tseed_name\tlinked_page\tlinked_name\tlinked_funder\tseed_mean\tlinked_mean\tdifference")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.seed_page, r.seed_name, r.linked_page, r.linked_name, r.linked_funder, r.seed_mean, r.linked_mean, r.difference
        )?;
    }
    w.flush()
}

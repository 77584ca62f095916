//! Annotator items: the classification prompt, response coding, the client
//! contract with its replay cache, and matrix assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::KeywordVector;
use crate::ingest::AdRecord;
pub use crate::matrix::{IndicatorMatrix, ItemDescriptor, ItemSource, Response};

const PROMPT_HEAD: &str = "Advertisement Text: [\"";
const PROMPT_SEPARATOR: &str = "_____";
const PROMPT_BODY: &str = "\"] : You are a human bot evaluating a number of advertisements on webpages. \
You are given the text of the advertisement and name of the website after _____.\n\n\
Based on this information, your task is to answer the following question:\n\n\
Greenwashing is the act of making false or misleading statements about the climate impact of a product or practice. \
It can be a way for companies to maintain or increase their greenhouse gas emissions. \
Is this ad engaged in greenwashing?\n\n\
Your must choose exactly one of the following predefined answers: yes, no\n\n\
You will only respond with the answer. Do not repeat these instructions or include the word 'Answer:' \
before giving your answer. Do not give any explanations or notes.";

/// The greenwashing classification prompt with the ad text and page name
/// interpolated.
pub fn build_prompt(ad_text: &str, page_name: &str) -> String {
    let mut s = String::with_capacity(PROMPT_HEAD.len() + ad_text.len() + page_name.len() + PROMPT_BODY.len() + 8);
    s.push_str(PROMPT_HEAD);
    s.push_str(ad_text);
    s.push_str(PROMPT_SEPARATOR);
    s.push_str(page_name);
    s.push_str(PROMPT_BODY);
    s
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Codes a raw model reply.
///
/// The first word (after quotes, punctuation and an optional `Answer:`
/// prefix) must be `yes` or `no`; a reply that also contains the opposite
/// word anywhere is treated as missing.
pub fn parse_llm_response(raw: &str) -> Response {
    let words: Vec<String> = raw
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    let mut rest = words.as_slice();
    if rest.first().is_some_and(|w| w == "answer") {
        rest = &rest[1..];
    }
    let has = |t: &str| rest.iter().any(|w| w == t);
    match rest.first().map(String::as_str) {
        Some("yes") if !has("no") => Response::Yes,
        Some("no") if !has("yes") => Response::No,
        _ => Response::Missing,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub prompt: String,
    pub model_id: String,
    pub seed: u64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

/// Anything that can answer an [`AnnotationRequest`] with raw text.
pub trait AnnotationClient: Send + Sync {
    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, TransportError>;
}

impl<F> AnnotationClient for F
where
    F: Fn(&AnnotationRequest) -> std::result::Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, TransportError> {
        self(request)
    }
}

/// Client that never reaches a model; used for replay-only runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineClient;

impl AnnotationClient for OfflineClient {
    fn complete(&self, _: &AnnotationRequest) -> std::result::Result<String, TransportError> {
        Err(TransportError("offline: no annotation client configured".into()))
    }
}

/// Answers from a fixed prompt → reply table and counts the calls it serves.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    replies: HashMap<String, std::result::Result<String, TransportError>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, prompt: impl Into<String>, raw: impl Into<String>) -> Self {
        self.replies.insert(prompt.into(), Ok(raw.into()));
        self
    }

    pub fn fail(mut self, prompt: impl Into<String>, message: impl Into<String>) -> Self {
        self.replies.insert(prompt.into(), Err(TransportError(message.into())));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AnnotationClient for ScriptedClient {
    fn complete(&self, request: &AnnotationRequest) -> std::result::Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.replies
            .get(&request.prompt)
            .cloned()
            .unwrap_or_else(|| Err(TransportError("no scripted reply".into())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub item_key: String,
    pub ad_id: String,
    pub prompt_hash: String,
    pub raw_response: String,
}

type ReplayKey = (String, String, String);

/// Append-only cache of raw replies keyed by `(item_key, ad_id, prompt_hash)`.
#[derive(Debug, Default)]
pub struct ReplayCache {
    entries: Mutex<HashMap<ReplayKey, String>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a line-delimited cache file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: ReplayEntry = serde_json::from_str(&line)
                    .map_err(|err| Error::parse(format!("replay cache line {}", n + 1), err))?;
                entries.insert((e.item_key, e.ad_id, e.prompt_hash), e.raw_response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ReplayCache {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    /// Read-only view of an existing cache file.
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let cache = Self::in_memory();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry =
                serde_json::from_str(&line).map_err(|err| Error::parse(format!("replay cache line {}", n + 1), err))?;
            cache.insert_memory(e);
        }
        Ok(cache)
    }

    fn insert_memory(&self, e: ReplayEntry) {
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert((e.item_key, e.ad_id, e.prompt_hash), e.raw_response);
    }

    pub fn get(&self, item_key: &str, ad_id: &str, prompt_hash: &str) -> Option<String> {
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(&(item_key.to_string(), ad_id.to_string(), prompt_hash.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Item keys present in the cache, sorted.
    pub fn item_keys(&self) -> Vec<String> {
        let entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        let keys: BTreeSet<&String> = entries.keys().map(|(k, _, _)| k).collect();
        keys.into_iter().cloned().collect()
    }

    pub fn append(&self, entry: ReplayEntry) -> Result<()> {
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&entry).map_err(|e| Error::parse("replay cache", e))?;
            let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
            writeln!(f, "{line}").map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.insert_memory(entry);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub annotator: String,
    pub model_version: String,
    pub seed: u64,
}

/// One annotator's coded answers for every ad in a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationColumn {
    pub item_key: String,
    pub source: ItemSource,
    pub values: BTreeMap<String, Response>,
    pub provenance: Provenance,
}

impl AnnotationColumn {
    pub fn count(&self, r: Response) -> usize {
        self.values.values().filter(|v| **v == r).count()
    }

    /// Tab-separated `ad_id, value` rows after a `#`-prefixed metadata line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<column stream>", e);
        writeln!(
            w,
            "# item_key={} source={} annotator={} model_version={} seed={}",
            self.item_key,
            self.source.as_str(),
            self.provenance.annotator,
            self.provenance.model_version,
            self.provenance.seed
        )
        .map_err(io)?;
        writeln!(w, "ad_id\tvalue").map_err(io)?;
        for (ad, v) in &self.values {
            writeln!(w, "{ad}\t{}", v.symbol()).map_err(io)?;
        }
        Ok(())
    }

    /// Reads a column file. Metadata is optional; `default_key` and
    /// `default_source` fill in what the file does not declare.
    pub fn read<R: BufRead>(r: R, default_key: &str, default_source: ItemSource) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut values = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<column stream>", e))?;
            let line = line.trim_end();
            if let Some(m) = line.strip_prefix('#') {
                for kv in m.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            if line.is_empty() || line == "ad_id\tvalue" {
                continue;
            }
            let (ad, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("column line {}", n + 1), "expected ad_id<TAB>value"))?;
            let v = match v.trim() {
                "1" => Response::Yes,
                "0" => Response::No,
                "." | "" | "NA" => Response::Missing,
                other => return Err(Error::parse(format!("column line {}", n + 1), format!("bad value {other:?}"))),
            };
            if values.insert(ad.to_string(), v).is_some() {
                return Err(Error::DuplicateAdId(ad.to_string()));
            }
        }
        let source = match meta.get("source") {
            Some(s) => s.parse().map_err(|e: String| Error::parse("column metadata", e))?,
            None => default_source,
        };
        Ok(AnnotationColumn {
            item_key: meta.remove("item_key").unwrap_or_else(|| default_key.to_string()),
            source,
            values,
            provenance: Provenance {
                annotator: meta.remove("annotator").unwrap_or_default(),
                model_version: meta.remove("model_version").unwrap_or_default(),
                seed: meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateOptions {
    pub model_id: String,
    pub max_tokens: u32,
    /// Attempts after the first transport failure.
    pub max_retries: u32,
    /// Concurrent requests in flight.
    pub in_flight: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            model_id: String::new(),
            max_tokens: 16,
            max_retries: 2,
            in_flight: 1,
        }
    }
}

/// Default model identifiers for the shipped annotator item keys.
pub fn default_model_id(item_key: &str) -> &'static str {
    match item_key {
        "llm_mistral" => "mistral:7b",
        "llm_llama" => "llama3.2:3b",
        "llm_phi3" => "phi3",
        "llm_gemma2" => "gemma2",
        "llm_deepseek" => "deepseek-r1",
        "llm_qwen" => "qwen2.5:7b",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationStats {
    pub cache_hits: usize,
    pub client_calls: usize,
    /// Ads coded missing because the client kept failing.
    pub transport_missing: usize,
    /// Ads coded missing because no yes/no answer was found.
    pub parse_missing: usize,
}

#[derive(Debug, Clone)]
pub struct AnnotationOutcome {
    pub column: AnnotationColumn,
    pub stats: AnnotationStats,
}

enum Coded {
    Cached(Response),
    Fresh(Response),
    Transport,
}

/// Codes every ad with one annotator, consulting the replay cache first.
pub fn annotate_corpus(
    ads: &[AdRecord],
    client: &dyn AnnotationClient,
    cache: &ReplayCache,
    item_key: &str,
    seed: u64,
    options: &AnnotateOptions,
) -> Result<AnnotationOutcome> {
    let model_id = if options.model_id.is_empty() {
        default_model_id(item_key).to_string()
    } else {
        options.model_id.clone()
    };
    let workers = options.in_flight.max(1).min(ads.len().max(1));
    let code_one = |ad: &AdRecord| -> Result<Coded> {
        let prompt = build_prompt(&ad.text, &ad.page_name);
        let hash = prompt_hash(&prompt);
        if let Some(raw) = cache.get(item_key, &ad.ad_id, &hash) {
            return Ok(Coded::Cached(parse_llm_response(&raw)));
        }
        let request = AnnotationRequest {
            prompt,
            model_id: model_id.clone(),
            seed,
            max_tokens: options.max_tokens,
        };
        let mut last = None;
        for _ in 0..=options.max_retries {
            match client.complete(&request) {
                Ok(raw) => {
                    cache.append(ReplayEntry {
                        item_key: item_key.to_string(),
                        ad_id: ad.ad_id.clone(),
                        prompt_hash: hash,
                        raw_response: raw.clone(),
                    })?;
                    return Ok(Coded::Fresh(parse_llm_response(&raw)));
                }
                Err(e) => last = Some(e),
            }
        }
        log::warn!(
            "{item_key}: transport failure for ad {} after {} attempts ({}); coded missing",
            ad.ad_id,
            options.max_retries + 1,
            last.map(|e| e.0).unwrap_or_default()
        );
        Ok(Coded::Transport)
    };

    let mut coded: Vec<Option<Coded>> = (0..ads.len()).map(|_| None).collect();
    if workers <= 1 {
        for (slot, ad) in coded.iter_mut().zip(ads) {
            *slot = Some(code_one(ad)?);
        }
    } else {
        let results: Vec<Result<Vec<(usize, Coded)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let code_one = &code_one;
                    s.spawn(move || {
                        (w..ads.len())
                            .step_by(workers)
                            .map(|i| code_one(&ads[i]).map(|c| (i, c)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("annotation worker panicked")).collect()
        });
        for chunk in results {
            for (i, c) in chunk? {
                coded[i] = Some(c);
            }
        }
    }

    let mut stats = AnnotationStats::default();
    let mut values = BTreeMap::new();
    for (ad, c) in ads.iter().zip(coded) {
        let v = match c.expect("every ad coded") {
            Coded::Cached(v) => {
                stats.cache_hits += 1;
                v
            }
            Coded::Fresh(v) => {
                stats.client_calls += 1;
                v
            }
            Coded::Transport => {
                stats.transport_missing += 1;
                Response::Missing
            }
        };
        values.insert(ad.ad_id.clone(), v);
    }
    stats.parse_missing = values.values().filter(|v| v.is_missing()).count() - stats.transport_missing;
    if stats.parse_missing > 0 {
        log::info!("{item_key}: {} replies had no identifiable yes/no answer", stats.parse_missing);
    }

    Ok(AnnotationOutcome {
        column: AnnotationColumn {
            item_key: item_key.to_string(),
            source: ItemSource::Llm,
            values,
            provenance: Provenance {
                annotator: item_key.to_string(),
                model_version: model_id,
                seed,
            },
        },
        stats,
    })
}

/// Joins keyword bits and annotator columns into one matrix.
///
/// Ads and items are sorted lexicographically. Keyword items are never
/// missable; an annotator item is missable when its column has at least one
/// missing value.
pub fn assemble_matrix(keyword_vectors: &[KeywordVector], columns: &[AnnotationColumn]) -> Result<IndicatorMatrix> {
    let mut ads: Vec<String> = keyword_vectors.iter().map(|v| v.ad_id.clone()).collect();
    ads.sort();
    if let Some(w) = ads.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateAdId(w[0].clone()));
    }

    let keyword_keys: BTreeSet<&String> = keyword_vectors.iter().flat_map(|v| v.bits.keys()).collect();
    let mut items: Vec<(ItemDescriptor, Option<&AnnotationColumn>)> = keyword_keys
        .into_iter()
        .map(|k| {
            (
                ItemDescriptor {
                    key: k.clone(),
                    source: ItemSource::Keyword,
                    can_be_missing: false,
                },
                None,
            )
        })
        .collect();

    for col in columns {
        let missing: Vec<String> = ads.iter().filter(|a| !col.values.contains_key(*a)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Coverage {
                what: format!("column {}", col.item_key),
                ids: missing,
            });
        }
        let ad_set: BTreeSet<&String> = ads.iter().collect();
        let extra: Vec<String> = col.values.keys().filter(|a| !ad_set.contains(a)).cloned().collect();
        if !extra.is_empty() {
            return Err(Error::Coverage {
                what: "keyword vectors".into(),
                ids: extra,
            });
        }
        if col.source == ItemSource::Keyword {
            return Err(Error::Matrix(format!("column {} must not be keyword-sourced", col.item_key)));
        }
        items.push((
            ItemDescriptor {
                key: col.item_key.clone(),
                source: col.source,
                can_be_missing: col.values.values().any(|v| v.is_missing()),
            },
            Some(col),
        ));
    }
    items.sort_by(|a, b| a.0.key.cmp(&b.0.key));

    let by_id: HashMap<&str, &KeywordVector> = keyword_vectors.iter().map(|v| (v.ad_id.as_str(), v)).collect();
    let mut cells = Vec::with_capacity(ads.len() * items.len());
    for ad in &ads {
        let kv = by_id[ad.as_str()];
        for (desc, col) in &items {
            cells.push(match col {
                Some(c) => c.values[ad],
                None => Response::from_bool(kv.bits.get(&desc.key).copied().unwrap_or(false)),
            });
        }
    }
    IndicatorMatrix::new(ads, items.into_iter().map(|(d, _)| d).collect(), cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_contains_instruction_and_slots() {
        let p = build_prompt("Clean coal now", "PageX");
        assert!(p.contains("Greenwashing is the act of making false or misleading statements"));
        assert!(p.starts_with("Advertisement Text: [\"Clean coal now_____PageX\"]"));
        assert_eq!(p, build_prompt("Clean coal now", "PageX"));
        let empty = build_prompt("", "");
        assert!(empty.starts_with("Advertisement Text: [\"_____\"] : You are a human bot"));
        assert!(empty.ends_with("Do not give any explanations or notes."));
    }

    #[test]
    fn response_coding() {
        assert_eq!(parse_llm_response("yes"), Response::Yes);
        assert_eq!(parse_llm_response("No."), Response::No);
        assert_eq!(parse_llm_response("  \"Yes\"  "), Response::Yes);
        assert_eq!(parse_llm_response("Answer: no"), Response::No);
        assert_eq!(
            parse_llm_response("As a language model I cannot determine this."),
            Response::Missing
        );
        assert_eq!(parse_llm_response("Yes — although no definitive proof"), Response::Missing);
        assert_eq!(parse_llm_response(""), Response::Missing);
        assert_eq!(parse_llm_response("yesterday"), Response::Missing);
    }

    #[test]
    fn column_file_round_trip() {
        let col = AnnotationColumn {
            item_key: "stance_debate".into(),
            source: ItemSource::Stance,
            values: [("a1".to_string(), Response::Yes), ("a2".to_string(), Response::Missing)]
                .into_iter()
                .collect(),
            provenance: Provenance {
                annotator: "debate".into(),
                model_version: "v1".into(),
                seed: 3,
            },
        };
        let mut buf = Vec::new();
        col.write(&mut buf).unwrap();
        let back = AnnotationColumn::read(buf.as_slice(), "x", ItemSource::Llm).unwrap();
        assert_eq!(back, col);
    }

    #[test]
    fn assemble_orders_and_checks_coverage() {
        let kv = |id: &str, bits: &[(&str, bool)]| KeywordVector {
            ad_id: id.into(),
            bits: bits.iter().map(|(k, b)| (k.to_string(), *b)).collect(),
        };
        let kvs = vec![
            kv("a2", &[("coal", false), ("climate", true), ("natural_gas", false)]),
            kv("a1", &[("coal", true), ("climate", false), ("natural_gas", true)]),
        ];
        let col = |key: &str, vals: &[(&str, Response)]| AnnotationColumn {
            item_key: key.into(),
            source: ItemSource::Llm,
            values: vals.iter().map(|(a, v)| (a.to_string(), *v)).collect(),
            provenance: Provenance {
                annotator: key.into(),
                model_version: "m".into(),
                seed: 0,
            },
        };
        let c1 = col("llm_b", &[("a1", Response::Yes), ("a2", Response::Missing)]);
        let c2 = col("llm_a", &[("a1", Response::No), ("a2", Response::Yes)]);
        let m = assemble_matrix(&kvs, &[c1.clone(), c2.clone()]).unwrap();
        assert_eq!((m.n_ads(), m.n_items()), (2, 5));
        assert_eq!(m.ads(), ["a1", "a2"]);
        let keys: Vec<&str> = m.items().iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, ["climate", "coal", "llm_a", "llm_b", "natural_gas"]);
        assert!(m.items()[3].can_be_missing);
        assert!(!m.items()[2].can_be_missing);
        assert_eq!(m.get(0, 1), Response::Yes);
        assert_eq!(m.get(1, 3), Response::Missing);

        let swapped = assemble_matrix(&kvs, &[c2, c1.clone()]).unwrap();
        assert_eq!(swapped, m);

        let partial = col("llm_c", &[("a1", Response::Yes)]);
        let err = assemble_matrix(&kvs, &[partial]).unwrap_err();
        assert!(err.to_string().contains("a2"), "{err}");
    }
}

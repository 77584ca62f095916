//! Multilingual keyword matching.
//!
//! Patterns are compiled to case-insensitive, Unicode-aware regular
//! expressions anchored at word boundaries, except for languages flagged
//! `word_boundaries = false` (scripts written without spaces), where they
//! match as raw substrings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AdRecord;

/// The lexicon shipped with the crate.
pub const DEFAULT_LEXICON: &str = include_str!("../config/lexicon.toml");

const NO_BOUNDARY_LANGUAGES: [&str; 4] = ["zh", "ja", "th", "lo"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Literal,
    StemWildcard,
    Conjunction,
}

/// One configured term, before compilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexEntry {
    pub key: String,
    pub kind: PatternKind,
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default)]
    pub clauses: Vec<Vec<String>>,
    /// Whether the term is also an indicator item.
    #[serde(default)]
    pub item: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageConfig {
    pub tag: String,
    #[serde(default)]
    pub word_boundaries: Option<bool>,
    #[serde(default, rename = "term")]
    pub terms: Vec<LexEntry>,
    #[serde(default, rename = "electoral")]
    pub electoral: Vec<LexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconConfig {
    #[serde(default = "default_language")]
    pub default_language: String,
    #[serde(default, rename = "language")]
    pub languages: Vec<LanguageConfig>,
}

fn default_language() -> String {
    "en".to_string()
}

impl LexiconConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::parse("lexicon config", e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Any(Regex),
    /// Alternatives of clauses; each clause needs every regex to match.
    Clauses(Vec<Vec<Regex>>),
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Any(re) => re.is_match(text),
            Matcher::Clauses(clauses) => clauses.iter().any(|c| c.iter().all(|re| re.is_match(text))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledTerm {
    pub key: String,
    pub kind: PatternKind,
    pub item: bool,
    matcher: Matcher,
}

impl CompiledTerm {
    pub fn is_match(&self, text: &str) -> bool {
        self.matcher.is_match(text)
    }
}

/// Compiled terms for one language.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub language: String,
    pub word_boundaries: bool,
    pub terms: Vec<CompiledTerm>,
}

impl Lexicon {
    pub fn compile(language: &str, word_boundaries: bool, entries: &[LexEntry]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut terms = Vec::with_capacity(entries.len());
        for entry in entries {
            let err = |message: String| Error::Lexicon {
                key: entry.key.clone(),
                language: language.to_string(),
                message,
            };
            if entry.key.is_empty() {
                return Err(err("empty key".into()));
            }
            if !seen.insert(entry.key.as_str()) {
                return Err(err("duplicate key".into()));
            }
            let matcher = compile_entry(entry, word_boundaries).map_err(err)?;
            terms.push(CompiledTerm {
                key: entry.key.clone(),
                kind: entry.kind,
                item: entry.item,
                matcher,
            });
        }
        Ok(Lexicon {
            language: language.to_string(),
            word_boundaries,
            terms,
        })
    }

    /// Bits for this lexicon's indicator items.
    pub fn match_keywords(&self, text: &str) -> BTreeMap<String, bool> {
        self.terms
            .iter()
            .filter(|t| t.item)
            .map(|t| (t.key.clone(), t.is_match(text)))
            .collect()
    }

    pub fn any_match(&self, text: &str) -> bool {
        self.terms.iter().any(|t| t.is_match(text))
    }
}

fn compile_entry(entry: &LexEntry, word_boundaries: bool) -> std::result::Result<Matcher, String> {
    match entry.kind {
        PatternKind::Literal | PatternKind::StemWildcard => {
            if entry.patterns.is_empty() {
                return Err("no patterns".into());
            }
            let mut alts = Vec::new();
            for p in &entry.patterns {
                let (body, wildcard) = translate_pattern(p)?;
                if entry.kind == PatternKind::StemWildcard && !wildcard {
                    return Err(format!("stem_wildcard pattern {p:?} must end in `*`"));
                }
                if entry.kind == PatternKind::Literal && wildcard {
                    return Err(format!("literal pattern {p:?} ends in a wildcard; use kind = \"stem_wildcard\""));
                }
                alts.push(anchor(&body, p, wildcard, word_boundaries));
            }
            build_regex(&alts).map(Matcher::Any)
        }
        PatternKind::Conjunction => {
            if entry.clauses.is_empty() {
                return Err("conjunction needs at least one clause".into());
            }
            let mut clauses = Vec::new();
            for clause in &entry.clauses {
                if clause.len() < 2 {
                    return Err("each conjunction clause needs at least two stems".into());
                }
                let mut res = Vec::new();
                for stem in clause {
                    let (body, wildcard) = translate_pattern(stem)?;
                    res.push(build_regex(&[anchor(&body, stem, wildcard, word_boundaries)])?);
                }
                clauses.push(res);
            }
            Ok(Matcher::Clauses(clauses))
        }
    }
}

/// Converts pattern syntax to a regex body. Returns the body and whether the
/// pattern ended in an unescaped wildcard.
fn translate_pattern(p: &str) -> std::result::Result<(String, bool), String> {
    let mut body = String::new();
    let mut chars = p.trim().chars().peekable();
    let mut wildcard = false;
    let mut in_space = false;
    while let Some(c) = chars.next() {
        if wildcard {
            return Err(format!("wildcard must be the last character in {p:?}"));
        }
        match c {
            '\\' => {
                let next = chars.next().ok_or_else(|| format!("unbalanced escape at end of {p:?}"))?;
                body.push_str(&regex::escape(&next.to_string()));
                in_space = false;
            }
            '*' => wildcard = true,
            c if c.is_whitespace() => {
                if !in_space {
                    body.push_str(r"\s+");
                }
                in_space = true;
            }
            c => {
                body.push_str(&regex::escape(&c.to_string()));
                in_space = false;
            }
        }
    }
    if body.is_empty() {
        return Err(format!("empty pattern {p:?}"));
    }
    Ok((body, wildcard))
}

fn anchor(body: &str, source: &str, wildcard: bool, word_boundaries: bool) -> String {
    if !word_boundaries {
        return body.to_string();
    }
    let src = source.trim().trim_end_matches('*');
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut out = String::new();
    if is_word(src.chars().next()) {
        out.push_str(r"\b");
    }
    out.push_str(body);
    if wildcard {
        out.push_str(r"\w*");
    } else if is_word(src.chars().last()) {
        out.push_str(r"\b");
    }
    out
}

fn build_regex(alts: &[String]) -> std::result::Result<Regex, String> {
    Regex::new(&format!("(?i)(?:{})", alts.join("|"))).map_err(|e| e.to_string())
}

/// Per-ad bits over the union of item keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordVector {
    pub ad_id: String,
    pub bits: BTreeMap<String, bool>,
}

impl KeywordVector {
    pub fn any(&self) -> bool {
        self.bits.values().any(|b| *b)
    }
}

/// All compiled lexicons plus the electoral exclusion lists.
#[derive(Debug)]
pub struct LexiconSet {
    pub default_language: String,
    relevance: BTreeMap<String, Lexicon>,
    electoral: BTreeMap<String, Lexicon>,
    item_keys: Vec<String>,
    warned: Mutex<BTreeSet<String>>,
}

/// Compiles every language block of a lexicon config.
pub fn compile_lexicon(config: &LexiconConfig) -> Result<LexiconSet> {
    let mut relevance = BTreeMap::new();
    let mut electoral = BTreeMap::new();
    let mut item_keys = BTreeSet::new();
    for lang in &config.languages {
        let tag = primary_subtag(&lang.tag);
        let boundaries = lang
            .word_boundaries
            .unwrap_or(!NO_BOUNDARY_LANGUAGES.contains(&tag.as_str()));
        if relevance.contains_key(&tag) {
            return Err(Error::Lexicon {
                key: String::new(),
                language: tag,
                message: "language listed twice".into(),
            });
        }
        let lex = Lexicon::compile(&tag, boundaries, &lang.terms)?;
        item_keys.extend(lex.terms.iter().filter(|t| t.item).map(|t| t.key.clone()));
        relevance.insert(tag.clone(), lex);
        electoral.insert(tag.clone(), Lexicon::compile(&tag, boundaries, &lang.electoral)?);
    }
    Ok(LexiconSet {
        default_language: primary_subtag(&config.default_language),
        relevance,
        electoral,
        item_keys: item_keys.into_iter().collect(),
        warned: Mutex::new(BTreeSet::new()),
    })
}

fn primary_subtag(tag: &str) -> String {
    tag.split(['-', '_']).next().unwrap_or("").trim().to_lowercase()
}

impl LexiconSet {
    pub fn shipped() -> Self {
        compile_lexicon(&LexiconConfig::shipped()).expect("shipped lexicon compiles")
    }

    /// Sorted union of indicator keys across languages.
    pub fn item_keys(&self) -> &[String] {
        &self.item_keys
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.relevance.keys().map(String::as_str)
    }

    fn resolve<'a>(&'a self, map: &'a BTreeMap<String, Lexicon>, language: &str) -> Option<&'a Lexicon> {
        let tag = primary_subtag(language);
        if let Some(l) = map.get(&tag) {
            return Some(l);
        }
        let mut warned = self.warned.lock().unwrap_or_else(|e| e.into_inner());
        if warned.insert(tag.clone()) {
            log::warn!(
                "no lexicon for language {tag:?}; falling back to {:?}",
                self.default_language
            );
        }
        map.get(&self.default_language)
    }

    /// Lexicon used for an ad language (falls back to the default language).
    pub fn lexicon_for(&self, language: &str) -> Option<&Lexicon> {
        self.resolve(&self.relevance, language)
    }

    pub fn match_keywords(&self, ad_id: &str, text: &str, language: &str) -> KeywordVector {
        let mut bits: BTreeMap<String, bool> = self.item_keys.iter().map(|k| (k.clone(), false)).collect();
        if let Some(lex) = self.lexicon_for(language) {
            for (k, v) in lex.match_keywords(text) {
                bits.insert(k, v);
            }
        }
        KeywordVector {
            ad_id: ad_id.to_string(),
            bits,
        }
    }

    pub fn keyword_vector(&self, ad: &AdRecord) -> KeywordVector {
        self.match_keywords(&ad.ad_id, &ad.text, &ad.language)
    }
}

/// True iff any relevance term matches the ad text.
pub fn climate_filter(ad: &AdRecord, lexicons: &LexiconSet) -> bool {
    lexicons.lexicon_for(&ad.language).is_some_and(|l| l.any_match(&ad.text))
}

/// True iff the ad should be excluded as electoral content.
pub fn electoral_filter(ad: &AdRecord, lexicons: &LexiconSet) -> bool {
    lexicons
        .resolve(&lexicons.electoral, &ad.language)
        .is_some_and(|l| l.any_match(&ad.text))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordCounts {
    /// `(key, number of ads with bit = 1)`, sorted by key.
    pub rows: Vec<(String, usize)>,
    pub any_keywords: usize,
}

pub fn keyword_count_table(corpus: &[AdRecord], lexicons: &LexiconSet) -> KeywordCounts {
    let vectors: Vec<KeywordVector> = corpus.iter().map(|ad| lexicons.keyword_vector(ad)).collect();
    count_vectors(lexicons.item_keys(), &vectors)
}

pub fn count_vectors(keys: &[String], vectors: &[KeywordVector]) -> KeywordCounts {
    let mut counts: BTreeMap<&str, usize> = keys.iter().map(|k| (k.as_str(), 0)).collect();
    let mut any = 0;
    for v in vectors {
        for (k, bit) in &v.bits {
            if *bit {
                *counts.entry(k.as_str()).or_default() += 1;
            }
        }
        any += usize::from(v.any());
    }
    KeywordCounts {
        rows: counts.into_iter().map(|(k, n)| (k.to_string(), n)).collect(),
        any_keywords: any,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Kept,
    NotClimate,
    Electoral,
}

impl FilterOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterOutcome::Kept => "kept",
            FilterOutcome::NotClimate => "not_climate",
            FilterOutcome::Electoral => "electoral",
        }
    }
}

/// Relevance filter followed by electoral exclusion.
pub fn screen(ad: &AdRecord, lexicons: &LexiconSet) -> FilterOutcome {
    if !climate_filter(ad, lexicons) {
        FilterOutcome::NotClimate
    } else if electoral_filter(ad, lexicons) {
        FilterOutcome::Electoral
    } else {
        FilterOutcome::Kept
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, kind: PatternKind, patterns: &[&str]) -> LexEntry {
        LexEntry {
            key: key.into(),
            kind,
            patterns: patterns.iter().map(|s| s.to_string()).collect(),
            clauses: vec![],
            item: true,
        }
    }

    #[test]
    fn stem_wildcard_matches_inflections() {
        let lex = Lexicon::compile("en", true, &[entry("climate", PatternKind::StemWildcard, &["climat*"])]).unwrap();
        assert!(lex.any_match("Climate action now"));
        assert!(lex.any_match("a climatic shift"));
        assert!(!lex.any_match("acclimatise"));
    }

    #[test]
    fn empty_lexicon_never_matches() {
        let set = compile_lexicon(&LexiconConfig {
            default_language: "en".into(),
            languages: vec![],
        })
        .unwrap();
        let v = set.match_keywords("a", "climate coal", "en");
        assert!(v.bits.is_empty());
        assert!(!v.any());
        assert!(!climate_filter(&AdRecord::new("a", "p", "climate"), &set));
    }

    #[test]
    fn unbalanced_escape_names_key() {
        let err = Lexicon::compile("en", true, &[entry("broken", PatternKind::Literal, &["coal\\"])]).unwrap_err();
        match err {
            Error::Lexicon { key, language, message } => {
                assert_eq!(key, "broken");
                assert_eq!(language, "en");
                assert!(message.contains("unbalanced escape"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn malformed_entries_rejected() {
        assert!(Lexicon::compile("en", true, &[entry("x", PatternKind::StemWildcard, &["climat"])]).is_err());
        assert!(Lexicon::compile("en", true, &[entry("x", PatternKind::Literal, &["cl*imat"])]).is_err());
        assert!(Lexicon::compile("en", true, &[entry("x", PatternKind::Literal, &[])]).is_err());
        let mut conj = entry("ice", PatternKind::Conjunction, &[]);
        conj.clauses = vec![vec!["icecap*".into()]];
        assert!(Lexicon::compile("en", true, &[conj]).is_err());
        let dup = [entry("a", PatternKind::Literal, &["x"]), entry("a", PatternKind::Literal, &["y"])];
        assert!(Lexicon::compile("en", true, &dup).is_err());
    }

    #[test]
    fn escaped_star_is_literal() {
        let lex = Lexicon::compile("en", true, &[entry("star", PatternKind::Literal, &["co2\\*"])]).unwrap();
        assert!(lex.any_match("the co2* footnote"));
        assert!(!lex.any_match("co2 levels"));
    }

    #[test]
    fn shipped_lexicon_examples() {
        let set = LexiconSet::shipped();
        let v = set.match_keywords("x", "Join a group of oil and natural gas lovin' Texans!", "en");
        assert!(v.bits["natural_gas"]);
        assert!(!v.bits["fossil_fuel"]);
        assert!(!v.bits["climate"]);

        assert!(set.match_keywords("x", "icecaps are melting fast", "en").bits["icecap_melt_flood"]);
        assert!(!set.match_keywords("x", "icecaps are huge", "en").bits["icecap_melt_flood"]);
        assert!(set.match_keywords("x", "the icecap will flood the coast", "en").bits["icecap_melt_flood"]);

        assert!(!set.match_keywords("x", "grill with charcoal", "en").bits["coal"]);
        assert!(set.match_keywords("x", "Coal country", "en").bits["coal"]);
        assert!(set.match_keywords("x", "end FOSSIL  FUELS", "en").bits["fossil_fuel"]);
    }

    #[test]
    fn unknown_language_falls_back_to_english() {
        let set = LexiconSet::shipped();
        let v = set.match_keywords("x", "climate change", "sw");
        assert!(v.bits["climate"]);
        let v = set.match_keywords("x", "Klimaschutz jetzt", "de-DE");
        assert!(v.bits["climate"]);
    }

    #[test]
    fn substring_matching_without_boundaries() {
        let set = LexiconSet::shipped();
        let v = set.match_keywords("x", "应对气候变化", "zh-CN");
        assert!(v.bits["climate"]);
    }

    #[test]
    fn relevance_and_electoral() {
        let set = LexiconSet::shipped();
        assert!(climate_filter(&AdRecord::new("a", "p", "global warming is real"), &set));
        assert!(!climate_filter(&AdRecord::new("a", "p", "buy our shoes"), &set));
        assert!(electoral_filter(&AdRecord::new("a", "p", "Vote Smith for Senate on Nov 5"), &set));
        assert!(!electoral_filter(&AdRecord::new("a", "p", "Natural gas keeps energy affordable"), &set));
    }

    #[test]
    fn count_table_set_semantics() {
        let set = LexiconSet::shipped();
        let corpus = vec![
            AdRecord::new("a", "p", "coal power"),
            AdRecord::new("b", "p", "coal and climate"),
            AdRecord::new("c", "p", "nothing here"),
        ];
        let t = keyword_count_table(&corpus, &set);
        let get = |k: &str| t.rows.iter().find(|(key, _)| key == k).unwrap().1;
        assert_eq!(get("coal"), 2);
        assert_eq!(get("climate"), 1);
        assert_eq!(t.any_keywords, 2);

        let empty = keyword_count_table(&[], &set);
        assert!(empty.rows.iter().all(|(_, n)| *n == 0));
        assert_eq!(empty.any_keywords, 0);
    }
}

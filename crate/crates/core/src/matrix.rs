//! The ads × items ternary indicator matrix and its text format.
//!
//! ```text
//! greenwash-matrix	1
//! items	3
//! climate	keyword	0
//! llm_llama	llm	1
//! stance_debate	stance	0
//! ads	2
//! a1	10.
//! a2	011
//! ```
//!
//! Each ad row holds one symbol per item: `1`, `0`, or `.` for missing.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "greenwash-matrix";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Response {
    No = 0,
    Yes = 1,
    Missing = 2,
}

impl Response {
    pub fn symbol(self) -> char {
        match self {
            Response::No => '0',
            Response::Yes => '1',
            Response::Missing => '.',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '0' => Some(Response::No),
            '1' => Some(Response::Yes),
            '.' => Some(Response::Missing),
            _ => None,
        }
    }

    pub fn from_bool(b: bool) -> Self {
        if b {
            Response::Yes
        } else {
            Response::No
        }
    }

    pub fn is_missing(self) -> bool {
        self == Response::Missing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    Keyword,
    Llm,
    Stance,
}

impl ItemSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemSource::Keyword => "keyword",
            ItemSource::Llm => "llm",
            ItemSource::Stance => "stance",
        }
    }
}

impl std::str::FromStr for ItemSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "keyword" => Ok(ItemSource::Keyword),
            "llm" => Ok(ItemSource::Llm),
            "stance" => Ok(ItemSource::Stance),
            other => Err(format!("unknown item source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDescriptor {
    pub key: String,
    pub source: ItemSource,
    pub can_be_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorMatrix {
    ads: Vec<String>,
    items: Vec<ItemDescriptor>,
    /// Row-major `ads × items`.
    cells: Vec<Response>,
}

impl IndicatorMatrix {
    pub fn new(ads: Vec<String>, items: Vec<ItemDescriptor>, cells: Vec<Response>) -> Result<Self> {
        if cells.len() != ads.len() * items.len() {
            return Err(Error::Dimension {
                expected: ads.len() * items.len(),
                found: cells.len(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ads.iter().find(|a| !seen.insert(a.as_str())) {
            return Err(Error::DuplicateAdId(dup.clone()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|i| !seen.insert(i.key.as_str())) {
            return Err(Error::Matrix(format!("duplicate item key {}", dup.key)));
        }
        let n_items = items.len();
        for (j, item) in items.iter().enumerate() {
            if item.source == ItemSource::Keyword && item.can_be_missing {
                return Err(Error::Matrix(format!("keyword item {} cannot be missable", item.key)));
            }
            if !item.can_be_missing {
                if let Some(i) = (0..ads.len()).find(|&i| cells[i * n_items + j].is_missing()) {
                    return Err(Error::Matrix(format!(
                        "item {} is not missable but ad {} has a missing cell",
                        item.key, ads[i]
                    )));
                }
            }
        }
        Ok(IndicatorMatrix { ads, items, cells })
    }

    pub fn n_ads(&self) -> usize {
        self.ads.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn ads(&self) -> &[String] {
        &self.ads
    }

    pub fn items(&self) -> &[ItemDescriptor] {
        &self.items
    }

    pub fn item_index(&self, key: &str) -> Option<usize> {
        self.items.iter().position(|i| i.key == key)
    }

    #[inline]
    pub fn get(&self, ad: usize, item: usize) -> Response {
        self.cells[ad * self.items.len() + item]
    }

    #[inline]
    pub fn row(&self, ad: usize) -> &[Response] {
        let j = self.items.len();
        &self.cells[ad * j..(ad + 1) * j]
    }

    pub fn n_missing(&self) -> usize {
        self.cells.iter().filter(|c| c.is_missing()).count()
    }

    /// Checks the minimum shape needed for model fitting.
    pub fn check_fittable(&self) -> Result<()> {
        if self.n_ads() < 2 || self.n_items() < 2 {
            return Err(Error::Matrix(format!(
                "need at least 2 ads and 2 items, got {} × {}",
                self.n_ads(),
                self.n_items()
            )));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<matrix stream>", e);
        writeln!(w, "{MAGIC}\t{VERSION}").map_err(io)?;
        writeln!(w, "items\t{}", self.items.len()).map_err(io)?;
        for it in &self.items {
            writeln!(w, "{}\t{}\t{}", it.key, it.source.as_str(), u8::from(it.can_be_missing)).map_err(io)?;
        }
        writeln!(w, "ads\t{}", self.ads.len()).map_err(io)?;
        let mut line = String::with_capacity(self.items.len());
        for (i, ad) in self.ads.iter().enumerate() {
            line.clear();
            line.extend(self.row(i).iter().map(|c| c.symbol()));
            writeln!(w, "{ad}\t{line}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let ctx = |n: usize, m: &str| Error::parse(format!("matrix line {n}"), m);
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(Error::io("<matrix stream>", e)),
                None => Err(Error::parse("matrix", format!("unexpected end of input, expected {what}"))),
            }
        };

        let (n, header) = next("header")?;
        if header != format!("{MAGIC}\t{VERSION}") {
            return Err(ctx(n, "bad header"));
        }
        let count = |line: &str, n: usize, label: &str| -> Result<usize> {
            line.strip_prefix(label)
                .and_then(|s| s.strip_prefix('\t'))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ctx(n, &format!("expected `{label}\\t<count>`")))
        };
        let (n, l) = next("item count")?;
        let n_items = count(&l, n, "items")?;
        let mut items = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            let (n, l) = next("item descriptor")?;
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(ctx(n, "item descriptor needs key, source, can_be_missing"));
            }
            items.push(ItemDescriptor {
                key: f[0].to_string(),
                source: f[1].parse().map_err(|e: String| ctx(n, &e))?,
                can_be_missing: match f[2] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(ctx(n, "can_be_missing must be 0 or 1")),
                },
            });
        }
        let (n, l) = next("ad count")?;
        let n_ads = count(&l, n, "ads")?;
        let mut ads = Vec::with_capacity(n_ads);
        let mut cells = Vec::with_capacity(n_ads * n_items);
        for _ in 0..n_ads {
            let (n, l) = next("ad row")?;
            let (id, symbols) = l.split_once('\t').ok_or_else(|| ctx(n, "ad row needs id and symbols"))?;
            let before = cells.len();
            for c in symbols.chars() {
                cells.push(Response::from_symbol(c).ok_or_else(|| ctx(n, &format!("bad symbol {c:?}")))?);
            }
            if cells.len() - before != n_items {
                return Err(ctx(n, &format!("expected {n_items} symbols")));
            }
            ads.push(id.to_string());
        }
        IndicatorMatrix::new(ads, items, cells)
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

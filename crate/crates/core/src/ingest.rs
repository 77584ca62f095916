//! Parsing of ad exports, the entity registry and covariate tables.
//!
//! Ads arrive as line-delimited JSON, one object per line. Field names are
//! mapped through an [`AdSchema`] so exports with different column names can
//! be read without preprocessing. Malformed lines are reported, not dropped:
//! for every call, `records.len() + errors.len()` equals the number of
//! non-blank input lines.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";
const SHARE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImpressionKind {
    /// Fractions in `[0, 1]`; one dimension sums to at most one.
    #[default]
    Share,
    /// Non-negative impression counts.
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionCell {
    pub group_key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdRecord {
    pub ad_id: String,
    pub page_id: String,
    pub page_name: String,
    pub funder: String,
    pub text: String,
    pub language: String,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    /// Breakdown dimension (`country`, `region`, `age`, ...) to cells.
    pub impressions: BTreeMap<String, Vec<ImpressionCell>>,
    pub impressions_total: Option<f64>,
    pub impression_kind: ImpressionKind,
}

impl AdRecord {
    pub fn new(ad_id: impl Into<String>, page_id: impl Into<String>, text: impl Into<String>) -> Self {
        AdRecord {
            ad_id: ad_id.into(),
            page_id: page_id.into(),
            page_name: String::new(),
            funder: String::new(),
            text: text.into(),
            language: "en".to_string(),
            start_date: None,
            end_date: None,
            impressions: BTreeMap::new(),
            impressions_total: None,
            impression_kind: ImpressionKind::Share,
        }
    }

    /// Aggregation weights for one breakdown dimension.
    ///
    /// Counts are used as-is. Shares are multiplied by `impressions_total`
    /// when the export carries one, otherwise the share itself is the weight.
    pub fn weights(&self, dimension: &str) -> impl Iterator<Item = (&str, f64)> + '_ {
        let scale = match (self.impression_kind, self.impressions_total) {
            (ImpressionKind::Share, Some(total)) => total,
            _ => 1.0,
        };
        self.impressions
            .get(dimension)
            .into_iter()
            .flatten()
            .map(move |c| (c.group_key.as_str(), c.value * scale))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.ad_id.is_empty() {
            return Err("empty ad_id".into());
        }
        if let (Some(s), Some(e)) = (self.start_date, self.end_date) {
            if e < s {
                return Err(format!("end_date {e} precedes start_date {s}"));
            }
        }
        if let Some(t) = self.impressions_total {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("impressions_total {t} must be finite and non-negative"));
            }
        }
        for (dim, cells) in &self.impressions {
            let mut sum = 0.0;
            for c in cells {
                if !(c.value.is_finite() && c.value >= 0.0) {
                    return Err(format!("impression value {} in {dim}/{} must be non-negative", c.value, c.group_key));
                }
                sum += c.value;
            }
            if self.impression_kind == ImpressionKind::Share && sum > 1.0 + SHARE_TOLERANCE {
                return Err(format!("impression shares in dimension {dim} sum to {sum} > 1"));
            }
        }
        Ok(())
    }
}

/// Source field names for each [`AdRecord`] field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdSchema {
    pub ad_id: String,
    pub page_id: String,
    pub page_name: String,
    pub funder: String,
    pub text: String,
    pub language: String,
    pub start_date: String,
    pub end_date: String,
    pub impressions: String,
    pub impressions_total: String,
    pub impression_kind: ImpressionKind,
}

impl Default for AdSchema {
    fn default() -> Self {
        AdSchema {
            ad_id: "ad_id".into(),
            page_id: "page_id".into(),
            page_name: "page_name".into(),
            funder: "funder".into(),
            text: "text".into(),
            language: "language".into(),
            start_date: "start_date".into(),
            end_date: "end_date".into(),
            impressions: "impressions".into(),
            impressions_total: "impressions_total".into(),
            impression_kind: ImpressionKind::Share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedAds {
    pub records: Vec<AdRecord>,
    pub errors: Vec<LineError>,
}

/// Parses line-delimited JSON ads.
///
/// Returns a hard error on a duplicated `ad_id`; every other problem is
/// recorded as a [`LineError`].
pub fn parse_ads<R: BufRead>(reader: R, schema: &AdSchema) -> Result<ParsedAds> {
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<ads stream>", e))?;
        if !line.trim().is_empty() {
            lines.push((idx + 1, line));
        }
    }

    let parsed: Vec<(usize, std::result::Result<AdRecord, String>)> = lines
        .par_iter()
        .map(|(n, line)| (*n, parse_ad_line(line, schema)))
        .collect();

    let mut out = ParsedAds::default();
    let mut seen = HashSet::new();
    for (line, res) in parsed {
        match res {
            Ok(rec) => {
                if !seen.insert(rec.ad_id.clone()) {
                    return Err(Error::DuplicateAdId(rec.ad_id));
                }
                out.records.push(rec);
            }
            Err(message) => out.errors.push(LineError { line, message }),
        }
    }
    Ok(out)
}

fn parse_ad_line(line: &str, schema: &AdSchema) -> std::result::Result<AdRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let obj = value.as_object().ok_or("record is not an object")?;

    let required = |field: &str| -> std::result::Result<String, String> {
        match obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(format!("field {field} is not a string")),
            None => Err(format!("missing mandatory field {field}")),
        }
    };
    let optional = |field: &str| -> std::result::Result<Option<String>, String> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(_) => Err(format!("field {field} is not a string")),
        }
    };
    let date = |field: &str| -> std::result::Result<Option<NaiveDate>, String> {
        optional(field)?
            .filter(|s| !s.is_empty())
            .map(|s| NaiveDate::parse_from_str(&s, DATE_FORMAT).map_err(|e| format!("bad date in {field}: {e}")))
            .transpose()
    };

    let rec = AdRecord {
        ad_id: required(&schema.ad_id)?,
        page_id: required(&schema.page_id)?,
        text: required(&schema.text)?,
        page_name: optional(&schema.page_name)?.unwrap_or_default(),
        funder: optional(&schema.funder)?.unwrap_or_default(),
        language: optional(&schema.language)?
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "en".to_string()),
        start_date: date(&schema.start_date)?,
        end_date: date(&schema.end_date)?,
        impressions: match obj.get(&schema.impressions) {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(v) => parse_impressions(v)?,
        },
        impressions_total: match obj.get(&schema.impressions_total) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or("impressions_total is not a number")?),
        },
        impression_kind: schema.impression_kind,
    };
    rec.validate()?;
    Ok(rec)
}

fn parse_impressions(v: &Value) -> std::result::Result<BTreeMap<String, Vec<ImpressionCell>>, String> {
    let dims = v.as_object().ok_or("impressions must map dimension names to arrays")?;
    let mut out = BTreeMap::new();
    for (dim, cells) in dims {
        let cells: Vec<ImpressionCell> =
            serde_json::from_value(cells.clone()).map_err(|e| format!("impressions.{dim}: {e}"))?;
        out.insert(dim.clone(), cells);
    }
    Ok(out)
}

/// Serializes records in the default schema, one JSON object per line.
pub fn write_ads<W: Write>(mut writer: W, records: &[AdRecord]) -> Result<()> {
    for rec in records {
        let mut obj = Map::new();
        obj.insert("ad_id".into(), Value::String(rec.ad_id.clone()));
        obj.insert("page_id".into(), Value::String(rec.page_id.clone()));
        obj.insert("page_name".into(), Value::String(rec.page_name.clone()));
        obj.insert("funder".into(), Value::String(rec.funder.clone()));
        obj.insert("text".into(), Value::String(rec.text.clone()));
        obj.insert("language".into(), Value::String(rec.language.clone()));
        if let Some(d) = rec.start_date {
            obj.insert("start_date".into(), Value::String(d.format(DATE_FORMAT).to_string()));
        }
        if let Some(d) = rec.end_date {
            obj.insert("end_date".into(), Value::String(d.format(DATE_FORMAT).to_string()));
        }
        if !rec.impressions.is_empty() {
            obj.insert(
                "impressions".into(),
                serde_json::to_value(&rec.impressions).map_err(|e| Error::parse("ads", e))?,
            );
        }
        if let Some(t) = rec.impressions_total {
            obj.insert("impressions_total".into(), serde_json::json!(t));
        }
        let line = serde_json::to_string(&Value::Object(obj)).map_err(|e| Error::parse("ads", e))?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<ads stream>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    OilCompany,
    Subsidiary,
    ThinkTank,
    TradeAssociation,
    InterestGroup,
    Other,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::OilCompany => "oil_company",
            EntityType::Subsidiary => "subsidiary",
            EntityType::ThinkTank => "think_tank",
            EntityType::TradeAssociation => "trade_association",
            EntityType::InterestGroup => "interest_group",
            EntityType::Other => "other",
        }
    }
}

impl std::str::FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim() {
            "oil_company" => EntityType::OilCompany,
            "subsidiary" => EntityType::Subsidiary,
            "think_tank" => EntityType::ThinkTank,
            "trade_association" => EntityType::TradeAssociation,
            "interest_group" => EntityType::InterestGroup,
            "other" => EntityType::Other,
            other => return Err(format!("unknown entity_type {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub page_id: String,
    pub entity_name: String,
    pub entity_type: EntityType,
}

/// Pages with a known fossil-fuel identity, keyed by `page_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl EntityRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, page_id: &str) -> Option<&RegistryEntry> {
        self.entries.get(page_id)
    }

    pub fn contains(&self, page_id: &str) -> bool {
        self.entries.contains_key(page_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn insert(&mut self, entry: RegistryEntry) -> Result<()> {
        if self.entries.contains_key(&entry.page_id) {
            return Err(Error::Registry {
                row: self.entries.len() + 1,
                message: format!("duplicate page_id {}", entry.page_id),
            });
        }
        self.entries.insert(entry.page_id.clone(), entry);
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let ctx = |e: csv::Error| Error::parse("registry", e);
        w.write_record(["page_id", "name", "type"]).map_err(ctx)?;
        for e in self.entries.values() {
            w.write_record([e.page_id.as_str(), e.entity_name.as_str(), e.entity_type.as_str()])
                .map_err(ctx)?;
        }
        w.flush().map_err(|e| Error::io("<registry stream>", e))
    }
}

/// Reads a `page_id,name,type` table (header required).
pub fn parse_registry<R: Read>(reader: R) -> Result<EntityRegistry> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("registry header", e))?.clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h))
            .ok_or_else(|| Error::parse("registry header", format!("missing column {}", names[0])))
    };
    let (id_col, name_col, type_col) = (
        col(&["page_id"])?,
        col(&["name", "entity_name"])?,
        col(&["type", "entity_type"])?,
    );

    let mut registry = EntityRegistry::default();
    for (idx, row) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Registry {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let page_id = field(id_col);
        if page_id.is_empty() {
            return Err(Error::Registry {
                row: row_no,
                message: "empty page_id".into(),
            });
        }
        let entity_type = field(type_col)
            .parse::<EntityType>()
            .map_err(|message| Error::Registry { row: row_no, message })?;
        if registry.contains(&page_id) {
            return Err(Error::Registry {
                row: row_no,
                message: format!("duplicate page_id {page_id}"),
            });
        }
        registry.insert(RegistryEntry {
            page_id,
            entity_name: field(name_col),
            entity_type,
        })?;
    }
    Ok(registry)
}

pub const MISSING_MARKERS: [&str; 2] = ["", "NA"];

/// Unit-level numeric covariates with explicit missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub unit_ids: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, `unit_ids.len() × columns.len()`.
    values: Vec<Option<f64>>,
}

impl CovariateTable {
    pub fn new(unit_ids: Vec<String>, columns: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != unit_ids.len() * columns.len() {
            return Err(Error::Dimension {
                expected: unit_ids.len() * columns.len(),
                found: values.len(),
            });
        }
        Ok(CovariateTable {
            unit_ids,
            columns,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.columns.len() + col]
    }

    /// All non-missing values of a column, in row order.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.column_index(name)?;
        Some((0..self.n_rows()).map(|r| self.value(r, c)).collect())
    }
}

/// Reads a delimited covariate table. The first column holds unit ids.
///
/// Only `expected_columns` are parsed as numbers (all remaining columns when
/// the list is empty); `""` and `"NA"` mark missing cells.
pub fn parse_covariates<R: Read>(reader: R, expected_columns: &[&str], delimiter: u8) -> Result<CovariateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("covariate header", e))?.clone();
    if headers.is_empty() {
        return Err(Error::parse("covariate header", "empty header"));
    }
    let wanted: Vec<(usize, String)> = if expected_columns.is_empty() {
        headers.iter().enumerate().skip(1).map(|(i, h)| (i, h.to_string())).collect()
    } else {
        expected_columns
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == *name)
                    .map(|i| (i, name.to_string()))
                    .ok_or_else(|| Error::parse("covariate header", format!("missing expected column {name}")))
            })
            .collect::<Result<_>>()?
    };

    let mut unit_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Covariate {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        let unit = row.get(0).unwrap_or("").to_string();
        if !seen.insert(unit.clone()) {
            return Err(Error::Covariate {
                row: row_no,
                column: headers[0].to_string(),
                message: format!("duplicate unit_id {unit}"),
            });
        }
        for (i, name) in &wanted {
            let cell = row.get(*i).unwrap_or("");
            if MISSING_MARKERS.contains(&cell) {
                values.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Covariate {
                row: row_no,
                column: name.clone(),
                message: format!("non-numeric value {cell:?}"),
            })?;
            values.push(Some(v));
        }
        unit_ids.push(unit);
    }
    CovariateTable::new(unit_ids, wanted.into_iter().map(|(_, n)| n).collect(), values)
}

//! Impression-weighted group scores and classification shares.
//!
//! Weights come from [`AdRecord::weights`]: counts as given, shares scaled by
//! the ad's impression total when known. Groups whose weight sums to zero are
//! dropped. Sums run over ads in input order, so results do not depend on
//! thread count.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AdRecord;
use crate::irt::Classification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group_key: String,
    pub weighted_mean: f64,
    pub total_weight: f64,
    pub n_ads: usize,
}

/// Impression-weighted shares of each classification in one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShares {
    pub group_key: String,
    pub greenwashing: f64,
    pub non_greenwashing: f64,
    pub unclassified: f64,
    pub total_weight: f64,
    pub n_ads: usize,
}

/// Positive weights per group, with the value each ad carries.
fn grouped<'a, T: Copy>(
    values: &HashMap<String, T>,
    ads: &'a [AdRecord],
    dimension: &str,
) -> Result<BTreeMap<&'a str, Vec<(T, f64)>>> {
    let mut groups: BTreeMap<&str, Vec<(T, f64)>> = BTreeMap::new();
    for ad in ads {
        for (group, w) in ad.weights(dimension) {
            if w <= 0.0 {
                continue;
            }
            let v = *values.get(&ad.ad_id).ok_or_else(|| Error::MissingScore(ad.ad_id.clone()))?;
            groups.entry(group).or_default().push((v, w));
        }
    }
    Ok(groups)
}

/// `Σ s_i w_ig / Σ w_ig` for each group `g` of `dimension`, sorted by key.
pub fn weighted_group_scores(scores: &HashMap<String, f64>, ads: &[AdRecord], dimension: &str) -> Result<Vec<GroupScore>> {
    let groups = grouped(scores, ads, dimension)?;
    Ok(groups
        .into_iter()
        .map(|(key, cells)| {
            let total: f64 = cells.iter().map(|(_, w)| w).sum();
            let num: f64 = cells.iter().map(|(s, w)| s * w).sum();
            GroupScore {
                group_key: key.to_string(),
                weighted_mean: num / total,
                total_weight: total,
                n_ads: cells.len(),
            }
        })
        .collect())
}

pub fn classification_shares(
    classes: &HashMap<String, Classification>,
    ads: &[AdRecord],
    dimension: &str,
) -> Result<Vec<ClassShares>> {
    let groups = grouped(classes, ads, dimension)?;
    Ok(groups
        .into_iter()
        .map(|(key, cells)| {
            let total: f64 = cells.iter().map(|(_, w)| w).sum();
            let share = |c: Classification| cells.iter().filter(|(k, _)| *k == c).map(|(_, w)| w).sum::<f64>() / total;
            ClassShares {
                group_key: key.to_string(),
                greenwashing: share(Classification::Greenwashing),
                non_greenwashing: share(Classification::NonGreenwashing),
                unclassified: share(Classification::Unclassified),
                total_weight: total,
                n_ads: cells.len(),
            }
        })
        .collect())
}

pub fn write_group_scores<W: Write>(dimension: &str, groups: &[GroupScore], mut w: W) -> std::io::Result<()> {
    writeln!(w, "dimension\tgroup_key\tweighted_mean\ttotal_weight\tn_ads")?;
    for g in groups {
        writeln!(w, "{dimension}\t{}\t{}\t{}\t{}", g.group_key, g.weighted_mean, g.total_weight, g.n_ads)?;
    }
    w.flush()
}

pub fn write_class_shares<W: Write>(dimension: &str, groups: &[ClassShares], mut w: W) -> std::io::Result<()> {
    writeln!(w, "dimension\tgroup_key\tgreenwashing\tnon_greenwashing\tunclassified\ttotal_weight\tn_ads")?;
    for g in groups {
        writeln!(
            w,
            "{dimension}\t{}\t{}\t{}\t{}\t{}\t{}",
            g.group_key, g.greenwashing, g.non_greenwashing, g.unclassified, g.total_weight, g.n_ads
        )?;
    }
    w.flush()
}

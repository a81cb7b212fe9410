use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};

/// First-level venue categories used as predictors. `Event` is excluded
/// because events are transient.
pub const POI_CATEGORIES: [&str; 9] = [
    "Arts & Entertainment",
    "College & University",
    "Food",
    "Nightlife Spot",
    "Outdoors & Recreation",
    "Professional & Other Places",
    "Residence",
    "Shop & Service",
    "Travel & Transport",
];

/// Shannon entropy (natural log) of category proportions. Empty areas and
/// zero-count categories contribute nothing.
pub fn venue_entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // a single category gives -0.0 from -(1 * ln 1)
    h + 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoiProfile {
    pub area_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub entropy: f64,
}

impl PoiProfile {
    pub fn new(area_id: impl Into<String>, counts: BTreeMap<String, u64>) -> Self {
        let values: Vec<u64> = counts.values().copied().collect();
        PoiProfile {
            area_id: area_id.into(),
            total: values.iter().sum(),
            entropy: venue_entropy(&values),
            counts,
        }
    }

    pub fn count(&self, category: &str) -> u64 {
        self.counts.get(category).copied().unwrap_or(0)
    }
}

/// Reads `area_id,category,count` rows into per-area profiles, dropping the
/// `Event` category. Repeated `(area, category)` rows are summed.
pub fn read_poi_csv<R: Read>(r: R) -> Result<Vec<PoiProfile>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut acc: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let (Some(area), Some(cat), Some(count)) = (row.get(0), row.get(1), row.get(2)) else {
            return Err(Error::invalid(format!(
                "PoI row {} has fewer than 3 fields",
                i + 2
            )));
        };
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("PoI row {}: bad count {count:?}", i + 2)))?;
        let cat = cat.trim();
        if cat.eq_ignore_ascii_case("event") {
            continue;
        }
        if !POI_CATEGORIES.contains(&cat) {
            log::warn!("PoI row {}: unknown category {cat:?}, kept as is", i + 2);
        }
        *acc.entry(area.trim().to_owned())
            .or_default()
            .entry(cat.to_owned())
            .or_default() += count;
    }
    Ok(acc
        .into_iter()
        .map(|(id, counts)| PoiProfile::new(id, counts))
        .collect())
}

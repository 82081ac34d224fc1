//! Bridge-inventory records: typed keys, parsing, and summary statistics.

mod parse;
mod profile;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

pub use parse::{parse_nbi, parse_nbi_file, write_delimited, ParsedNbi, RowReject};
pub use profile::{
    default_code_map, ColumnRef, FieldSpan, NbiColumns, NbiFormat, NbiProfile, DESIGN_LOAD_NAMES,
};

/// Longest structure number the inventory format allows.
pub const STRUCTURE_MAX_LEN: usize = 15;

/// Upper bound (exclusive) on a plausible load rating, metric tons.
pub const RATING_LIMIT_TONS: f64 = 200.0;

/// Width of the load-rating histogram bins, metric tons.
pub const HISTOGRAM_BIN_TONS: f64 = 5.0;

/// Two-digit numeric state code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StateCode(String);

impl StateCode {
    /// Accepts one or two decimal digits; a single digit is zero-padded.
    pub fn parse(raw: &str) -> Result<Self> {
        let t = raw.trim();
        let ok = !t.is_empty() && t.len() <= 2 && t.bytes().all(|b| b.is_ascii_digit());
        if !ok {
            return Err(domain_err(format!("invalid state code {raw:?}")));
        }
        Ok(StateCode(format!("{t:0>2}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for StateCode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s.len() != 2 {
            return Err(domain_err(format!(
                "state code {s:?} must have exactly 2 digits"
            )));
        }
        StateCode::parse(&s)
    }
}

impl From<StateCode> for String {
    fn from(s: StateCode) -> String {
        s.0
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Structure number as found in a file plus its join-key form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructureNumber {
    pub raw: String,
    pub canonical: String,
}

/// Uppercases, removes all whitespace, and strips leading zeros.
pub fn canonicalize(raw: &str) -> Result<StructureNumber> {
    if raw.trim().chars().count() > STRUCTURE_MAX_LEN {
        return Err(domain_err(format!(
            "structure number {raw:?} longer than {STRUCTURE_MAX_LEN} characters"
        )));
    }
    let canonical: String = raw
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_ascii_uppercase())
        .skip_while(|&c| c == '0')
        .collect();
    if canonical.is_empty() {
        return Err(Error::DegenerateKey(raw.to_string()));
    }
    Ok(StructureNumber {
        raw: raw.to_string(),
        canonical,
    })
}

/// Join key shared by inventory records and image manifests.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BridgeKey {
    pub state: StateCode,
    pub structure: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbiRecord {
    pub state: StateCode,
    pub structure: StructureNumber,
    /// Renumbered design-load class, 1..=12.
    pub design_load_class: Option<u8>,
    pub load_rating_tons: Option<f64>,
    pub raw_design_code: Option<String>,
}

impl NbiRecord {
    pub fn key(&self) -> BridgeKey {
        BridgeKey {
            state: self.state.clone(),
            structure: self.structure.canonical.clone(),
        }
    }

    pub fn design_load_name(&self) -> Option<&'static str> {
        self.design_load_class
            .map(|c| DESIGN_LOAD_NAMES[usize::from(c) - 1])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NbiFileStats {
    pub total_rows: usize,
    pub parsed_rows: usize,
    pub rows_missing_design_load: usize,
    pub rows_missing_rating: usize,
    pub reject_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower_tons: u32,
    pub upper_tons: u32,
    pub count: usize,
}

/// Record-level summary: stats, a 5-ton rating histogram, and design-class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbiSummary {
    pub stats: NbiFileStats,
    pub rating_histogram: Vec<HistogramBin>,
    pub design_class_counts: BTreeMap<u8, usize>,
}

/// Summarizes already-parsed records. The histogram runs contiguously from
/// 0 to the highest occupied bin and is empty when no rating is present.
pub fn nbi_stats(records: &[NbiRecord]) -> NbiSummary {
    let mut bins: Vec<usize> = Vec::new();
    let mut design_class_counts = BTreeMap::new();
    let mut stats = NbiFileStats {
        total_rows: records.len(),
        parsed_rows: records.len(),
        ..Default::default()
    };
    for r in records {
        match r.load_rating_tons {
            Some(t) => {
                let idx = (t / HISTOGRAM_BIN_TONS).floor() as usize;
                if bins.len() <= idx {
                    bins.resize(idx + 1, 0);
                }
                bins[idx] += 1;
            }
            None => stats.rows_missing_rating += 1,
        }
        match r.design_load_class {
            Some(c) => *design_class_counts.entry(c).or_insert(0) += 1,
            None => stats.rows_missing_design_load += 1,
        }
    }
    let width = HISTOGRAM_BIN_TONS as u32;
    let rating_histogram = bins
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower_tons: i as u32 * width,
            upper_tons: (i as u32 + 1) * width,
            count,
        })
        .collect();
    NbiSummary {
        stats,
        rating_histogram,
        design_class_counts,
    }
}

/// Writes records as newline-delimited JSON.
pub fn write_ndjson<W: Write>(mut out: W, records: &[NbiRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson(text: &str) -> Result<Vec<NbiRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

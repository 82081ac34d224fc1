use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loading names of the renumbered design-load classes 1..=12, in ascending order.
pub const DESIGN_LOAD_NAMES: [&str; 12] = [
    "H10",
    "H15",
    "H20",
    "HS15",
    "HS20",
    "HS20+Mod",
    "Pedestrian",
    "Railroad",
    "HL93",
    "HS25",
    ">HL93",
    "Other",
];

/// Inventory design-load codes (item 31) mapped onto the renumbered classes.
/// Code `0` (unknown) is deliberately absent and parses as a missing label.
pub fn default_code_map() -> BTreeMap<String, u8> {
    [
        ("1", 1),
        ("2", 2),
        ("4", 3),
        ("3", 4),
        ("5", 5),
        ("6", 6),
        ("7", 7),
        ("8", 8),
        ("A", 9),
        ("9", 10),
        ("B", 11),
        ("C", 12),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Column (delimited, by header name or 1-based position) or layout entry name (fixed width).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Position(usize),
    Name(String),
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NbiColumns {
    pub state: ColumnRef,
    pub structure: ColumnRef,
    pub design_load: ColumnRef,
    pub rating: ColumnRef,
}

/// One fixed-width field; `start` is a 1-based character column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpan {
    pub name: String,
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NbiFormat {
    Delimited { separator: char, has_header: bool },
    FixedWidth { layout: Vec<FieldSpan> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NbiProfile {
    pub format: NbiFormat,
    pub columns: NbiColumns,
    pub code_map: BTreeMap<String, u8>,
    /// Raw rating values are divided by this (e.g. 10 for implied-decimal fields).
    #[serde(default = "one")]
    pub rating_scale_divisor: f64,
}

fn one() -> f64 {
    1.0
}

impl NbiProfile {
    /// Comma-delimited national file, inventory rating (item 66).
    pub fn inventory() -> Self {
        Self::delimited_with_rating("INVENTORY_RATING_066")
    }

    /// Comma-delimited national file, operating rating (item 64).
    pub fn operating() -> Self {
        Self::delimited_with_rating("OPERATING_RATING_064")
    }

    fn delimited_with_rating(rating: &str) -> Self {
        NbiProfile {
            format: NbiFormat::Delimited {
                separator: ',',
                has_header: true,
            },
            columns: NbiColumns {
                state: "STATE_CODE_001".into(),
                structure: "STRUCTURE_NUMBER_008".into(),
                design_load: "DESIGN_LOAD_031".into(),
                rating: rating.into(),
            },
            code_map: default_code_map(),
            rating_scale_divisor: 1.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "inventory" => Some(Self::inventory()),
            "operating" => Some(Self::operating()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rating_scale_divisor.is_finite() && self.rating_scale_divisor > 0.0) {
            return Err(Error::Config(format!(
                "rating_scale_divisor must be positive, got {}",
                self.rating_scale_divisor
            )));
        }
        if let Some((code, class)) = self.code_map.iter().find(|(_, &c)| !(1..=12).contains(&c)) {
            return Err(Error::Config(format!(
                "code map sends {code:?} to class {class}, outside 1..=12"
            )));
        }
        match &self.format {
            NbiFormat::Delimited { separator, .. } => {
                if !separator.is_ascii() {
                    return Err(Error::Config(format!(
                        "separator {separator:?} is not ASCII"
                    )));
                }
            }
            NbiFormat::FixedWidth { layout } => {
                for span in layout {
                    if span.start == 0 || span.length == 0 {
                        return Err(Error::Config(format!(
                            "layout field {:?} needs start >= 1 and length >= 1",
                            span.name
                        )));
                    }
                }
                for col in [
                    &self.columns.state,
                    &self.columns.structure,
                    &self.columns.design_load,
                    &self.columns.rating,
                ] {
                    match col {
                        ColumnRef::Name(n) if layout.iter().any(|s| &s.name == n) => {}
                        other => {
                            return Err(Error::Config(format!(
                                "fixed-width column {other:?} is not a layout field name"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Raw code written back for a class when a record carries none.
    pub fn code_for_class(&self, class: u8) -> Option<&str> {
        self.code_map
            .iter()
            .find(|(_, &c)| c == class)
            .map(|(k, _)| k.as_str())
    }
}

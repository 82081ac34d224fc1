use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::profile::{ColumnRef, NbiFormat, NbiProfile};
use super::{canonicalize, NbiFileStats, NbiRecord, StateCode, RATING_LIMIT_TONS};
use crate::error::{format_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedNbi {
    pub records: Vec<NbiRecord>,
    pub stats: NbiFileStats,
    pub rejects: Vec<RowReject>,
}

struct RawFields<'a> {
    state: &'a str,
    structure: &'a str,
    design: &'a str,
    rating: &'a str,
}

struct Tally {
    records: Vec<NbiRecord>,
    rejects: Vec<RowReject>,
    total: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            records: Vec::new(),
            rejects: Vec::new(),
            total: 0,
        }
    }

    fn push(&mut self, outcome: std::result::Result<NbiRecord, String>) {
        self.total += 1;
        match outcome {
            Ok(r) => self.records.push(r),
            Err(reason) => self.rejects.push(RowReject {
                row: self.total,
                reason,
            }),
        }
    }

    fn finish(self) -> ParsedNbi {
        let stats = NbiFileStats {
            total_rows: self.total,
            parsed_rows: self.records.len(),
            rows_missing_design_load: self
                .records
                .iter()
                .filter(|r| r.design_load_class.is_none())
                .count(),
            rows_missing_rating: self
                .records
                .iter()
                .filter(|r| r.load_rating_tons.is_none())
                .count(),
            reject_count: self.rejects.len(),
        };
        ParsedNbi {
            records: self.records,
            stats,
            rejects: self.rejects,
        }
    }
}

/// Parses an inventory stream. Bad rows become rejects; only stream and
/// header problems are errors.
pub fn parse_nbi<R: Read>(source: R, profile: &NbiProfile) -> Result<ParsedNbi> {
    profile.validate()?;
    match &profile.format {
        NbiFormat::Delimited {
            separator,
            has_header,
        } => parse_delimited(source, profile, *separator as u8, *has_header),
        NbiFormat::FixedWidth { .. } => parse_fixed(source, profile),
    }
}

pub fn parse_nbi_file(path: &Path, profile: &NbiProfile) -> Result<ParsedNbi> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_nbi(BufReader::new(f), profile).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

fn clean(field: &str) -> &str {
    let t = field.trim();
    t.strip_prefix('\'')
        .and_then(|s| s.strip_suffix('\''))
        .map(str::trim)
        .unwrap_or(t)
}

fn parse_delimited<R: Read>(
    source: R,
    profile: &NbiProfile,
    sep: u8,
    has_header: bool,
) -> Result<ParsedNbi> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sep)
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.byte_records();
    let cols = &profile.columns;

    let indices: [usize; 4] = if has_header {
        let header = match rows.next() {
            Some(h) => h.map_err(csv_to_error)?,
            None => return Err(format_err("inventory file has no header row")),
        };
        let names: Vec<String> = header
            .iter()
            .map(|f| clean(&String::from_utf8_lossy(f)).to_string())
            .collect();
        let mut out = [0; 4];
        for (slot, col) in out.iter_mut().zip([
            &cols.state,
            &cols.structure,
            &cols.design_load,
            &cols.rating,
        ]) {
            *slot = resolve_column(col, Some(&names))?;
        }
        out
    } else {
        let mut out = [0; 4];
        for (slot, col) in out.iter_mut().zip([
            &cols.state,
            &cols.structure,
            &cols.design_load,
            &cols.rating,
        ]) {
            *slot = resolve_column(col, None)?;
        }
        out
    };
    let needed = indices.iter().max().copied().unwrap_or(0) + 1;

    let mut tally = Tally::new();
    for row in rows {
        let row = row.map_err(csv_to_error)?;
        if row.len() == 1
            && row
                .get(0)
                .is_none_or(|f| f.iter().all(u8::is_ascii_whitespace))
        {
            continue;
        }
        if row.len() < needed {
            tally.push(Err(format!(
                "row has {} fields, profile needs {needed}",
                row.len()
            )));
            continue;
        }
        let text: Vec<String> = indices
            .iter()
            .map(|&i| String::from_utf8_lossy(&row[i]).into_owned())
            .collect();
        let fields = RawFields {
            state: clean(&text[0]),
            structure: clean(&text[1]),
            design: clean(&text[2]),
            rating: clean(&text[3]),
        };
        tally.push(build_record(&fields, profile));
    }
    Ok(tally.finish())
}

fn csv_to_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Stream(io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

fn resolve_column(col: &ColumnRef, header: Option<&[String]>) -> Result<usize> {
    match (col, header) {
        (ColumnRef::Position(0), _) => Err(format_err("column positions are 1-based")),
        (ColumnRef::Position(p), _) => Ok(p - 1),
        (ColumnRef::Name(n), Some(names)) => names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| format_err(format!("header lacks column {n:?}"))),
        (ColumnRef::Name(n), None) => Err(format_err(format!(
            "column {n:?} referenced by name but the file has no header"
        ))),
    }
}

fn parse_fixed<R: Read>(source: R, profile: &NbiProfile) -> Result<ParsedNbi> {
    let NbiFormat::FixedWidth { layout } = &profile.format else {
        unreachable!()
    };
    let span_of = |col: &ColumnRef| -> (usize, usize) {
        let ColumnRef::Name(n) = col else {
            unreachable!("validated")
        };
        let s = layout.iter().find(|s| &s.name == n).expect("validated");
        (s.start - 1, s.start - 1 + s.length)
    };
    let cols = &profile.columns;
    let spans = [
        span_of(&cols.state),
        span_of(&cols.structure),
        span_of(&cols.design_load),
        span_of(&cols.rating),
    ];
    let needed = spans.iter().map(|s| s.1).max().unwrap_or(0);

    let mut tally = Tally::new();
    let mut reader = BufReader::new(source);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        if buf.len() < needed {
            tally.push(Err(format!(
                "row is {} characters, layout needs {needed}",
                buf.len()
            )));
            continue;
        }
        let text: Vec<String> = spans
            .iter()
            .map(|&(a, b)| String::from_utf8_lossy(&buf[a..b]).into_owned())
            .collect();
        let fields = RawFields {
            state: text[0].trim(),
            structure: &text[1],
            design: text[2].trim(),
            rating: text[3].trim(),
        };
        tally.push(build_record(&fields, profile));
    }
    Ok(tally.finish())
}

fn build_record(f: &RawFields<'_>, profile: &NbiProfile) -> std::result::Result<NbiRecord, String> {
    let state = StateCode::parse(f.state).map_err(|e| e.to_string())?;
    let structure = canonicalize(f.structure).map_err(|e| e.to_string())?;

    let (design_load_class, raw_design_code) = if f.design.is_empty() {
        (None, None)
    } else {
        let code = f.design.to_ascii_uppercase();
        (profile.code_map.get(&code).copied(), Some(code))
    };

    let load_rating_tons = if f.rating.is_empty() {
        None
    } else {
        let v: f64 = f
            .rating
            .parse()
            .map_err(|_| format!("rating {:?} is not a number", f.rating))?;
        let tons = v / profile.rating_scale_divisor;
        if !(0.0..RATING_LIMIT_TONS).contains(&tons) {
            return Err(format!("rating {tons} t outside [0, {RATING_LIMIT_TONS})"));
        }
        Some(tons)
    };

    Ok(NbiRecord {
        state,
        structure,
        design_load_class,
        load_rating_tons,
        raw_design_code,
    })
}

/// Writes records in the delimited layout of `profile`'s column names.
/// Only named columns are supported; ratings are written in tons (divisor 1).
pub fn write_delimited<W: Write>(
    out: W,
    records: &[NbiRecord],
    profile: &NbiProfile,
) -> Result<()> {
    let NbiFormat::Delimited { separator, .. } = &profile.format else {
        return Err(Error::Config(
            "write_delimited needs a delimited profile".into(),
        ));
    };
    let name = |c: &ColumnRef| match c {
        ColumnRef::Name(n) => Ok(n.clone()),
        ColumnRef::Position(_) => Err(Error::Config("write_delimited needs named columns".into())),
    };
    let cols = &profile.columns;
    let mut w = csv::WriterBuilder::new()
        .delimiter(*separator as u8)
        .from_writer(out);
    w.write_record([
        name(&cols.state)?,
        name(&cols.structure)?,
        name(&cols.design_load)?,
        name(&cols.rating)?,
    ])?;
    for r in records {
        let code = r
            .raw_design_code
            .clone()
            .or_else(|| {
                r.design_load_class
                    .and_then(|c| profile.code_for_class(c).map(str::to_string))
            })
            .unwrap_or_default();
        let rating = r
            .load_rating_tons
            .map(|t| format!("{t}"))
            .unwrap_or_default();
        w.write_record([
            r.state.as_str(),
            r.structure.raw.as_str(),
            code.as_str(),
            rating.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbi::FieldSpan;

    const HEADER: &str =
        "STATE_CODE_001,STRUCTURE_NUMBER_008,DESIGN_LOAD_031,INVENTORY_RATING_066\n";

    fn parse(text: &str) -> ParsedNbi {
        parse_nbi(text.as_bytes(), &NbiProfile::inventory()).unwrap()
    }

    #[test]
    fn delimited_row_maps_design_code_and_rating() {
        let p = parse(&format!("{HEADER}01,  0000S702 ,5,36.0\n"));
        assert_eq!(p.records.len(), 1);
        let r = &p.records[0];
        assert_eq!(r.state.as_str(), "01");
        assert_eq!(r.structure.canonical, "S702");
        assert_eq!(r.design_load_class, Some(5));
        assert_eq!(r.load_rating_tons, Some(36.0));
        assert_eq!(r.design_load_name(), Some("HS20"));
    }

    #[test]
    fn blank_fields_are_absent_not_errors() {
        let p = parse(&format!("{HEADER}01,123,,\n02,124, , \n"));
        assert_eq!(p.stats.parsed_rows, 2);
        assert_eq!(p.stats.rows_missing_design_load, 2);
        assert_eq!(p.stats.rows_missing_rating, 2);
        assert!(p.records[0].raw_design_code.is_none());
    }

    #[test]
    fn header_only_file_is_empty() {
        let p = parse(HEADER);
        assert!(p.records.is_empty());
        assert_eq!(p.stats, NbiFileStats::default());
    }

    #[test]
    fn missing_header_column_is_format_error() {
        let err = parse_nbi(
            "STATE_CODE_001,STRUCTURE_NUMBER_008\n01,1\n".as_bytes(),
            &NbiProfile::inventory(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(parse_nbi("".as_bytes(), &NbiProfile::inventory()).is_err());
    }

    #[test]
    fn bad_rows_are_rejected_with_row_numbers() {
        let p = parse(&format!(
            "{HEADER}01,1,5,10\n01,2,5\nXX,3,5,1\n01,0000,5,1\n01,5,5,abc\n01,6,5,250\n01,7,5,-1\n01,8,0,4\n"
        ));
        assert_eq!(p.stats.total_rows, 8);
        assert_eq!(p.stats.parsed_rows, 2);
        assert_eq!(p.stats.reject_count, 6);
        let rows: Vec<usize> = p.rejects.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![2, 3, 4, 5, 6, 7]);
        // unknown code 0 is kept raw but yields no class
        assert_eq!(p.records[1].design_load_class, None);
        assert_eq!(p.records[1].raw_design_code.as_deref(), Some("0"));
    }

    #[test]
    fn quoted_structure_numbers_are_unwrapped() {
        let p = parse(&format!("{HEADER}'06','00000000000S702',A,12.5\n"));
        assert_eq!(p.records[0].structure.canonical, "S702");
        assert_eq!(p.records[0].design_load_class, Some(9));
    }

    #[test]
    fn scale_divisor_applies() {
        let mut prof = NbiProfile::inventory();
        prof.rating_scale_divisor = 10.0;
        let p = parse_nbi(format!("{HEADER}01,1,5,363\n").as_bytes(), &prof).unwrap();
        assert!((p.records[0].load_rating_tons.unwrap() - 36.3).abs() < 1e-12);
    }

    #[test]
    fn positional_columns_without_header() {
        let mut prof = NbiProfile::inventory();
        prof.format = NbiFormat::Delimited {
            separator: '|',
            has_header: false,
        };
        prof.columns.state = ColumnRef::Position(2);
        prof.columns.structure = ColumnRef::Position(1);
        prof.columns.design_load = ColumnRef::Position(4);
        prof.columns.rating = ColumnRef::Position(3);
        let p = parse_nbi("X12|48|20.5|2\n".as_bytes(), &prof).unwrap();
        assert_eq!(p.records[0].state.as_str(), "48");
        assert_eq!(p.records[0].structure.canonical, "X12");
        assert_eq!(p.records[0].design_load_class, Some(2));
    }

    #[test]
    fn fixed_width_layout() {
        let mut prof = NbiProfile::inventory();
        prof.format = NbiFormat::FixedWidth {
            layout: vec![
                FieldSpan {
                    name: "STATE_CODE_001".into(),
                    start: 1,
                    length: 2,
                },
                FieldSpan {
                    name: "STRUCTURE_NUMBER_008".into(),
                    start: 4,
                    length: 15,
                },
                FieldSpan {
                    name: "DESIGN_LOAD_031".into(),
                    start: 19,
                    length: 1,
                },
                FieldSpan {
                    name: "INVENTORY_RATING_066".into(),
                    start: 20,
                    length: 3,
                },
            ],
        };
        prof.rating_scale_divisor = 10.0;
        let text = "01400000000000S7025363\r\n01\n\n480000000000012345 \n";
        let p = parse_nbi(text.as_bytes(), &prof).unwrap();
        assert_eq!(p.stats.total_rows, 3);
        assert_eq!(p.stats.parsed_rows, 1);
        assert_eq!(p.records[0].structure.canonical, "S702");
        assert_eq!(p.records[0].design_load_class, Some(5));
        assert!((p.records[0].load_rating_tons.unwrap() - 36.3).abs() < 1e-12);
        assert_eq!(p.rejects.len(), 2);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let src = format!("{HEADER}01,  0000S702 ,5,36.0\n02,77,,\n02,78,C,0.1\n");
        let first = parse(&src);
        let mut buf = Vec::new();
        write_delimited(&mut buf, &first.records, &NbiProfile::inventory()).unwrap();
        let second = parse_nbi(buf.as_slice(), &NbiProfile::inventory()).unwrap();
        assert_eq!(first.records, second.records);
    }
}

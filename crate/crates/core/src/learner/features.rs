use std::io::{Read, Write};

use crate::error::{format_err, Result};

/// Feature vectors keyed by id, one label each. Rows are `id,v1..vN,label`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub ids: Vec<String>,
    pub values: Vec<f32>,
    pub labels: Vec<String>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn read_features<R: Read>(source: R) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(format_err(
            "feature header needs id, at least one value column and label",
        ));
    }
    let dim = header.len() - 2;
    let mut set = FeatureSet {
        dim,
        ids: Vec::new(),
        values: Vec::new(),
        labels: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != dim + 2 {
            return Err(format_err(format!(
                "feature row {line}: {} fields, header has {}",
                rec.len(),
                dim + 2
            )));
        }
        for (j, field) in rec.iter().enumerate().skip(1).take(dim) {
            let v: f32 = field.trim().parse().map_err(|_| {
                format_err(format!(
                    "feature row {line}, column {}: {field:?} is not a number",
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(format_err(format!(
                    "feature row {line}, column {}: non-finite",
                    j + 1
                )));
            }
            set.values.push(v);
        }
        set.ids.push(rec[0].to_string());
        set.labels.push(rec[dim + 1].trim().to_string());
    }
    Ok(set)
}

pub fn write_features<W: Write>(out: W, set: &FeatureSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((1..=set.dim).map(|j| format!("v{j}")));
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..set.len() {
        let mut rec = vec![set.ids[i].clone()];
        rec.extend(set.row(i).iter().map(|v| v.to_string()));
        rec.push(set.labels[i].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let src = "id,v1,v2,label\na,0.5,1,x\nb,-2,3.25,y\n";
        let set = read_features(src.as_bytes()).unwrap();
        assert_eq!(set.dim, 2);
        assert_eq!(set.row(1), &[-2.0, 3.25]);
        let mut out = Vec::new();
        write_features(&mut out, &set).unwrap();
        assert_eq!(read_features(out.as_slice()).unwrap(), set);
    }

    #[test]
    fn ragged_and_bad_rows() {
        let err = read_features("id,v1,label\na,1,x\nb,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        assert!(read_features("id,v1,label\na,zz,x\n".as_bytes()).is_err());
        assert!(read_features("id,label\n".as_bytes()).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

/// Load-rating discretization: bin `i` is `[edges[i], edges[i+1])`, the last
/// bin is `[edges[last], ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningScheme {
    #[serde(default)]
    pub name: String,
    pub edges: Vec<f64>,
    /// Defaults to "a-b tons" / ">a tons" names when omitted.
    #[serde(default)]
    pub labels: Vec<String>,
}

fn fmt_tons(v: f64) -> String {
    format!("{v}")
}

pub fn default_labels(edges: &[f64]) -> Vec<String> {
    edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| match edges.get(i + 1) {
            Some(&hi) => format!("{}-{} tons", fmt_tons(lo), fmt_tons(hi)),
            None => format!(">{} tons", fmt_tons(lo)),
        })
        .collect()
}

impl BinningScheme {
    pub fn new(name: impl Into<String>, edges: Vec<f64>) -> Result<Self> {
        let labels = default_labels(&edges);
        let s = BinningScheme {
            name: name.into(),
            edges,
            labels,
        };
        s.validate()?;
        Ok(s)
    }

    /// Fills default labels if none were given, then checks invariants.
    pub fn normalized(mut self) -> Result<Self> {
        if self.labels.is_empty() {
            self.labels = default_labels(&self.edges);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.first() != Some(&0.0) {
            return Err(Error::Config(format!(
                "binning {:?}: first edge must be 0",
                self.name
            )));
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1]))
            || self.edges.iter().any(|e| !e.is_finite())
        {
            return Err(Error::Config(format!(
                "binning {:?}: edges must be finite and strictly increasing",
                self.name
            )));
        }
        if self.labels.len() != self.edges.len() {
            return Err(Error::Config(format!(
                "binning {:?}: {} labels for {} bins",
                self.name,
                self.labels.len(),
                self.edges.len()
            )));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len()
    }
}

/// 1-based bin holding `tons` under the right-open convention.
pub fn bin_load_rating(tons: f64, scheme: &BinningScheme) -> Result<u16> {
    if !(tons >= 0.0) {
        return Err(domain_err(format!(
            "load rating {tons} t is negative or NaN"
        )));
    }
    let idx = scheme.edges.partition_point(|&e| e <= tons);
    Ok(idx as u16)
}

/// Repeatedly folds the lowest-indexed bin whose count is under `threshold`
/// into its upper neighbour (the last bin folds downward).
pub fn merge_small_classes(
    counts: &[usize],
    scheme: &BinningScheme,
    threshold: usize,
) -> Result<BinningScheme> {
    if threshold < 1 {
        return Err(domain_err("merge threshold must be at least 1"));
    }
    if counts.len() != scheme.bin_count() {
        return Err(domain_err(format!(
            "{} counts for {} bins",
            counts.len(),
            scheme.bin_count()
        )));
    }
    let mut edges = scheme.edges.clone();
    let mut labels = scheme.labels.clone();
    let mut counts = counts.to_vec();
    let mut changed = false;
    while counts.len() > 1 {
        let Some(i) = counts.iter().position(|&c| c < threshold) else {
            break;
        };
        changed = true;
        if i + 1 < counts.len() {
            counts[i + 1] += counts[i];
            counts.remove(i);
            edges.remove(i + 1);
        } else {
            counts[i - 1] += counts[i];
            counts.remove(i);
            edges.remove(i);
        }
        labels.pop();
    }
    if changed {
        labels = default_labels(&edges);
    }
    Ok(BinningScheme {
        name: scheme.name.clone(),
        edges,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_open_bins() {
        let lr5 = BinningScheme::new("LR5", vec![0.0, 15.0, 30.0]).unwrap();
        assert_eq!(lr5.labels, vec!["0-15 tons", "15-30 tons", ">30 tons"]);
        assert_eq!(bin_load_rating(12.0, &lr5).unwrap(), 1);
        assert_eq!(bin_load_rating(15.0, &lr5).unwrap(), 2);
        assert_eq!(bin_load_rating(0.0, &lr5).unwrap(), 1);
        assert_eq!(bin_load_rating(1e6, &lr5).unwrap(), 3);
        let lr7 = BinningScheme::new("LR7", vec![0.0, 20.0, 40.0]).unwrap();
        assert_eq!(bin_load_rating(41.0, &lr7).unwrap(), 3);
        assert_eq!(lr7.labels[2], ">40 tons");
        assert!(bin_load_rating(-0.5, &lr7).is_err());
        assert!(bin_load_rating(f64::NAN, &lr7).is_err());
    }

    #[test]
    fn scheme_validation() {
        assert!(BinningScheme::new("x", vec![1.0, 2.0]).is_err());
        assert!(BinningScheme::new("x", vec![0.0, 2.0, 2.0]).is_err());
        assert!(BinningScheme::new("x", vec![]).is_err());
        let s = BinningScheme {
            name: "x".into(),
            edges: vec![0.0, 5.0],
            labels: vec!["only one".into()],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn small_low_bin_merges_upward() {
        let s = BinningScheme::new("LR1", vec![0.0, 5.0, 10.0, 15.0]).unwrap();
        let merged = merge_small_classes(&[12, 900, 400, 300], &s, 50).unwrap();
        assert_eq!(merged.edges, vec![0.0, 10.0, 15.0]);
        assert_eq!(merged.labels[0], "0-10 tons");
    }

    #[test]
    fn merge_fixed_point_and_exhaustive() {
        let s = BinningScheme::new("x", vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(merge_small_classes(&[60, 70, 80], &s, 50).unwrap(), s);
        let one = merge_small_classes(&[10, 10, 10], &s, 50).unwrap();
        assert_eq!(one.edges, vec![0.0]);
        assert_eq!(one.labels, vec![">0 tons"]);
    }

    #[test]
    fn last_bin_merges_downward() {
        let s = BinningScheme::new("x", vec![0.0, 10.0, 20.0]).unwrap();
        let m = merge_small_classes(&[60, 70, 3], &s, 50).unwrap();
        assert_eq!(m.edges, vec![0.0, 10.0]);
        assert_eq!(m.labels, vec!["0-10 tons", ">10 tons"]);
    }
}

//! Dataset variants: labelling, class mapping, down-sampling and splitting.

mod binning;
mod classmap;
mod sampling;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Completion, LabeledImage};
use crate::error::{format_err, Error, Result};
use crate::imaging::ColourMode;

pub use binning::{bin_load_rating, default_labels, merge_small_classes, BinningScheme};
pub use classmap::{map_design_load, ClassMap, ClassMapSpec};
pub(crate) use sampling::stream_rng;
pub use sampling::{downsample, split, GroupSplit, SplitMode, SplitOptions};

const PRESETS_JSON: &str = include_str!("../../presets/datasets.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    LoadRating(BinningScheme),
    DesignLoad(ClassMapSpec),
    /// Two classes: 1 = complete, 2 = partial.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caps {
    #[default]
    None,
    /// Output class (1-based) → maximum count.
    PerClass(BTreeMap<u16, usize>),
    Uniform(usize),
    /// Every class capped at the smallest class's count.
    Minority,
    /// Each class capped at the realized count of another preset on the same corpus.
    MatchPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionFilter {
    #[default]
    Any,
    CompleteOnly,
    PartialOnly,
}

impl CompletionFilter {
    fn admits(self, c: Option<Completion>) -> bool {
        match self {
            CompletionFilter::Any => true,
            CompletionFilter::CompleteOnly => c == Some(Completion::Complete),
            CompletionFilter::PartialOnly => c == Some(Completion::Partial),
        }
    }
}

fn default_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub label_source: LabelSource,
    #[serde(default)]
    pub caps: Caps,
    /// Load-rating bins under this count are merged before labelling.
    #[serde(default)]
    pub min_class_size: Option<usize>,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    /// Split seed.
    #[serde(default)]
    pub seed: u64,
    /// Down-sampling seed; falls back to `seed`.
    #[serde(default)]
    pub downsample_seed: Option<u64>,
    #[serde(default)]
    pub completion_filter: CompletionFilter,
    #[serde(default)]
    pub colour: ColourMode,
    #[serde(default)]
    pub group_split: GroupSplit,
    #[serde(default)]
    pub split_mode: SplitMode,
}

impl DatasetSpec {
    /// Fills default bin labels, then validates.
    pub fn normalized(mut self) -> Result<Self> {
        if let LabelSource::LoadRating(b) = self.label_source {
            self.label_source = LabelSource::LoadRating(b.normalized()?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "{}: split_fraction {} outside (0, 1)",
                self.name, self.split_fraction
            )));
        }
        match &self.caps {
            Caps::PerClass(m) if m.iter().any(|(&c, &v)| c == 0 || v == 0) => {
                return Err(Error::Config(format!(
                    "{}: caps need class >= 1 and value > 0",
                    self.name
                )))
            }
            Caps::Uniform(0) => {
                return Err(Error::Config(format!(
                    "{}: uniform cap must be > 0",
                    self.name
                )))
            }
            _ => {}
        }
        match (&self.label_source, self.min_class_size) {
            (LabelSource::LoadRating(b), _) => b.validate()?,
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "{}: min_class_size applies to load-rating datasets only",
                    self.name
                )))
            }
            (LabelSource::DesignLoad(m), None) => {
                m.compile()?;
            }
            (LabelSource::Completion, None) => {}
        }
        if self.min_class_size == Some(0) {
            return Err(Error::Config(format!(
                "{}: min_class_size must be >= 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Named dataset recipes, one per published dataset column.
#[derive(Debug, Clone)]
pub struct PresetRegistry {
    specs: Vec<DatasetSpec>,
}

impl PresetRegistry {
    pub fn builtin() -> Self {
        Self::from_json(PRESETS_JSON).expect("bundled presets are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let specs: Vec<DatasetSpec> = serde_json::from_str(text)?;
        let specs = specs
            .into_iter()
            .map(DatasetSpec::normalized)
            .collect::<Result<_>>()?;
        Ok(PresetRegistry { specs })
    }

    pub fn get(&self, name: &str) -> Option<&DatasetSpec> {
        self.specs
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn specs(&self) -> &[DatasetSpec] {
        &self.specs
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Adds or replaces a preset by name.
    pub fn insert(&mut self, spec: DatasetSpec) -> Result<()> {
        spec.validate()?;
        match self.specs.iter_mut().find(|s| s.name == spec.name) {
            Some(slot) => *slot = spec,
            None => self.specs.push(spec),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetItem {
    pub image_path: String,
    /// Output class, 1-based.
    pub class: u16,
    /// Grouping key for bridge-level splits.
    pub bridge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub classes: Vec<String>,
    pub train: Vec<DatasetItem>,
    pub test: Vec<DatasetItem>,
}

impl DatasetSplit {
    fn counts(&self, side: &[DatasetItem]) -> Vec<usize> {
        let mut out = vec![0; self.classes.len()];
        for it in side {
            out[usize::from(it.class) - 1] += 1;
        }
        out
    }

    pub fn train_counts(&self) -> Vec<usize> {
        self.counts(&self.train)
    }

    pub fn test_counts(&self) -> Vec<usize> {
        self.counts(&self.test)
    }

    /// CSV `image_path,class,side` with train rows first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_path", "class", "side"])?;
        for (side, items) in [("train", &self.train), ("test", &self.test)] {
            for it in items {
                w.write_record([it.image_path.as_str(), &it.class.to_string(), side])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, classes: Vec<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["image_path", "class", "side"] {
            return Err(format_err(
                "split manifest header must be image_path,class,side",
            ));
        }
        let mut out = DatasetSplit {
            classes,
            train: Vec::new(),
            test: Vec::new(),
        };
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let class: u16 = row[1].parse().map_err(|_| {
                format_err(format!("split line {}: bad class {:?}", i + 2, &row[1]))
            })?;
            if class == 0 || usize::from(class) > out.classes.len() {
                return Err(format_err(format!(
                    "split line {}: class {class} outside 1..={}",
                    i + 2,
                    out.classes.len()
                )));
            }
            let item = DatasetItem {
                image_path: row[0].to_string(),
                class,
                bridge: None,
            };
            match &row[2] {
                "train" => out.train.push(item),
                "test" => out.test.push(item),
                other => {
                    return Err(format_err(format!(
                        "split line {}: bad side {other:?}",
                        i + 2
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Realized per-class counts and the spec that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub spec: DatasetSpec,
    pub classes: Vec<String>,
    /// Labelled images per class before caps.
    pub available: Vec<usize>,
    /// Per-class counts after caps.
    pub realized: Vec<usize>,
    pub total: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Images dropped by the completion filter, missing labels or dropped classes.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub split: DatasetSplit,
    pub summary: VariantSummary,
}

struct Labelled {
    classes: Vec<String>,
    items: Vec<DatasetItem>,
    excluded: usize,
    spec: DatasetSpec,
}

fn label_corpus(spec: &DatasetSpec, corpus: &[LabeledImage]) -> Result<Labelled> {
    spec.validate()?;
    let admitted: Vec<&LabeledImage> = corpus
        .iter()
        .filter(|img| spec.completion_filter.admits(img.completion))
        .collect();
    let item = |img: &LabeledImage, class: u16| DatasetItem {
        image_path: img.image_path.clone(),
        class,
        bridge: Some(format!(
            "{}/{}",
            img.bridge_key.state, img.bridge_key.structure
        )),
    };
    let mut spec = spec.clone();
    let (classes, items) = match &mut spec.label_source {
        LabelSource::LoadRating(scheme) => {
            if let Some(threshold) = spec.min_class_size {
                let mut counts = vec![0usize; scheme.bin_count()];
                for img in &admitted {
                    if let Some(t) = img.load_rating_tons {
                        counts[usize::from(bin_load_rating(t, scheme)?) - 1] += 1;
                    }
                }
                *scheme = merge_small_classes(&counts, scheme, threshold)?;
            }
            let mut items = Vec::new();
            for img in &admitted {
                if let Some(t) = img.load_rating_tons {
                    items.push(item(img, bin_load_rating(t, scheme)?));
                }
            }
            (scheme.labels.clone(), items)
        }
        LabelSource::DesignLoad(m) => {
            let map = m.compile()?;
            let mut items = Vec::new();
            for img in &admitted {
                if let Some(c) = img.design_load_class {
                    if let Some(out) = map.map(c)? {
                        items.push(item(img, out));
                    }
                }
            }
            (map.labels().to_vec(), items)
        }
        LabelSource::Completion => {
            let items = admitted
                .iter()
                .filter_map(|img| {
                    img.completion
                        .map(|c| item(img, if c == Completion::Complete { 1 } else { 2 }))
                })
                .collect();
            (vec!["complete".to_string(), "partial".to_string()], items)
        }
    };
    if items.is_empty() {
        return Err(Error::Domain(format!(
            "{}: corpus has no images with the labels this dataset needs",
            spec.name
        )));
    }
    Ok(Labelled {
        excluded: corpus.len() - items.len(),
        classes,
        items,
        spec,
    })
}

fn class_counts(items: &[DatasetItem], k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    for it in items {
        out[usize::from(it.class) - 1] += 1;
    }
    out
}

fn resolve_caps(
    spec: &DatasetSpec,
    available: &[usize],
    corpus: &[LabeledImage],
    registry: &PresetRegistry,
    depth: usize,
) -> Result<Vec<Option<usize>>> {
    let k = available.len();
    Ok(match &spec.caps {
        Caps::None => vec![None; k],
        Caps::PerClass(m) => {
            if let Some(&c) = m.keys().find(|&&c| usize::from(c) > k) {
                return Err(Error::Config(format!(
                    "{}: cap for class {c} but only {k} classes",
                    spec.name
                )));
            }
            (1..=k as u16).map(|c| m.get(&c).copied()).collect()
        }
        Caps::Uniform(n) => vec![Some(*n); k],
        Caps::Minority => {
            let min = available
                .iter()
                .copied()
                .filter(|&n| n > 0)
                .min()
                .unwrap_or(0);
            vec![Some(min); k]
        }
        Caps::MatchPreset(other) => {
            if depth > 4 {
                return Err(Error::Config(format!(
                    "{}: match_preset chain too deep",
                    spec.name
                )));
            }
            let other_spec = registry
                .get(other)
                .ok_or_else(|| Error::Config(format!("{}: unknown preset {other:?}", spec.name)))?;
            let counts = realized_counts(other_spec, corpus, registry, depth + 1)?;
            if counts.len() != k {
                return Err(Error::Config(format!(
                    "{}: preset {other} has {} classes, expected {k}",
                    spec.name,
                    counts.len()
                )));
            }
            counts.into_iter().map(Some).collect()
        }
    })
}

fn realized_counts(
    spec: &DatasetSpec,
    corpus: &[LabeledImage],
    registry: &PresetRegistry,
    depth: usize,
) -> Result<Vec<usize>> {
    let labelled = label_corpus(spec, corpus)?;
    let available = class_counts(&labelled.items, labelled.classes.len());
    let caps = resolve_caps(&labelled.spec, &available, corpus, registry, depth)?;
    Ok(available
        .iter()
        .zip(&caps)
        .map(|(&n, cap)| cap.map_or(n, |c| c.min(n)))
        .collect())
}

/// Builds one dataset variant from a labelled corpus.
pub fn build_variant(
    spec: &DatasetSpec,
    corpus: &[LabeledImage],
    registry: &PresetRegistry,
) -> Result<Variant> {
    let labelled = label_corpus(spec, corpus)?;
    let k = labelled.classes.len();
    let available = class_counts(&labelled.items, k);
    let caps = resolve_caps(&labelled.spec, &available, corpus, registry, 0)?;
    let sampled = downsample(
        &labelled.items,
        |it| it.class,
        &caps,
        labelled.spec.downsample_seed.unwrap_or(labelled.spec.seed),
    );
    let realized = class_counts(&sampled, k);
    let split = split(
        &sampled,
        labelled.classes.clone(),
        SplitOptions {
            fraction: labelled.spec.split_fraction,
            seed: labelled.spec.seed,
            mode: labelled.spec.split_mode,
            group: labelled.spec.group_split,
        },
    )?;
    let summary = VariantSummary {
        classes: labelled.classes,
        available,
        total: realized.iter().sum(),
        realized,
        train: split.train_counts(),
        test: split.test_counts(),
        excluded: labelled.excluded + (labelled.items.len() - sampled.len()),
        spec: labelled.spec,
    };
    Ok(Variant { split, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbi::{BridgeKey, StateCode};

    fn corpus(counts: &[usize]) -> Vec<LabeledImage> {
        let mut out = Vec::new();
        for (i, &n) in counts.iter().enumerate() {
            for j in 0..n {
                out.push(LabeledImage {
                    image_path: format!("{i}/{j}"),
                    bridge_key: BridgeKey {
                        state: StateCode::parse("01").unwrap(),
                        structure: format!("{i}X{j}"),
                    },
                    design_load_class: Some(i as u8 + 1),
                    load_rating_tons: Some(i as f64 * 10.0 + 1.0),
                    completion: Some(if j % 2 == 0 {
                        Completion::Complete
                    } else {
                        Completion::Partial
                    }),
                });
            }
        }
        out
    }

    #[test]
    fn all_presets_present_and_valid() {
        let r = PresetRegistry::builtin();
        for n in (1..=11)
            .map(|i| format!("LR{i}"))
            .chain((1..=18).map(|i| format!("DL{i}")))
        {
            assert!(r.get(&n).is_some(), "missing preset {n}");
        }
        assert!(r.get("completion").is_some());
    }

    #[test]
    fn dl2_downsamples_majorities() {
        let counts = [928, 4674, 1913, 460, 3991, 491, 3, 56, 585, 310, 22, 107];
        let r = PresetRegistry::builtin();
        let v = build_variant(r.get("DL2").unwrap(), &corpus(&counts), &r).unwrap();
        assert_eq!(
            v.summary.realized,
            vec![928, 1000, 1000, 460, 1000, 491, 585, 310]
        );
        assert_eq!(v.summary.total, 5774);
        assert_eq!(v.summary.available[1], 4674);
    }

    #[test]
    fn completion_filter_and_label() {
        let r = PresetRegistry::builtin();
        let c = corpus(&[10, 10]);
        let v = build_variant(r.get("COMPLETION").unwrap(), &c, &r).unwrap();
        assert_eq!(v.summary.realized, vec![10, 10]);
        let spec = DatasetSpec {
            completion_filter: CompletionFilter::PartialOnly,
            ..r.get("DL1").unwrap().clone()
        };
        let v = build_variant(&spec, &c, &r).unwrap();
        assert_eq!(v.summary.total, 10);
    }

    #[test]
    fn min_class_size_merges_rating_bins() {
        let r = PresetRegistry::builtin();
        let spec = DatasetSpec {
            name: "merge".into(),
            label_source: LabelSource::LoadRating(
                BinningScheme::new("x", vec![0.0, 5.0, 10.0, 20.0]).unwrap(),
            ),
            caps: Caps::None,
            min_class_size: Some(5),
            split_fraction: 0.8,
            seed: 1,
            downsample_seed: None,
            completion_filter: CompletionFilter::Any,
            colour: ColourMode::Rgb,
            group_split: GroupSplit::ImageLevel,
            split_mode: SplitMode::Stratified,
        };
        // ratings 1, 11, 21 -> bins 1, 3, 4 ; empty bin 2 merges upward
        let v = build_variant(&spec, &corpus(&[6, 6, 6]), &r).unwrap();
        assert_eq!(v.summary.classes, vec!["0-5 tons", "5-20 tons", ">20 tons"]);
        assert_eq!(v.summary.realized, vec![6, 6, 6]);
    }

    #[test]
    fn missing_labels_is_an_error() {
        let r = PresetRegistry::builtin();
        let mut c = corpus(&[5]);
        for img in &mut c {
            img.load_rating_tons = None;
        }
        assert!(build_variant(r.get("LR5").unwrap(), &c, &r).is_err());
    }

    #[test]
    fn split_csv_round_trip() {
        let r = PresetRegistry::builtin();
        let v = build_variant(r.get("DL1").unwrap(), &corpus(&[5, 6, 7]), &r).unwrap();
        let mut buf = Vec::new();
        v.split.write_csv(&mut buf).unwrap();
        let back = DatasetSplit::read_csv(buf.as_slice(), v.split.classes.clone()).unwrap();
        assert_eq!(back.train_counts(), v.split.train_counts());
        assert_eq!(back.test.len(), v.split.test.len());
        assert!(DatasetSplit::read_csv("a,b\n".as_bytes(), vec![]).is_err());
    }
}

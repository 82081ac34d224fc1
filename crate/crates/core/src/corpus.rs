//! Image manifests joined to inventory records.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, Result};
use crate::imaging;
use crate::learner::ModelCheckpoint;
use crate::nbi::{canonicalize, BridgeKey, NbiRecord, StateCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    Complete,
    Partial,
}

impl Completion {
    pub fn parse(s: &str) -> Result<Option<Self>> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" => Ok(None),
            "complete" => Ok(Some(Completion::Complete)),
            "partial" => Ok(Some(Completion::Partial)),
            other => Err(format_err(format!("unknown completion flag {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Completion::Complete => "complete",
            Completion::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub bridge_local_id: String,
    pub state: StateCode,
    pub structure_raw: String,
    pub completion: Option<Completion>,
}

/// Reads a manifest CSV with header
/// `image_path,bridge_local_id,state,structure[,completion]`.
pub fn read_manifest<R: Read>(source: R) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::None)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let required = ["image_path", "bridge_local_id", "state", "structure"];
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name).ok_or_else(|| format_err(format!("manifest header lacks {name:?}")))?;
    }
    let completion_col = col("completion");

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |j: usize| {
            row.get(j)
                .ok_or_else(|| format_err(format!("manifest line {line}: missing field {}", j + 1)))
        };
        let image_path = field(idx[0])?.trim().to_string();
        if image_path.is_empty() {
            return Err(format_err(format!(
                "manifest line {line}: empty image_path"
            )));
        }
        let state = StateCode::parse(field(idx[2])?)
            .map_err(|e| format_err(format!("manifest line {line}: {e}")))?;
        let completion = match completion_col.and_then(|j| row.get(j)) {
            Some(s) => Completion::parse(s)
                .map_err(|e| format_err(format!("manifest line {line}: {e}")))?,
            None => None,
        };
        out.push(ManifestEntry {
            image_path,
            bridge_local_id: field(idx[1])?.trim().to_string(),
            state,
            structure_raw: field(idx[3])?.to_string(),
            completion,
        });
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(out: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "image_path",
        "bridge_local_id",
        "state",
        "structure",
        "completion",
    ])?;
    for e in entries {
        w.write_record([
            e.image_path.as_str(),
            e.bridge_local_id.as_str(),
            e.state.as_str(),
            e.structure_raw.as_str(),
            e.completion.map_or("", Completion::as_str),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image_path: String,
    pub bridge_key: BridgeKey,
    pub design_load_class: Option<u8>,
    pub load_rating_tons: Option<f64>,
    pub completion: Option<Completion>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub manifest_entries: usize,
    pub matched_images: usize,
    pub unmatched_images: usize,
    /// Matched, but the record carries neither label; excluded from the labeled set.
    pub matched_without_labels: usize,
    pub images_with_design_load: usize,
    pub images_with_rating: usize,
    pub complete_count: usize,
    pub partial_count: usize,
    /// Inventory keys seen more than once; the first record wins.
    pub duplicate_record_keys: usize,
}

pub fn join_labels(
    manifest: &[ManifestEntry],
    records: &[NbiRecord],
) -> Result<(Vec<LabeledImage>, JoinReport)> {
    let mut report = JoinReport {
        manifest_entries: manifest.len(),
        ..Default::default()
    };
    let mut index: HashMap<BridgeKey, &NbiRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if let std::collections::hash_map::Entry::Vacant(e) = index.entry(r.key()) {
            e.insert(r);
        } else {
            report.duplicate_record_keys += 1;
        }
    }
    if report.duplicate_record_keys > 0 {
        log::warn!(
            "{} duplicate inventory keys; first occurrence kept",
            report.duplicate_record_keys
        );
    }

    let mut seen = HashSet::with_capacity(manifest.len());
    let mut labeled = Vec::new();
    for e in manifest {
        if !seen.insert(e.image_path.as_str()) {
            return Err(format_err(format!(
                "duplicate image path {:?} in manifest",
                e.image_path
            )));
        }
        let Ok(structure) = canonicalize(&e.structure_raw) else {
            report.unmatched_images += 1;
            continue;
        };
        let key = BridgeKey {
            state: e.state.clone(),
            structure: structure.canonical,
        };
        let Some(rec) = index.get(&key) else {
            report.unmatched_images += 1;
            continue;
        };
        report.matched_images += 1;
        if rec.design_load_class.is_none() && rec.load_rating_tons.is_none() {
            report.matched_without_labels += 1;
            continue;
        }
        labeled.push(LabeledImage {
            image_path: e.image_path.clone(),
            bridge_key: key,
            design_load_class: rec.design_load_class,
            load_rating_tons: rec.load_rating_tons,
            completion: e.completion,
        });
    }
    let b = corpus_stats(&labeled);
    report.images_with_design_load = b.design_load.total;
    report.images_with_rating = b.load_rating.total;
    report.complete_count = b.all.complete;
    report.partial_count = b.all.partial;
    Ok((labeled, report))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub total: usize,
    pub complete: usize,
    pub partial: usize,
}

impl BreakdownRow {
    fn add(&mut self, c: Option<Completion>) {
        self.total += 1;
        match c {
            Some(Completion::Complete) => self.complete += 1,
            Some(Completion::Partial) => self.partial += 1,
            None => {}
        }
    }
}

/// Rows: all images, images with a design-load label, images with a rating.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBreakdown {
    pub all: BreakdownRow,
    pub design_load: BreakdownRow,
    pub load_rating: BreakdownRow,
}

pub fn corpus_stats(images: &[LabeledImage]) -> CorpusBreakdown {
    let mut b = CorpusBreakdown::default();
    for img in images {
        b.all.add(img.completion);
        if img.design_load_class.is_some() {
            b.design_load.add(img.completion);
        }
        if img.load_rating_tons.is_some() {
            b.load_rating.add(img.completion);
        }
    }
    b
}

pub enum CompletionSource<'a> {
    /// Flags already attached from the manifest pass through untouched.
    Manifest,
    /// A two-class checkpoint whose labels are `complete` and `partial`.
    Model(&'a ModelCheckpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionProbe {
    pub image_path: String,
    pub p_complete: f64,
    pub flag: Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReject {
    pub image_path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTagging {
    pub images: Vec<LabeledImage>,
    pub probes: Vec<CompletionProbe>,
    pub rejects: Vec<ImageReject>,
}

/// Attaches completion flags. With a model, unreadable images are listed as
/// rejects and left out; every other field of each image is preserved.
pub fn tag_completion(
    images: &[LabeledImage],
    source: CompletionSource<'_>,
    image_root: &Path,
) -> Result<CompletionTagging> {
    let ckpt = match source {
        CompletionSource::Manifest => {
            return Ok(CompletionTagging {
                images: images.to_vec(),
                probes: Vec::new(),
                rejects: Vec::new(),
            })
        }
        CompletionSource::Model(c) => c,
    };
    let pos = |name: &str| ckpt.classes.iter().position(|c| c == name);
    let (Some(complete_idx), Some(_)) = (pos("complete"), pos("partial")) else {
        return Err(Error::Config(format!(
            "completion model must have classes complete/partial, found {:?}",
            ckpt.classes
        )));
    };
    if ckpt.classes.len() != 2 {
        return Err(Error::Config(
            "completion model must have exactly 2 classes".into(),
        ));
    }
    let [_, size, _] = ckpt.network.arch().input;
    let mut out = CompletionTagging {
        images: Vec::with_capacity(images.len()),
        probes: Vec::with_capacity(images.len()),
        rejects: Vec::new(),
    };
    for img in images {
        let path = image_root.join(&img.image_path);
        let tensor = match imaging::prepare::<f32>(&path, size, ckpt.colour) {
            Ok(t) => t,
            Err(e) => {
                out.rejects.push(ImageReject {
                    image_path: img.image_path.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let probs = ckpt.network.forward(&tensor)?;
        let p_complete = f64::from(probs[complete_idx]);
        let flag = if p_complete >= 0.5 {
            Completion::Complete
        } else {
            Completion::Partial
        };
        out.probes.push(CompletionProbe {
            image_path: img.image_path.clone(),
            p_complete,
            flag,
        });
        out.images.push(LabeledImage {
            completion: Some(flag),
            ..img.clone()
        });
    }
    Ok(out)
}

pub fn write_labeled_ndjson<W: Write>(mut out: W, images: &[LabeledImage]) -> Result<()> {
    for img in images {
        serde_json::to_writer(&mut out, img)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labeled_ndjson(text: &str) -> Result<Vec<LabeledImage>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

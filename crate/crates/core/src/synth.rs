//! Deterministic synthetic corpora: images, manifest and inventory file.
//!
//! Class `c` (0-based) is drawn as `c + 1` dark horizontal deck stripes over
//! a noisy sky/ground background. Partial views are corner crops of the scene
//! scaled back up to full size.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, Completion, ManifestEntry};
use crate::datasets::stream_rng;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::imaging::{encode_pnm, resize_bilinear, Image, RgbImage};
use crate::nbi::{NbiProfile, StateCode};

const STATES: [&str; 6] = ["01", "06", "17", "36", "42", "48"];
const RATING_STREAM: u64 = 1 << 40;
const CONFUSION_STREAM: u64 = 1 << 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub images_per_class: usize,
    /// Overrides `classes` and `images_per_class` with explicit per-class counts.
    pub class_counts: Option<Vec<usize>>,
    pub seed: u64,
    pub image_size: usize,
    /// Uniform pixel noise amplitude in 8-bit intensity units.
    pub noise: f64,
    /// Maximum positional jitter of the deck in pixels.
    pub jitter: usize,
    /// Share of images rendered as cropped partial views.
    pub partial_fraction: f64,
    pub images_per_bridge: usize,
    /// Write manifest and inventory only, no image files.
    pub labels_only: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            images_per_class: 10,
            class_counts: None,
            seed: 0,
            image_size: 64,
            noise: 12.0,
            jitter: 4,
            partial_fraction: 0.0,
            images_per_bridge: 1,
            labels_only: false,
        }
    }
}

impl SynthSpec {
    pub fn counts(&self) -> Vec<usize> {
        self.class_counts
            .clone()
            .unwrap_or_else(|| vec![self.images_per_class; self.classes])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        let counts = self.counts();
        if !(2..=12).contains(&counts.len()) {
            return bad(format!("{} classes; need 2..=12", counts.len()));
        }
        if counts.iter().all(|&n| n == 0)
            || (self.class_counts.is_none() && self.images_per_class == 0)
        {
            return bad("need at least one image per class".into());
        }
        if !(0.0..=1.0).contains(&self.partial_fraction) {
            return bad(format!(
                "partial_fraction {} outside [0, 1]",
                self.partial_fraction
            ));
        }
        if self.image_size < 16 {
            return bad(format!("image_size {} below 16", self.image_size));
        }
        if self.images_per_bridge == 0 {
            return bad("images_per_bridge must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub inventory: PathBuf,
    pub images: usize,
    pub bridges: usize,
    pub partial_images: usize,
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn to_px(v: [f64; 3]) -> [u8; 3] {
    v.map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// Full scene for a 0-based class.
pub fn render_scene(
    class: usize,
    size: usize,
    noise: f64,
    jitter: usize,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let s = size as f64;
    let j = jitter as i64;
    let mut jit = |lo: i64, hi: i64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let horizon = ((s * 0.62) as i64 + jit(-j, j)).clamp(1, size as i64 - 1) as usize;
    let t = (size / 32).max(1);
    let stripes = class + 1;
    let block = (2 * stripes - 1) * t;
    let centre_top = (size.saturating_sub(block) / 2) as i64;
    let top = (centre_top + jit(-j, j)).clamp(1, (size - block - 1) as i64) as usize;
    let x0 = size / 10 + jit(0, j) as usize;
    let x1 = size - size / 10 - jit(0, j) as usize;
    let shade = jit(-10, 10) as f64;
    let deck = [55.0 + shade, 50.0 + shade, 45.0 + shade];
    let pier = [95.0, 90.0, 85.0];

    let mut img = RgbImage::filled(size, size, [0, 0, 0]).expect("positive size");
    let pier_bottom = (size * 7 / 8).max(top + block);
    let piers = [x0 + (x1 - x0) / 4, x0 + 3 * (x1 - x0) / 4];
    for y in 0..size {
        let base = if y < horizon {
            lerp(
                [120.0, 170.0, 225.0],
                [190.0, 215.0, 240.0],
                y as f64 / horizon as f64,
            )
        } else {
            lerp(
                [110.0, 125.0, 80.0],
                [80.0, 95.0, 60.0],
                (y - horizon) as f64 / (size - horizon) as f64,
            )
        };
        let in_stripe = y >= top && y < top + block && ((y - top) / t).is_multiple_of(2);
        for x in 0..size {
            let mut px = base;
            if in_stripe && x >= x0 && x < x1 {
                px = deck;
            } else if y >= top + block
                && y < pier_bottom
                && piers.iter().any(|&p| x >= p && x < p + t)
            {
                px = pier;
            }
            if noise > 0.0 {
                for c in &mut px {
                    *c += rng.gen_range(-noise..=noise);
                }
            }
            img.put_pixel(x, y, to_px(px));
        }
    }
    img
}

/// Corner crop covering a side fraction in [0.35, 0.5], scaled back to full size.
pub fn crop_partial(scene: &RgbImage, rng: &mut ChaCha8Rng) -> RgbImage {
    let size = scene.width();
    let f: f64 = rng.gen_range(0.35..=0.5);
    let side = ((size as f64 * f).round() as usize).max(2);
    let corner: u8 = rng.gen_range(0..4);
    let ox = if corner & 1 == 0 { 0 } else { size - side };
    let oy = if corner & 2 == 0 { 0 } else { size - side };
    let mut crop = RgbImage::filled(side, side, [0, 0, 0]).expect("positive size");
    for y in 0..side {
        for x in 0..side {
            crop.put_pixel(x, y, scene.pixel(ox + x, oy + y));
        }
    }
    match resize_bilinear(&Image::Rgb(crop), size, scene.height()).expect("valid size") {
        Image::Rgb(i) => i,
        Image::Gray(_) => unreachable!("resize keeps channels"),
    }
}

/// Renders image `index` of the corpus. Returns the image and whether it is partial.
pub fn render_image(spec: &SynthSpec, class: usize, index: u64) -> (RgbImage, bool) {
    let mut rng = stream_rng(spec.seed, index);
    let partial = rng.gen::<f64>() < spec.partial_fraction;
    let scene = render_scene(class, spec.image_size, spec.noise, spec.jitter, &mut rng);
    if partial {
        (crop_partial(&scene, &mut rng), true)
    } else {
        (scene, false)
    }
}

/// Rating consistent with the visual class: inside `[10c, 10c + 10)` tons.
fn rating_for(class: usize, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(0.5..9.5);
    ((10.0 * class as f64 + u) * 10.0).round() / 10.0
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.csv`, `inventory.csv` and `images/` under `out_dir`.
pub fn gen_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<SynthCorpus> {
    spec.validate()?;
    let profile = NbiProfile::inventory();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::new();
    let mut inventory =
        String::from("STATE_CODE_001,STRUCTURE_NUMBER_008,DESIGN_LOAD_031,INVENTORY_RATING_066\n");
    let mut index = 0u64;
    let mut bridge = 0usize;
    let mut partial_images = 0;
    for (class, &n) in spec.counts().iter().enumerate() {
        let code = profile
            .code_for_class(class as u8 + 1)
            .expect("default map covers 1..=12");
        for first in (0..n).step_by(spec.images_per_bridge) {
            bridge += 1;
            let id = format!("B{bridge:06}");
            let state = STATES[bridge % STATES.len()];
            let structure = format!("SYN{bridge:06}");
            let mut rng = stream_rng(spec.seed, RATING_STREAM + bridge as u64);
            inventory.push_str(&format!(
                "{state},{structure:0>15},{code},{}\n",
                rating_for(class, &mut rng)
            ));
            for k in 0..spec.images_per_bridge.min(n - first) {
                index += 1;
                let rel = format!("images/{id}/{}.ppm", k + 1);
                let partial = if spec.labels_only {
                    stream_rng(spec.seed, index).gen::<f64>() < spec.partial_fraction
                } else {
                    let (img, partial) = render_image(spec, class, index);
                    let dir = out_dir.join("images").join(&id);
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    write_file(&out_dir.join(&rel), &encode_pnm(&Image::Rgb(img)))?;
                    partial
                };
                partial_images += usize::from(partial);
                manifest.push(ManifestEntry {
                    image_path: rel,
                    bridge_local_id: id.clone(),
                    // unpadded state and lower-case structure exercise key canonicalization
                    state: StateCode::parse(state.trim_start_matches('0'))?,
                    structure_raw: format!(" {}", structure.to_ascii_lowercase()),
                    completion: Some(if partial {
                        Completion::Partial
                    } else {
                        Completion::Complete
                    }),
                });
            }
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    let mut buf = Vec::new();
    write_manifest(&mut buf, &manifest)?;
    write_file(&manifest_path, &buf)?;
    let inventory_path = out_dir.join("inventory.csv");
    write_file(&inventory_path, inventory.as_bytes())?;
    Ok(SynthCorpus {
        root: out_dir.to_path_buf(),
        manifest: manifest_path,
        inventory: inventory_path,
        images: manifest.len(),
        bridges: bridge,
        partial_images,
    })
}

/// Random non-negative `k`×`k` matrices with positive totals.
pub fn gen_confusions(count: usize, k: usize, seed: u64) -> Result<Vec<ConfusionMatrix>> {
    if count == 0 || k < 2 {
        return Err(Error::Domain(format!(
            "need count >= 1 and K >= 2, got {count} and {k}"
        )));
    }
    let mut rng = stream_rng(seed, CONFUSION_STREAM);
    (0..count)
        .map(|_| {
            let max: u64 = rng.gen_range(1..=30);
            let mut counts: Vec<Vec<u64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.gen_range(0..=max)).collect())
                .collect();
            // sparse rows and diagonal-heavy matrices both occur in practice
            if rng.gen_bool(0.3) {
                let r = rng.gen_range(0..k);
                counts[r].iter_mut().for_each(|v| *v = 0);
            }
            if rng.gen_bool(0.5) {
                for (i, row) in counts.iter_mut().enumerate() {
                    row[i] += rng.gen_range(0..=5 * max);
                }
            }
            if counts.iter().flatten().all(|&v| v == 0) {
                counts[0][0] = 1;
            }
            ConfusionMatrix::numbered(counts)
        })
        .collect()
}

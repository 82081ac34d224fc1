//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "BCAPCKPT"
//! u32       format version (1)
//! u32 + N   descriptor JSON {"architecture", "classes", "colour"}
//! u32       number of parameter blocks, one per parametrized layer in order
//!   u32     layer index
//!   u32 + W weights as f32
//!   u32 + B biases as f32
//! u32 + H   training history JSON
//! ```
//!
//! Trailing bytes, count mismatches against the descriptor and unknown
//! versions are rejected.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchitectureDescriptor;
use super::network::{LayerParams, Network, ParamSet};
use super::train::TrainingHistory;
use crate::error::{format_err, Error, Result};
use crate::imaging::ColourMode;

pub const MAGIC: &[u8; 8] = b"BCAPCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A trained network plus what is needed to use it on new images.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub network: Network<f32>,
    pub classes: Vec<String>,
    pub colour: ColourMode,
    pub history: TrainingHistory,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    architecture: ArchitectureDescriptor,
    classes: Vec<String>,
    colour: ColourMode,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::Invariant(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_floats(out: &mut Vec<u8>, vs: &[f32]) -> Result<()> {
    put_u32(out, vs.len())?;
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl ModelCheckpoint {
    pub fn new(network: Network<f32>, classes: Vec<String>, colour: ColourMode) -> Result<Self> {
        let c = ModelCheckpoint {
            network,
            classes,
            colour,
            history: TrainingHistory::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.network.class_count();
        if self.classes.len() != k {
            return Err(Error::Config(format!(
                "{} class names for a {k}-way network",
                self.classes.len()
            )));
        }
        // flat-input networks classify feature vectors, not images
        let [c, h, w] = self.network.arch().input;
        if (h > 1 || w > 1) && c != self.colour.channels() {
            return Err(Error::Config(format!(
                "{:?} needs {} input channels, network has {c}",
                self.colour,
                self.colour.channels()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let desc = serde_json::to_vec(&Descriptor {
            architecture: self.network.arch().clone(),
            classes: self.classes.clone(),
            colour: self.colour,
        })?;
        put_u32(&mut out, desc.len())?;
        out.extend_from_slice(&desc);
        let blocks: Vec<(usize, &LayerParams<f32>)> = self
            .network
            .params()
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
            .collect();
        put_u32(&mut out, blocks.len())?;
        for (i, p) in blocks {
            put_u32(&mut out, i)?;
            put_floats(&mut out, &p.weights)?;
            put_floats(&mut out, &p.bias)?;
        }
        let hist = serde_json::to_vec(&self.history)?;
        put_u32(&mut out, hist.len())?;
        out.extend_from_slice(&hist);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(format_err("not a checkpoint: bad magic"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n = r.u32("descriptor length")? as usize;
        let desc: Descriptor = serde_json::from_slice(r.take(n, "descriptor")?)
            .map_err(|e| format_err(format!("checkpoint descriptor: {e}")))?;
        let arch = desc.architecture;
        arch.shapes()?;
        let expected: Vec<(usize, (usize, usize))> = arch
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.param_counts().map(|c| (i, c)))
            .collect();
        let blocks = r.u32("block count")? as usize;
        if blocks != expected.len() {
            return Err(format_err(format!(
                "{blocks} parameter blocks for {} parametrized layers",
                expected.len()
            )));
        }
        let mut params: ParamSet<f32> = vec![None; arch.layers.len()];
        for (i, (w, b)) in expected {
            let at = r.u32("layer index")? as usize;
            if at != i {
                return Err(format_err(format!(
                    "parameter block for layer {at}, expected {i}"
                )));
            }
            let weights = r.floats(w, i, "weights")?;
            let bias = r.floats(b, i, "biases")?;
            params[i] = Some(LayerParams { weights, bias });
        }
        let n = r.u32("history length")? as usize;
        let history: TrainingHistory = serde_json::from_slice(r.take(n, "history")?)
            .map_err(|e| format_err(format!("checkpoint history: {e}")))?;
        if r.pos != bytes.len() {
            return Err(format_err(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        let c = ModelCheckpoint {
            network: Network::from_params(arch, params)?,
            classes: desc.classes,
            colour: desc.colour,
            history,
        };
        c.validate()
            .map_err(|e| format_err(format!("checkpoint: {e}")))?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format_err(format!(
                "checkpoint truncated reading {what} at byte {}: need {n}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, expected: usize, layer: usize, what: &str) -> Result<Vec<f32>> {
        let n = self.u32(what)? as usize;
        if n != expected {
            return Err(format_err(format!(
                "layer {layer}: {n} {what}, architecture needs {expected}"
            )));
        }
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{EpochRecord, LayerSpec};

    fn sample() -> ModelCheckpoint {
        let arch = ArchitectureDescriptor {
            input: [1, 4, 4],
            layers: vec![
                LayerSpec::Convolution {
                    kernel_h: 3,
                    kernel_w: 3,
                    in_channels: 1,
                    out_channels: 2,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    inputs: 8,
                    outputs: 3,
                },
                LayerSpec::Softmax,
            ],
        };
        let mut c = ModelCheckpoint::new(
            Network::new(arch, 4).unwrap(),
            vec!["a".into(), "b".into(), "c".into()],
            ColourMode::Grayscale1ch,
        )
        .unwrap();
        c.history.epochs.push(EpochRecord {
            epoch: 1,
            train_loss: 1.0,
            train_accuracy: 0.5,
            val_loss: 1.1,
            val_accuracy: 0.4,
        });
        c.history.best_epoch = 1;
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(ModelCheckpoint::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("version 9"));
        let err = ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(ModelCheckpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn class_names_must_match_head() {
        let c = sample();
        assert!(ModelCheckpoint::new(c.network.clone(), vec!["x".into()], c.colour).is_err());
        assert!(ModelCheckpoint::new(c.network, c.classes, ColourMode::Rgb).is_err());
    }
}

//! Convolutional classifier: architecture, training, checkpoints, transfer.

mod arch;
mod checkpoint;
mod features;
mod network;
mod train;

use std::path::Path;

use rand::seq::SliceRandom;

pub use arch::{ArchitectureDescriptor, LayerSpec};
pub use checkpoint::{ModelCheckpoint, FORMAT_VERSION, MAGIC};
pub use features::{read_features, write_features, FeatureSet};
pub use network::{BatchGradients, ForwardCache, LayerParams, Network, ParamSet, Sgd};
pub use train::{
    evaluate, fit, fit_with_validator, predict, EarlyStopping, EpochRecord, EvalStats, Fitted,
    StopDecision, TensorSet, TrainConfig, TrainingHistory,
};

use crate::datasets::{stream_rng, DatasetItem};
use crate::error::{domain_err, Error, Result};
use crate::imaging::{self, ColourMode};
use crate::scalar::Real;

const HOLDOUT_STREAM: u64 = 11;

/// Loads dataset items as tensors of `size`×`size`; labels become 0-based.
pub fn load_tensors<T: Real>(
    items: &[DatasetItem],
    image_root: &Path,
    size: usize,
    colour: ColourMode,
) -> Result<TensorSet<T>> {
    let mut set = TensorSet::new([colour.channels(), size, size]);
    set.values.reserve(items.len() * set.sample_len());
    for it in items {
        let t = imaging::prepare::<T>(&image_root.join(&it.image_path), size, colour)?;
        let label = usize::from(it.class)
            .checked_sub(1)
            .ok_or_else(|| domain_err(format!("{}: class 0", it.image_path)))?;
        set.push(&t.values, label)?;
    }
    Ok(set)
}

/// Moves `floor(fraction * n)` samples of each class out of `set`, chosen by `seed`.
pub fn holdout<T: Real>(
    set: &TensorSet<T>,
    fraction: f64,
    seed: u64,
) -> Result<(TensorSet<T>, TensorSet<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(domain_err(format!(
            "holdout fraction {fraction} outside (0, 1)"
        )));
    }
    let classes = set.labels.iter().max().map_or(0, |m| m + 1);
    let mut held = vec![false; set.len()];
    let mut rng = stream_rng(seed, HOLDOUT_STREAM);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64 + 1e-9).floor() as usize;
        for &i in &idx[..k] {
            held[i] = true;
        }
    }
    let mut keep = TensorSet::new(set.shape);
    let mut out = TensorSet::new(set.shape);
    for (i, &h) in held.iter().enumerate() {
        let dst = if h { &mut out } else { &mut keep };
        dst.push(set.sample(i), set.labels[i])?;
    }
    if out.is_empty() {
        return Err(domain_err(
            "holdout is empty; raise the fraction or add samples",
        ));
    }
    Ok((keep, out))
}

/// Replaces the final fully connected layer with a freshly initialized
/// `classes.len()`-way layer, keeping every other weight.
pub fn reinit_head(
    ckpt: &ModelCheckpoint,
    classes: Vec<String>,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let net = &ckpt.network;
    let head = net
        .arch()
        .head_index()
        .ok_or_else(|| Error::Config("network has no fully connected head".into()))?;
    let k = classes.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "head needs at least 2 classes, got {k}"
        )));
    }
    let mut arch = net.arch().clone();
    if let LayerSpec::FullyConnected { outputs, .. } = &mut arch.layers[head] {
        *outputs = k;
    }
    let mut params = net.params().clone();
    let counts = arch.layers[head].param_counts().expect("dense layer");
    params[head] = Some(LayerParams {
        weights: vec![0.0; counts.0],
        bias: vec![0.0; counts.1],
    });
    let mut fresh = Network::from_params(arch, params)?;
    fresh.reinit_layer(head, seed)?;
    ModelCheckpoint::new(fresh, classes, ckpt.colour)
}

fn class_order(labels: &[String]) -> Vec<String> {
    let mut out: Vec<String> = labels.to_vec();
    out.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
    out.dedup();
    out
}

fn feature_tensors(set: &FeatureSet, classes: &[String], what: &str) -> Result<TensorSet<f32>> {
    let mut t = TensorSet::new([set.dim, 1, 1]);
    for (i, label) in set.labels.iter().enumerate() {
        let c = classes.iter().position(|x| x == label).ok_or_else(|| {
            domain_err(format!(
                "{what} row {} has label {label:?} not seen in training",
                set.ids[i]
            ))
        })?;
        t.push(set.row(i), c)?;
    }
    Ok(t)
}

/// Trains a linear softmax classifier on precomputed feature vectors.
/// Classes are the distinct training labels in numeric-then-lexical order.
pub fn train_head_on_features(
    train: &FeatureSet,
    val: Option<&FeatureSet>,
    config: &TrainConfig,
) -> Result<ModelCheckpoint> {
    let classes = class_order(&train.labels);
    if classes.len() < 2 {
        return Err(domain_err("feature head needs at least 2 training labels"));
    }
    if let Some(v) = val {
        if v.dim != train.dim {
            return Err(domain_err(format!(
                "validation features have {} dimensions, training {}",
                v.dim, train.dim
            )));
        }
    }
    let tr = feature_tensors(train, &classes, "training")?;
    let va = match val {
        Some(v) => feature_tensors(v, &classes, "validation")?,
        None => tr.clone(),
    };
    let net = Network::new(
        ArchitectureDescriptor::linear_head(train.dim, classes.len()),
        config.init_seed,
    )?;
    let fitted = fit(net, &tr, &va, config)?;
    let mut ckpt = ModelCheckpoint::new(fitted.network, classes, ColourMode::default())?;
    ckpt.history = fitted.history;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ckpt() -> ModelCheckpoint {
        let arch = ArchitectureDescriptor::reference(1, 8, 3);
        ModelCheckpoint::new(
            Network::new(arch, 1).unwrap(),
            vec!["a".into(), "b".into(), "c".into()],
            ColourMode::Grayscale1ch,
        )
        .unwrap()
    }

    #[test]
    fn reinit_head_keeps_backbone() {
        let c = small_ckpt();
        let r = reinit_head(&c, vec!["x".into(), "y".into()], 5).unwrap();
        assert_eq!(r.network.class_count(), 2);
        let head = c.network.arch().head_index().unwrap();
        for i in 0..head {
            assert_eq!(r.network.params()[i], c.network.params()[i]);
        }
        assert_eq!(r.history.epochs_run(), 0);
        assert!(reinit_head(&c, vec!["x".into()], 5).is_err());
    }

    #[test]
    fn holdout_is_stratified() {
        let mut set: TensorSet<f32> = TensorSet::new([1, 1, 1]);
        for i in 0..30 {
            set.push(&[i as f32], usize::from(i % 3 == 0)).unwrap();
        }
        let (keep, held) = holdout(&set, 0.2, 1).unwrap();
        assert_eq!(held.len(), 4 + 2);
        assert_eq!(keep.len() + held.len(), 30);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let l: Vec<String> = ["10", "2", "1", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(class_order(&l), vec!["1", "2", "10"]);
    }

    #[test]
    fn feature_head_learns_threshold() {
        let mut csv = String::from("id,v1,v2,label\n");
        for i in 0..40 {
            let x = i as f32 / 40.0;
            csv.push_str(&format!(
                "r{i},{x},{},{}\n",
                1.0 - x,
                if x < 0.5 { "low" } else { "high" }
            ));
        }
        let set = read_features(csv.as_bytes()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 60,
            patience: 60,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let ckpt = train_head_on_features(&set, None, &cfg).unwrap();
        assert_eq!(ckpt.classes, vec!["high", "low"]);
        let best = ckpt.history.epochs[ckpt.history.best_epoch - 1].val_accuracy;
        assert!(best >= 0.9, "{best}");
    }
}

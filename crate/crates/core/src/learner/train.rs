use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{cross_entropy, Network, Sgd};
use crate::datasets::stream_rng;
use crate::error::{domain_err, Error, Result};
use crate::scalar::Real;

const SHUFFLE_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Seed for per-epoch shuffling.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            min_delta: 1e-4,
            init_seed: 0,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if !(self.min_delta > 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be positive");
        }
        Ok(())
    }
}

/// Samples of one shape held contiguously in memory, labels 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<T> {
    pub shape: [usize; 3],
    pub values: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> TensorSet<T> {
    pub fn new(shape: [usize; 3]) -> Self {
        TensorSet {
            shape,
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, values: &[T], label: usize) -> Result<()> {
        if values.len() != self.sample_len() {
            return Err(domain_err(format!(
                "sample of {} values in a set of {:?}",
                values.len(),
                self.shape
            )));
        }
        self.values.extend_from_slice(values);
        self.labels.push(label);
        Ok(())
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.values[i * len..(i + 1) * len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept; 0 before any training.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based stopping on validation accuracy.
///
/// An epoch improves when it beats the last improving value by at least
/// `min_delta`; `patience` consecutive non-improving epochs stop training.
/// The restored snapshot is the strictly best accuracy seen, earliest on ties.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    stale: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            reference: f64::NEG_INFINITY,
            stale: 0,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    /// Returns whether this epoch is the new best and whether to stop.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> (bool, StopDecision) {
        let is_best = accuracy > self.best;
        if is_best {
            self.best = accuracy;
            self.best_epoch = epoch;
        }
        if accuracy >= self.reference + self.min_delta {
            self.reference = accuracy;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let decision = if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (is_best, decision)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best
    }
}

/// Mean cross-entropy and accuracy, reduced in f64.
pub fn evaluate<T: Real>(net: &Network<T>, set: &TensorSet<T>) -> Result<EvalStats> {
    if set.is_empty() {
        return Err(domain_err("evaluation set is empty"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let k = net.class_count();
    for (chunk, labels) in set
        .values
        .chunks(64 * set.sample_len())
        .zip(set.labels.chunks(64))
    {
        let probs = net.forward_batch(chunk, labels.len())?;
        for (row, &l) in probs.chunks(k).zip(labels) {
            loss += cross_entropy(row, l);
            if predicted(row) == l {
                correct += 1;
            }
        }
    }
    let n = set.len() as f64;
    Ok(EvalStats {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

fn predicted<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Arg-max class (0-based) of every sample.
pub fn predict<T: Real>(net: &Network<T>, set: &TensorSet<T>) -> Result<Vec<usize>> {
    let k = net.class_count();
    let mut out = Vec::with_capacity(set.len());
    for (chunk, labels) in set
        .values
        .chunks(64 * set.sample_len().max(1))
        .zip(set.labels.chunks(64))
    {
        let probs = net.forward_batch(chunk, labels.len())?;
        out.extend(probs.chunks(k).map(predicted));
    }
    Ok(out)
}

pub struct Fitted<T> {
    pub network: Network<T>,
    pub history: TrainingHistory,
}

fn check_set<T: Real>(net: &Network<T>, set: &TensorSet<T>, what: &str) -> Result<()> {
    if set.shape != net.arch().input {
        return Err(Error::Shape {
            layer: 0,
            kind: "input",
            detail: format!(
                "{what} samples are {:?}, network expects {:?}",
                set.shape,
                net.arch().input
            ),
        });
    }
    let k = net.class_count();
    if let Some(&l) = set.labels.iter().find(|&&l| l >= k) {
        return Err(domain_err(format!("{what} label {l} outside {k} classes")));
    }
    Ok(())
}

/// Trains with validation accuracy on `val` driving early stopping.
pub fn fit<T: Real>(
    net: Network<T>,
    train: &TensorSet<T>,
    val: &TensorSet<T>,
    config: &TrainConfig,
) -> Result<Fitted<T>> {
    check_set(&net, val, "validation")?;
    fit_with_validator(net, train, config, |n| evaluate(n, val))
}

/// Trains with a caller-supplied validation measure, called once per epoch.
pub fn fit_with_validator<T: Real>(
    mut net: Network<T>,
    train: &TensorSet<T>,
    config: &TrainConfig,
    mut validator: impl FnMut(&Network<T>) -> Result<EvalStats>,
) -> Result<Fitted<T>> {
    config.validate()?;
    check_set(&net, train, "training")?;
    if train.is_empty() {
        return Err(domain_err("training set is empty"));
    }
    let mut opt = Sgd::new(&net, config.learning_rate, config.momentum);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut rng = stream_rng(config.shuffle_seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best = net.clone();
    let sample_len = train.sample_len();
    let mut batch = Vec::with_capacity(config.batch_size * sample_len);
    let mut labels = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            labels.clear();
            for &i in idx {
                batch.extend_from_slice(train.sample(i));
                labels.push(train.labels[i]);
            }
            let g = net.gradients(&batch, &labels)?;
            if !g.loss_sum.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {} (learning rate {})",
                    b + 1,
                    config.learning_rate
                )));
            }
            loss_sum += g.loss_sum;
            correct += g.correct;
            opt.step(&mut net, &g.grads);
        }
        let val = validator(&net)?;
        if val.loss.is_nan() {
            return Err(Error::Diverged(format!(
                "non-finite validation loss at epoch {epoch} (learning rate {})",
                config.learning_rate
            )));
        }
        let n = train.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        });
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            loss_sum / n,
            correct as f64 / n,
            val.loss,
            val.accuracy
        );
        let (is_best, decision) = stopper.observe(epoch, val.accuracy);
        if is_best {
            best = net.clone();
        }
        if decision == StopDecision::Stop {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok(Fitted {
        network: best,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ArchitectureDescriptor;

    #[test]
    fn early_stopping_sequence() {
        let mut s = EarlyStopping::new(3, 1e-3);
        let seq = [0.5, 0.6, 0.6, 0.6, 0.6];
        let mut stopped_at = None;
        for (i, &a) in seq.iter().enumerate() {
            if s.observe(i + 1, a).1 == StopDecision::Stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn small_gains_do_not_reset_patience() {
        let mut s = EarlyStopping::new(2, 0.05);
        assert_eq!(s.observe(1, 0.50).1, StopDecision::Continue);
        assert_eq!(s.observe(2, 0.52).1, StopDecision::Continue);
        assert_eq!(s.observe(3, 0.54).1, StopDecision::Stop);
        assert_eq!(s.best_epoch(), 3);
    }

    fn blobs(n: usize) -> TensorSet<f32> {
        let mut set = TensorSet::new([2, 1, 1]);
        for i in 0..n {
            let l = i % 2;
            let jitter = (i as f32 * 0.37).sin() * 0.2;
            let v = if l == 0 {
                [1.0 + jitter, -1.0]
            } else {
                [-1.0, 1.0 + jitter]
            };
            set.push(&v, l).unwrap();
        }
        set
    }

    #[test]
    fn learns_separable_blobs() {
        let net = Network::new(ArchitectureDescriptor::linear_head(2, 2), 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            batch_size: 8,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let set = blobs(40);
        let fitted = fit(net, &set, &set, &cfg).unwrap();
        assert_eq!(evaluate(&fitted.network, &set).unwrap().accuracy, 1.0);
        assert!(fitted.history.epochs_run() >= 1);
    }

    #[test]
    fn divergence_is_reported() {
        let net = Network::new(ArchitectureDescriptor::linear_head(2, 2), 1).unwrap();
        let mut set = blobs(8);
        set.values[0] = f32::NAN;
        let err = fit(net, &set, &blobs(4), &TrainConfig::default())
            .err()
            .unwrap();
        assert!(
            matches!(err, Error::Diverged(ref m) if m.contains("epoch 1")),
            "{err}"
        );
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            min_delta: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

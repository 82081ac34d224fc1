use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetItem, DatasetSplit};
use crate::error::{domain_err, Result};

/// Independent RNG stream per purpose/class so that one class's draw never
/// perturbs another's.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SPLIT_STREAM_BASE: u64 = 1 << 32;
const RANDOM_SPLIT_STREAM: u64 = 1 << 33;

/// Keeps `min(cap, available)` items of each capped class, chosen without
/// replacement; input order is preserved. `caps[c - 1]` applies to class `c`.
pub fn downsample<T: Clone>(
    items: &[T],
    class_of: impl Fn(&T) -> u16,
    caps: &[Option<usize>],
    seed: u64,
) -> Vec<T> {
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_class.entry(class_of(it)).or_default().push(i);
    }
    let mut keep = vec![true; items.len()];
    for (&class, positions) in &by_class {
        let cap = caps.get(usize::from(class) - 1).copied().flatten();
        let Some(cap) = cap else { continue };
        if positions.len() <= cap {
            continue;
        }
        let mut shuffled = positions.clone();
        shuffled.shuffle(&mut stream_rng(seed, u64::from(class)));
        for &p in &shuffled[cap..] {
            keep[p] = false;
        }
    }
    items
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(it, _)| it.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Stratified,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSplit {
    #[default]
    ImageLevel,
    BridgeLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
    pub group: GroupSplit,
}

fn train_count(fraction: f64, n: usize) -> usize {
    // guards products like 0.29 * 100 = 28.999999999999996
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Splits items into train and test. Stratified mode applies
/// `floor(fraction * n)` per class (per bridge group count in bridge-level
/// mode); random mode applies it to the whole set.
pub fn split(
    items: &[DatasetItem],
    classes: Vec<String>,
    opts: SplitOptions,
) -> Result<DatasetSplit> {
    if !(opts.fraction > 0.0 && opts.fraction < 1.0) {
        return Err(domain_err(format!(
            "split fraction {} outside (0, 1)",
            opts.fraction
        )));
    }
    // Units are single images or whole bridges; each unit has one stratum.
    let units: Vec<Vec<usize>> = match opts.group {
        GroupSplit::ImageLevel => (0..items.len()).map(|i| vec![i]).collect(),
        GroupSplit::BridgeLevel => {
            let mut order: Vec<Vec<usize>> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for (i, it) in items.iter().enumerate() {
                let key = it
                    .bridge
                    .clone()
                    .unwrap_or_else(|| format!("image:{}", it.image_path));
                let slot = *index.entry(key).or_insert_with(|| {
                    order.push(Vec::new());
                    order.len() - 1
                });
                order[slot].push(i);
            }
            order
        }
    };

    let mut to_train = vec![false; items.len()];
    match opts.mode {
        SplitMode::Stratified => {
            let mut strata: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
            for (u, members) in units.iter().enumerate() {
                strata.entry(items[members[0]].class).or_default().push(u);
            }
            for (&class, unit_ids) in &strata {
                let n = unit_ids.len();
                let label = classes
                    .get(usize::from(class) - 1)
                    .map(String::as_str)
                    .unwrap_or("?");
                let what = match opts.group {
                    GroupSplit::ImageLevel => "images",
                    GroupSplit::BridgeLevel => "bridges",
                };
                if n < 2 {
                    return Err(domain_err(format!(
                        "class {class} ({label}) has {n} {what}; a stratified split needs at least 2"
                    )));
                }
                let k = train_count(opts.fraction, n);
                if k == 0 {
                    return Err(domain_err(format!(
                        "class {class} ({label}): {n} {what} leave no training sample at fraction {}",
                        opts.fraction
                    )));
                }
                let mut shuffled = unit_ids.clone();
                shuffled.shuffle(&mut stream_rng(
                    opts.seed,
                    SPLIT_STREAM_BASE + u64::from(class),
                ));
                for &u in &shuffled[..k] {
                    for &i in &units[u] {
                        to_train[i] = true;
                    }
                }
            }
        }
        SplitMode::Random => {
            let mut order: Vec<usize> = (0..units.len()).collect();
            order.shuffle(&mut stream_rng(opts.seed, RANDOM_SPLIT_STREAM));
            let k = train_count(opts.fraction, units.len());
            for &u in &order[..k] {
                for &i in &units[u] {
                    to_train[i] = true;
                }
            }
            // a class seen only in test moves its first unit to train
            let mut in_train: Vec<bool> = vec![false; classes.len() + 1];
            for (i, it) in items.iter().enumerate() {
                if to_train[i] {
                    in_train[usize::from(it.class)] = true;
                }
            }
            for &u in &order[k..] {
                let c = usize::from(items[units[u][0]].class);
                if !in_train[c] {
                    for &i in &units[u] {
                        to_train[i] = true;
                    }
                    in_train[c] = true;
                }
            }
        }
    }

    let mut out = DatasetSplit {
        classes,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (it, t) in items.iter().zip(to_train) {
        if t {
            out.train.push(it.clone());
        } else {
            out.test.push(it.clone());
        }
    }
    Ok(out)
}

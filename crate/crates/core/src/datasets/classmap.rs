use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::nbi::DESIGN_LOAD_NAMES;

/// Maps the twelve design-load classes onto a dataset's output classes.
///
/// Output classes are ordered by anchor: a passthrough class anchors at
/// itself, a merge group at its first listed member. Indices run from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMapSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub drop: BTreeSet<u8>,
    #[serde(default)]
    pub merge_groups: Vec<Vec<u8>>,
}

/// Validated lookup table derived from a [`ClassMapSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    table: [Option<u16>; 12],
    labels: Vec<String>,
    members: Vec<Vec<u8>>,
}

impl ClassMapSpec {
    pub fn compile(&self) -> Result<ClassMap> {
        let bad = |msg: String| Error::Config(format!("class map {:?}: {msg}", self.name));
        let mut used = BTreeSet::new();
        for &c in self.drop.iter().chain(self.merge_groups.iter().flatten()) {
            if !(1..=12).contains(&c) {
                return Err(bad(format!("class {c} outside 1..=12")));
            }
        }
        for g in &self.merge_groups {
            if g.is_empty() {
                return Err(bad("empty merge group".into()));
            }
            for &c in g {
                if self.drop.contains(&c) {
                    return Err(bad(format!("class {c} both dropped and merged")));
                }
                if !used.insert(c) {
                    return Err(bad(format!("class {c} in more than one merge group")));
                }
            }
        }

        // (anchor, members)
        let mut outputs: Vec<(u8, Vec<u8>)> = self
            .merge_groups
            .iter()
            .map(|g| (g[0], g.clone()))
            .collect();
        for c in 1..=12u8 {
            if !self.drop.contains(&c) && !used.contains(&c) {
                outputs.push((c, vec![c]));
            }
        }
        outputs.sort_by_key(|(anchor, _)| *anchor);

        let mut table = [None; 12];
        let mut labels = Vec::with_capacity(outputs.len());
        let mut members = Vec::with_capacity(outputs.len());
        for (i, (_, group)) in outputs.into_iter().enumerate() {
            for &c in &group {
                table[usize::from(c) - 1] = Some(i as u16 + 1);
            }
            labels.push(
                group
                    .iter()
                    .map(|&c| DESIGN_LOAD_NAMES[usize::from(c) - 1])
                    .collect::<Vec<_>>()
                    .join("+"),
            );
            members.push(group);
        }
        if labels.is_empty() {
            return Err(bad("every class dropped".into()));
        }
        Ok(ClassMap {
            table,
            labels,
            members,
        })
    }
}

impl ClassMap {
    /// Output class (1-based) or `None` when dropped.
    pub fn map(&self, design_class: u8) -> Result<Option<u16>> {
        if !(1..=12).contains(&design_class) {
            return Err(domain_err(format!(
                "design-load class {design_class} outside 1..=12"
            )));
        }
        Ok(self.table[usize::from(design_class) - 1])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn members(&self, output_class: u16) -> &[u8] {
        &self.members[usize::from(output_class) - 1]
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }
}

pub fn map_design_load(design_class: u8, spec: &ClassMapSpec) -> Result<Option<u16>> {
    spec.compile()?.map(design_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dl1() -> ClassMapSpec {
        ClassMapSpec {
            name: "DL1".into(),
            drop: [7, 8, 11, 12].into(),
            merge_groups: vec![],
        }
    }

    fn dl5() -> ClassMapSpec {
        ClassMapSpec {
            name: "DL5".into(),
            drop: BTreeSet::new(),
            merge_groups: vec![vec![5, 6, 9], vec![10, 11], vec![12, 7, 8]],
        }
    }

    #[test]
    fn dropped_and_passthrough() {
        assert_eq!(map_design_load(7, &dl1()).unwrap(), None);
        assert_eq!(map_design_load(2, &dl1()).unwrap(), Some(2));
        assert_eq!(map_design_load(9, &dl1()).unwrap(), Some(7));
        assert_eq!(map_design_load(10, &dl1()).unwrap(), Some(8));
        assert_eq!(dl1().compile().unwrap().class_count(), 8);
    }

    #[test]
    fn merged_classes_share_output() {
        let m = dl5().compile().unwrap();
        assert_eq!(m.map(9).unwrap(), m.map(5).unwrap());
        assert_eq!(m.map(6).unwrap(), Some(5));
        assert_eq!(m.map(11).unwrap(), Some(6));
        assert_eq!(m.map(7).unwrap(), Some(7));
        assert_eq!(m.labels()[4], "HS20+HS20+Mod+HL93");
        assert_eq!(m.members(7), &[12, 7, 8]);
    }

    #[test]
    fn anchor_orders_merged_group_last() {
        let dl3 = ClassMapSpec {
            name: "DL3".into(),
            drop: BTreeSet::new(),
            merge_groups: vec![vec![12, 7, 8, 11]],
        };
        let m = dl3.compile().unwrap();
        assert_eq!(m.class_count(), 9);
        assert_eq!(m.map(11).unwrap(), Some(9));
        assert_eq!(m.map(10).unwrap(), Some(8));
    }

    #[test]
    fn invalid_specs() {
        assert!(map_design_load(13, &dl1()).is_err());
        assert!(map_design_load(0, &dl1()).is_err());
        let overlap = ClassMapSpec {
            name: "x".into(),
            drop: [5].into(),
            merge_groups: vec![vec![5, 6]],
        };
        assert!(overlap.compile().is_err());
        let twice = ClassMapSpec {
            name: "x".into(),
            drop: BTreeSet::new(),
            merge_groups: vec![vec![1, 2], vec![2, 3]],
        };
        assert!(twice.compile().is_err());
        let all = ClassMapSpec {
            name: "x".into(),
            drop: (1..=12).collect(),
            merge_groups: vec![],
        };
        assert!(all.compile().is_err());
    }
}

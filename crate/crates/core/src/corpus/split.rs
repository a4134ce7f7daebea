use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LinkRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            valid_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.valid_frac, self.test_frac];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<LinkRecord>,
    pub valid: Vec<LinkRecord>,
    pub test: Vec<LinkRecord>,
}

/// Splits true links into train / validation / test.
///
/// Links sharing an issue stay together. Issue groups are shuffled with the
/// split seed; validation and test are filled up to `floor(n * frac)` links
/// (at least one) with whole groups, everything left goes to train.
pub fn split_links(links: &[LinkRecord], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if links.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 links to split, got {}",
            links.len()
        )));
    }
    if let Some(l) = links.iter().find(|l| !l.is_true()) {
        return Err(Error::InvalidInput(format!(
            "only true links can be split, got {}/{}",
            l.issue_id, l.commit_id
        )));
    }

    // groups in order of first appearance
    let mut order: Vec<&str> = Vec::new();
    let mut members: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    for (i, l) in links.iter().enumerate() {
        members
            .entry(&l.issue_id)
            .or_insert_with(|| {
                order.push(&l.issue_id);
                Vec::new()
            })
            .push(i);
    }
    let mut groups: Vec<Vec<usize>> = order.iter().map(|k| members.remove(k).unwrap()).collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let n = links.len() as f64;
    let targets = [
        ((n * spec.valid_frac).floor() as usize).max(1),
        ((n * spec.test_frac).floor() as usize).max(1),
    ];
    let mut taken = vec![false; groups.len()];
    let mut picked: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (slot, &target) in targets.iter().enumerate() {
        let mut size = 0;
        for (g, group) in groups.iter().enumerate() {
            if !taken[g] && size + group.len() <= target {
                taken[g] = true;
                size += group.len();
                picked[slot].push(g);
            }
        }
        if size == 0 {
            // every free group is bigger than the target: take the smallest one
            // as long as train keeps something
            let free: Vec<usize> = (0..groups.len()).filter(|&g| !taken[g]).collect();
            if free.len() < 2 {
                return Err(Error::InvalidInput(
                    "not enough distinct issues for three non-empty splits".into(),
                ));
            }
            let g = *free.iter().min_by_key(|&&g| (groups[g].len(), g)).unwrap();
            taken[g] = true;
            picked[slot].push(g);
        }
    }
    let train_groups: Vec<usize> = (0..groups.len()).filter(|&g| !taken[g]).collect();
    if train_groups.is_empty() {
        return Err(Error::InvalidInput(
            "not enough distinct issues for three non-empty splits".into(),
        ));
    }
    let collect = |gs: &[usize]| -> Vec<LinkRecord> {
        gs.iter()
            .flat_map(|&g| groups[g].iter().map(|&i| links[i].clone()))
            .collect()
    };
    Ok(Splits {
        train: collect(&train_groups),
        valid: collect(&picked[0]),
        test: collect(&picked[1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn link(issue: &str, commit: &str) -> LinkRecord {
        LinkRecord::new(issue, commit, Provenance::TaggedTrue)
    }

    fn one_to_one(n: usize) -> Vec<LinkRecord> {
        (0..n).map(|i| link(&format!("I-{i}"), &format!("c{i}"))).collect()
    }

    #[test]
    fn six_two_two() {
        let s = split_links(&one_to_one(10), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn deterministic_given_seed() {
        let links = one_to_one(40);
        let spec = SplitSpec {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(split_links(&links, &spec).unwrap(), split_links(&links, &spec).unwrap());
        let other = SplitSpec { seed: 12, ..spec };
        assert_ne!(split_links(&links, &spec).unwrap(), split_links(&links, &other).unwrap());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(split_links(&one_to_one(2), &SplitSpec::default()).is_err());
        let one_issue = vec![link("A", "c1"), link("A", "c2"), link("A", "c3")];
        assert!(split_links(&one_issue, &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train_frac: 0.5,
            ..Default::default()
        };
        assert!(split_links(&one_to_one(10), &bad).is_err());
        let falsy = vec![
            link("A", "c1"),
            link("B", "c2"),
            LinkRecord::new("C", "c3", Provenance::GeneratedFalseTime),
        ];
        assert!(split_links(&falsy, &SplitSpec::default()).is_err());
    }

    /// Brute force over every assignment of the three issue groups to the
    /// three splits: only assignments keeping each split non-empty are
    /// admissible, and the group of three always lands whole in one split.
    #[test]
    fn same_issue_group_lands_together() {
        let mut links = vec![link("A", "a1"), link("A", "a2"), link("A", "a3")];
        links.push(link("B", "b1"));
        links.push(link("C", "c1"));
        let admissible: BTreeSet<[usize; 3]> = (0..27)
            .map(|code| [code % 3, (code / 3) % 3, code / 9])
            .filter(|a| (0..3).all(|s| a.contains(&s)))
            .collect();
        for seed in 0..20 {
            let s = split_links(&links, &SplitSpec { seed, ..Default::default() }).unwrap();
            let where_is = |issue: &str| {
                [&s.train, &s.valid, &s.test]
                    .iter()
                    .position(|part| part.iter().any(|l| l.issue_id == issue))
                    .unwrap()
            };
            let assignment = [where_is("A"), where_is("B"), where_is("C")];
            assert!(admissible.contains(&assignment), "{assignment:?}");
            let a_split = [&s.train, &s.valid, &s.test][assignment[0]];
            assert_eq!(a_split.iter().filter(|l| l.issue_id == "A").count(), 3);
        }
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_disjoint_and_cohesive(
            sizes in prop::collection::vec(1usize..4, 3..40),
            seed in 0u64..1000,
        ) {
            let mut links = Vec::new();
            for (g, &k) in sizes.iter().enumerate() {
                for j in 0..k {
                    links.push(link(&format!("I-{g}"), &format!("c{g}-{j}")));
                }
            }
            let spec = SplitSpec { seed, ..Default::default() };
            let Ok(s) = split_links(&links, &spec) else { return Ok(()); };
            let mut all: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
            all.sort();
            let mut orig = links.clone();
            orig.sort();
            prop_assert_eq!(all, orig);
            prop_assert!(!s.train.is_empty() && !s.valid.is_empty() && !s.test.is_empty());
            let mut home: BTreeMap<&str, usize> = BTreeMap::new();
            for (p, part) in [&s.train, &s.valid, &s.test].iter().enumerate() {
                for l in part.iter() {
                    let prev = home.insert(&l.issue_id, p);
                    prop_assert!(prev.is_none() || prev == Some(p));
                }
            }
        }
    }
}

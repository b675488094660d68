use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encode::EncodedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Row-id partition, the persisted form of a [`SplitBundle`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitBundle {
    pub fn ids(&self) -> SplitIds {
        SplitIds {
            train: self.train.row_ids.clone(),
            val: self.val.row_ids.clone(),
            test: self.test.row_ids.clone(),
        }
    }
}

/// Splits each class separately by largest-remainder allocation, so every
/// class lands within one row of its target share in each split.
pub fn stratified_split(ds: &EncodedDataset, ratios: [f64; 3], seed: u64) -> Result<SplitBundle> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios sum to {sum}, not 1")));
    }

    let mut rng = crate::util::rng(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == class).collect();
        if members.len() < 3 {
            return Err(Error::data(format!(
                "class {class} has {} rows, need at least 3 to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let counts = allocate(members.len(), &ratios);
        let mut start = 0;
        for (part, &cnt) in parts.iter_mut().zip(counts.iter()) {
            part.extend_from_slice(&members[start..start + cnt]);
            start += cnt;
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [tr, va, te] = parts;
    Ok(SplitBundle {
        train: ds.subset(&tr),
        val: ds.subset(&va),
        test: ds.subset(&te),
        ratios,
        seed,
    })
}

fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // largest fractional part first; earlier split wins ties
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, FeatureKind, FeatureSpec};
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn toy(labels: Vec<u8>) -> EncodedDataset {
        let schema = Schema {
            features: vec![FeatureSpec {
                name: "x".into(),
                kind: FeatureKind::Categorical {
                    cardinality: 2,
                    vocabulary: vec!["a".into(), "b".into()],
                },
            }],
            target_name: "y".into(),
            target_values: ["0".into(), "1".into()],
        };
        let n = labels.len();
        EncodedDataset::new(
            Arc::new(schema),
            (0..n).map(|i| (i % 2) as u32).collect(),
            vec![],
            labels,
            (0..n as u64).map(|i| i * 10 + 3).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_rows() {
        let ds = toy(vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
        let s = stratified_split(&ds, [0.6, 0.2, 0.2], 43).unwrap();
        assert_eq!((s.train.n(), s.val.n(), s.test.n()), (6, 2, 2));
        assert!(s.train.positives() >= 2);
        let again = stratified_split(&ds, [0.6, 0.2, 0.2], 43).unwrap();
        assert_eq!(s.ids(), again.ids());
    }

    #[test]
    fn bad_ratios() {
        let ds = toy(vec![1, 1, 1, 0, 0, 0]);
        assert!(stratified_split(&ds, [0.5, 0.5, 0.1], 43).is_err());
        assert!(stratified_split(&ds, [1.0, 0.0, 0.0], 43).is_err());
        let tiny = toy(vec![1, 1, 0, 0, 0]);
        assert!(stratified_split(&tiny, [0.6, 0.2, 0.2], 43).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_stratification(
            labels in prop::collection::vec(0u8..2, 6..300),
            a in 1u32..10, b in 1u32..10, c in 1u32..10,
            seed in any::<u64>(),
        ) {
            let pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(pos >= 3 && labels.len() - pos >= 3);
            let tot = (a + b + c) as f64;
            let mut ratios = [a as f64 / tot, b as f64 / tot, 0.0];
            ratios[2] = 1.0 - ratios[0] - ratios[1];
            let ds = toy(labels);
            let s = stratified_split(&ds, ratios, seed).unwrap();

            let mut all = HashSet::new();
            for part in [&s.train, &s.val, &s.test] {
                for id in &part.row_ids {
                    prop_assert!(all.insert(*id), "duplicate id {}", id);
                }
            }
            let src: HashSet<u64> = ds.row_ids.iter().copied().collect();
            prop_assert_eq!(all, src);

            let overall = ds.positives() as f64 / ds.n() as f64;
            for (part, r) in [&s.train, &s.val, &s.test].into_iter().zip(ratios) {
                for class in [0u8, 1] {
                    let total = ds.labels.iter().filter(|&&y| y == class).count() as f64;
                    let got = part.labels.iter().filter(|&&y| y == class).count() as f64;
                    prop_assert!((got - r * total).abs() <= 1.0 + 1e-9);
                }
                if part.n() > 0 {
                    let frac = part.positives() as f64 / part.n() as f64;
                    prop_assert!((frac - overall).abs() <= 1.0 / part.n() as f64 + 1e-12,
                        "frac {} overall {} n {}", frac, overall, part.n());
                }
            }
        }
    }
}

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};

/// Equal-count sample per category of one feature, drawn from validation rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSubset {
    pub feature: usize,
    /// Sorted ascending.
    pub row_ids: Vec<u64>,
    /// Rows taken from each present category.
    pub per_category: usize,
    pub categories: Vec<u32>,
}

/// Downsamples every present category of feature `j` to the smallest
/// category count, without replacement.
pub fn build_balanced_subset(val: &EncodedDataset, j: usize, seed: u64) -> Result<BalancedSubset> {
    if j >= val.k() {
        return Err(Error::config(format!(
            "feature {j} is not a categorical feature (k={})",
            val.k()
        )));
    }
    let card = val.schema.cardinalities()[j];
    // one extra bucket for the reserved unknown index
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); card + 1];
    for i in 0..val.n() {
        buckets[val.cat_value(i, j) as usize].push(i);
    }
    if !buckets[card].is_empty() {
        log::warn!(
            "feature {j}: {} validation rows hold an unknown category and are left out",
            buckets[card].len()
        );
    }
    buckets.truncate(card);
    let absent: Vec<usize> = (0..card).filter(|&c| buckets[c].is_empty()).collect();
    if !absent.is_empty() {
        log::warn!("feature {j}: categories {absent:?} have no validation rows and are excluded");
    }
    let present: Vec<u32> = (0..card as u32).filter(|&c| !buckets[c as usize].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::data(format!(
            "feature {j}: need at least two categories in the validation split, found {}",
            present.len()
        )));
    }
    let m = present
        .iter()
        .map(|&c| buckets[c as usize].len())
        .min()
        .expect("non-empty");

    let mut rng = crate::util::rng(seed);
    let mut row_ids = Vec::with_capacity(m * present.len());
    for &c in &present {
        let bucket = &buckets[c as usize];
        for pick in sample(&mut rng, bucket.len(), m).into_iter() {
            row_ids.push(val.row_ids[bucket[pick]]);
        }
    }
    row_ids.sort_unstable();
    Ok(BalancedSubset {
        feature: j,
        row_ids,
        per_category: m,
        categories: present,
    })
}

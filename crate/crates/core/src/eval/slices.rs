use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};

/// Category label used for values outside the training vocabulary.
pub const UNK_LABEL: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupCell {
    pub feature: String,
    pub feature_index: usize,
    pub category: String,
    pub category_index: u32,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Accuracy per (feature, category) among rows of one true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub target_class: u8,
    pub n: usize,
    pub accuracy: f64,
    pub cells: Vec<SubgroupCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub feature: String,
    pub feature_index: usize,
    pub category: String,
    pub category_index: u32,
    pub n: usize,
    pub error_rate: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub target_class: u8,
    pub overall_error: f64,
    pub delta: f64,
    pub min_support: usize,
    pub slices: Vec<Slice>,
}

impl SliceReport {
    pub fn flagged(&self) -> impl Iterator<Item = &Slice> {
        self.slices.iter().filter(|s| s.flagged)
    }
}

pub fn subgroup_accuracy(preds: &[u8], ds: &EncodedDataset, target_class: u8) -> Result<SubgroupTable> {
    if preds.len() != ds.n() {
        return Err(Error::shape(format!(
            "{} predictions for {} rows",
            preds.len(),
            ds.n()
        )));
    }
    if target_class > 1 {
        return Err(Error::config(format!("target class must be 0 or 1, got {target_class}")));
    }
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == target_class).collect();
    if rows.is_empty() {
        return Err(Error::data(format!("no rows with label {target_class}")));
    }
    let names = ds.schema.categorical_names();
    let cards = ds.schema.cardinalities();
    let mut cells = Vec::new();
    for j in 0..ds.k() {
        let (mut n, mut hit) = (vec![0usize; cards[j] + 1], vec![0usize; cards[j] + 1]);
        for &i in &rows {
            let v = ds.cat_value(i, j) as usize;
            n[v] += 1;
            hit[v] += usize::from(preds[i] == target_class);
        }
        for v in 0..=cards[j] {
            if n[v] == 0 {
                continue;
            }
            let category = ds.decode_category(j, v as u32).unwrap_or(UNK_LABEL).to_string();
            cells.push(SubgroupCell {
                feature: names[j].to_string(),
                feature_index: j,
                category,
                category_index: v as u32,
                n: n[v],
                correct: hit[v],
                accuracy: hit[v] as f64 / n[v] as f64,
            });
        }
    }
    let correct = rows.iter().filter(|&&i| preds[i] == target_class).count();
    Ok(SubgroupTable {
        target_class,
        n: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        cells,
    })
}

/// Flags categories whose error rate within the class subset exceeds the
/// subset's overall error by at least `delta`, given enough support.
pub fn discover_slices(
    preds: &[u8],
    ds: &EncodedDataset,
    target_class: u8,
    delta: f64,
    min_support: usize,
) -> Result<SliceReport> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::config(format!("slice delta must be >= 0, got {delta}")));
    }
    if min_support == 0 {
        return Err(Error::config("slice min_support must be >= 1"));
    }
    let table = subgroup_accuracy(preds, ds, target_class)?;
    let overall_error = 1.0 - table.accuracy;
    let slices = table
        .cells
        .into_iter()
        .map(|c| {
            let error_rate = 1.0 - c.accuracy;
            Slice {
                flagged: error_rate >= overall_error + delta && c.n >= min_support,
                feature: c.feature,
                feature_index: c.feature_index,
                category: c.category,
                category_index: c.category_index,
                n: c.n,
                error_rate,
            }
        })
        .collect();
    Ok(SliceReport {
        target_class,
        overall_error,
        delta,
        min_support,
        slices,
    })
}

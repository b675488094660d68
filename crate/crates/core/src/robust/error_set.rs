use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Rows, Scratch};
use crate::ndcore::argmax;

/// Training rows whose head-`j` argmax disagrees with the true category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSet {
    pub feature: usize,
    pub row_ids: Vec<u64>,
    /// Hash of the checkpoint the set was computed from.
    pub source: String,
}

impl ErrorSet {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }
}

/// Scans every row of `train` on unmasked input; ties in the argmax go to the
/// lowest category index.
pub fn build_error_set(base: &ModelParams, train: &EncodedDataset, j: usize) -> Result<ErrorSet> {
    if j >= base.k() {
        return Err(Error::config(format!(
            "feature {j} is not a categorical feature (k={})",
            base.k()
        )));
    }
    base.check_schema(&train.schema)?;
    let mut s = Scratch::new(base);
    let mut row_ids = Vec::new();
    for i in 0..train.n() {
        base.forward_row(train.row(i), &mut s);
        let pred = argmax(s.logits_of(j));
        if pred != train.cat_value(i, j) as usize {
            row_ids.push(train.row_ids[i]);
        }
    }
    Ok(ErrorSet {
        feature: j,
        row_ids,
        source: base.hash(),
    })
}

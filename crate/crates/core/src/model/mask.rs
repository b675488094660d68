use rand::Rng;

use super::forward::RowView;
use crate::data::EncodedDataset;
use crate::error::{Error, Result};

const MAX_REDRAWS: usize = 64;

/// Rows with a per-cell corruption mask.
///
/// Masked categorical cells hold the reserved index `cardinality`; masked
/// continuous cells hold `0.0` and set their indicator bit. Loss targets
/// always come from `original`.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub original: EncodedDataset,
    /// `n × (k + c)`, categorical features first.
    pub mask: Vec<bool>,
    pub cat: Vec<u32>,
    pub cont: Vec<f64>,
    pub cont_mask: Vec<bool>,
}

impl MaskedBatch {
    /// A batch with nothing masked.
    pub fn clean(ds: &EncodedDataset) -> Self {
        Self {
            original: ds.clone(),
            mask: vec![false; ds.n() * (ds.k() + ds.c())],
            cat: ds.cat.clone(),
            cont: ds.cont.clone(),
            cont_mask: vec![false; ds.n() * ds.c()],
        }
    }

    pub fn n(&self) -> usize {
        self.original.n()
    }

    pub fn is_masked(&self, i: usize, feature: usize) -> bool {
        let f = self.original.k() + self.original.c();
        self.mask[i * f + feature]
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Anything that can feed rows to the encoder.
pub trait Rows {
    fn n(&self) -> usize;
    fn row(&self, i: usize) -> RowView<'_>;
    fn dataset(&self) -> &EncodedDataset;
}

impl Rows for EncodedDataset {
    fn n(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, i: usize) -> RowView<'_> {
        RowView {
            cat: self.cat_row(i),
            cont: self.cont_row(i),
            cont_masked: None,
        }
    }

    fn dataset(&self) -> &EncodedDataset {
        self
    }
}

impl Rows for MaskedBatch {
    fn n(&self) -> usize {
        self.original.n()
    }

    fn row(&self, i: usize) -> RowView<'_> {
        let (k, c) = (self.original.k(), self.original.c());
        RowView {
            cat: &self.cat[i * k..(i + 1) * k],
            cont: &self.cont[i * c..(i + 1) * c],
            cont_masked: Some(&self.cont_mask[i * c..(i + 1) * c]),
        }
    }

    fn dataset(&self) -> &EncodedDataset {
        &self.original
    }
}

/// Masks every cell independently with probability `rate`, redrawing any
/// row that came out fully masked.
pub fn apply_mask(batch: &EncodedDataset, rate: f64, seed: u64) -> Result<MaskedBatch> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("mask rate must lie in [0, 1), got {rate}")));
    }
    let (k, c) = (batch.k(), batch.c());
    let f = k + c;
    let cards = batch.schema.cardinalities();
    let mut rng = crate::util::rng(seed);
    let mut out = MaskedBatch::clean(batch);
    if rate == 0.0 {
        return Ok(out);
    }
    for i in 0..batch.n() {
        let row = &mut out.mask[i * f..(i + 1) * f];
        let mut tries = 0;
        loop {
            for m in row.iter_mut() {
                *m = rng.gen_bool(rate);
            }
            if row.iter().any(|m| !m) {
                break;
            }
            tries += 1;
            if tries >= MAX_REDRAWS {
                let keep = rng.gen_range(0..f);
                row[keep] = false;
                break;
            }
        }
        for j in 0..k {
            if row[j] {
                out.cat[i * k + j] = cards[j] as u32;
            }
        }
        for l in 0..c {
            if row[k + l] {
                out.cont[i * c + l] = 0.0;
                out.cont_mask[i * c + l] = true;
            }
        }
    }
    Ok(out)
}

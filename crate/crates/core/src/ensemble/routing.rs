use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::model::{LatentBatch, ModelParams, RowView, Rows, Scratch};
use crate::ndcore::softmax_cross_entropy;
use crate::robust::ModelBank;

const ROW_CHUNK: usize = 256;

/// Which model's heads score the per-feature losses used for routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingLoss {
    /// One pass through the base model.
    #[default]
    Base,
    /// Feature `j` scored by specialized model `j`.
    Specialized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedRepresentation {
    pub row_id: u64,
    /// `None` when every categorical value of the row is unknown; the base
    /// latent is used then.
    pub j_star: Option<usize>,
    /// Per categorical feature; NaN where the value is unknown.
    pub losses: Vec<f64>,
    pub z: Vec<f64>,
}

/// Index of the largest non-NaN loss, lowest index on ties.
pub fn argmax_loss(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        match best {
            Some(b) if losses[b] >= l => {}
            _ => best = Some(j),
        }
    }
    best
}

fn check_row(model: &ModelParams, row: &RowView<'_>) -> Result<()> {
    if row.cat.len() != model.k() || row.cont.len() != model.c() {
        return Err(Error::shape(format!(
            "row has {} categorical and {} continuous values, model expects {} and {}",
            row.cat.len(),
            row.cont.len(),
            model.k(),
            model.c()
        )));
    }
    let cards = model.cardinalities();
    for (j, (&v, &card)) in row.cat.iter().zip(&cards).enumerate() {
        if v as usize > card {
            return Err(Error::shape(format!("feature {j}: index {v} exceeds cardinality {card}")));
        }
    }
    Ok(())
}

fn clean(row: RowView<'_>) -> RowView<'_> {
    RowView {
        cont_masked: None,
        ..row
    }
}

fn feature_losses(model: &ModelParams, row: RowView<'_>, s: &mut Scratch, out: &mut [f64]) -> Result<()> {
    model.forward_row(row, s);
    let cards = model.cardinalities();
    for j in 0..model.k() {
        let v = row.cat[j] as usize;
        out[j] = if v == cards[j] {
            f64::NAN
        } else {
            softmax_cross_entropy(s.logits_of(j), v)?.0
        };
    }
    Ok(())
}

struct Router<'a> {
    bank: &'a ModelBank,
    mode: RoutingLoss,
    base: Scratch,
    spec: Scratch,
}

impl<'a> Router<'a> {
    fn new(bank: &'a ModelBank, mode: RoutingLoss) -> Self {
        Self {
            bank,
            mode,
            base: Scratch::new(&bank.base),
            spec: Scratch::new(&bank.base),
        }
    }

    fn losses(&mut self, row: RowView<'_>) -> Result<Vec<f64>> {
        let bank = self.bank;
        check_row(&bank.base, &row)?;
        let row = clean(row);
        let mut losses = vec![0.0; bank.base.k()];
        match self.mode {
            RoutingLoss::Base => feature_losses(&bank.base, row, &mut self.base, &mut losses)?,
            RoutingLoss::Specialized => {
                let mut tmp = vec![0.0; losses.len()];
                for (j, m) in bank.specialized.iter().enumerate() {
                    feature_losses(m, row, &mut self.spec, &mut tmp)?;
                    losses[j] = tmp[j];
                }
            }
        }
        Ok(losses)
    }

    fn route(&mut self, row_id: u64, row: RowView<'_>) -> Result<RoutedRepresentation> {
        let losses = self.losses(row)?;
        let j_star = argmax_loss(&losses);
        let model = match j_star {
            Some(j) => self.bank.specialized.get(j).ok_or_else(|| {
                Error::config(format!("bank has no specialized checkpoint for feature {j}"))
            })?,
            None => &self.bank.base,
        };
        model.encode_row(clean(row), &mut self.spec);
        Ok(RoutedRepresentation {
            row_id,
            j_star,
            losses,
            z: self.spec.z.clone(),
        })
    }
}

/// Per-feature losses of the base model on the clean row and the feature
/// with the largest one. The label never enters.
pub fn select_feature(bank: &ModelBank, row: RowView<'_>) -> Result<(Option<usize>, Vec<f64>)> {
    let losses = Router::new(bank, RoutingLoss::Base).losses(row)?;
    Ok((argmax_loss(&losses), losses))
}

pub fn route_representation(
    bank: &ModelBank,
    row_id: u64,
    row: RowView<'_>,
    mode: RoutingLoss,
) -> Result<RoutedRepresentation> {
    Router::new(bank, mode).route(row_id, row)
}

/// Latents for a whole dataset plus the routing decision of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub latents: LatentBatch,
    /// Empty in base mode.
    pub j_star: Vec<Option<usize>>,
}

/// Routes every row of `ds`; rows are processed in parallel chunks, each
/// row independently, so the output does not depend on the thread count.
pub fn represent(bank: &ModelBank, ds: &EncodedDataset, mode: RoutingLoss) -> Result<Representations> {
    bank.base.check_schema(&ds.schema)?;
    let idx: Vec<usize> = (0..ds.n()).collect();
    let chunks: Vec<Result<Vec<RoutedRepresentation>>> = idx
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut router = Router::new(bank, mode);
            chunk
                .iter()
                .map(|&i| router.route(ds.row_ids[i], ds.row(i)))
                .collect()
        })
        .collect();
    let d = bank.base.d;
    let mut z = Vec::with_capacity(ds.n() * d);
    let mut j_star = Vec::with_capacity(ds.n());
    for c in chunks {
        for r in c? {
            z.extend_from_slice(&r.z);
            j_star.push(r.j_star);
        }
    }
    Ok(Representations {
        latents: LatentBatch {
            d,
            z,
            row_ids: ds.row_ids.clone(),
        },
        j_star,
    })
}

use super::forward::Scratch;
use super::mask::Rows;
use super::params::ModelParams;
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::ndcore::{softmax_cross_entropy_into, GradSet};

/// Pooled encoder outputs, `n × d`, in input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub d: usize,
    pub z: Vec<f64>,
    pub row_ids: Vec<u64>,
}

impl LatentBatch {
    pub fn n(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }
}

/// Decoder outputs: per categorical feature an `n × cardinality` logit
/// block, per continuous feature `n` predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub n: usize,
    pub cat_logits: Vec<Vec<f64>>,
    pub cardinalities: Vec<usize>,
    pub cont: Vec<Vec<f64>>,
}

impl Reconstruction {
    pub fn logits(&self, j: usize, i: usize) -> &[f64] {
        let c = self.cardinalities[j];
        &self.cat_logits[j][i * c..(i + 1) * c]
    }
}

/// Reconstruction loss broken down by feature and by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmLoss {
    pub total: f64,
    /// `k + c` entries; their sum equals `total`.
    pub per_feature: Vec<f64>,
    /// `n × (k + c)` unscaled per-cell losses.
    pub per_sample: Vec<f64>,
}

/// Per-row weights on the loss term of one categorical feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWeights {
    pub feature: usize,
    pub weights: Vec<f64>,
}

/// `z = h(x)` for every row.
pub fn forward_latent<R: Rows + ?Sized>(model: &ModelParams, rows: &R) -> Result<LatentBatch> {
    let ds = rows.dataset();
    model.check_schema(&ds.schema)?;
    let mut s = Scratch::new(model);
    let mut z = Vec::with_capacity(rows.n() * model.d);
    for i in 0..rows.n() {
        model.encode_row(rows.row(i), &mut s);
        z.extend_from_slice(&s.z);
    }
    Ok(LatentBatch {
        d: model.d,
        z,
        row_ids: ds.row_ids.clone(),
    })
}

/// Applies every decoder head to the latents.
pub fn reconstruct(model: &ModelParams, latents: &LatentBatch) -> Result<Reconstruction> {
    if latents.d != model.d || latents.z.len() != latents.n() * latents.d {
        return Err(Error::shape(format!(
            "latent dimension {} does not match model dimension {}",
            latents.d, model.d
        )));
    }
    let cards = model.cardinalities();
    let n = latents.n();
    let mut cat_logits: Vec<Vec<f64>> = cards.iter().map(|c| Vec::with_capacity(n * c)).collect();
    let mut cont: Vec<Vec<f64>> = (0..model.c()).map(|_| Vec::with_capacity(n)).collect();
    let mut s = Scratch::new(model);
    for i in 0..n {
        s.z.copy_from_slice(latents.row(i));
        model.decode_row(&mut s);
        for (j, block) in cat_logits.iter_mut().enumerate() {
            block.extend_from_slice(s.logits_of(j));
        }
        for (l, block) in cont.iter_mut().enumerate() {
            block.push(s.cont_pred[l]);
        }
    }
    Ok(Reconstruction {
        n,
        cat_logits,
        cardinalities: cards,
        cont,
    })
}

fn check_aligned(outputs: &Reconstruction, targets: &EncodedDataset) -> Result<()> {
    if outputs.n != targets.n()
        || outputs.cat_logits.len() != targets.k()
        || outputs.cont.len() != targets.c()
        || outputs.cardinalities != targets.schema.cardinalities()
    {
        return Err(Error::shape("reconstruction outputs and targets are misaligned"));
    }
    Ok(())
}

/// Mean over samples of summed categorical cross-entropies and continuous
/// squared errors, over every feature whether masked or not.
pub fn mlm_loss(outputs: &Reconstruction, targets: &EncodedDataset) -> Result<MlmLoss> {
    check_aligned(outputs, targets)?;
    let (n, k, c) = (outputs.n, targets.k(), targets.c());
    let f = k + c;
    let mut per_sample = vec![0.0; n * f];
    let mut grad = vec![0.0; outputs.cardinalities.iter().copied().max().unwrap_or(0)];
    let mut total = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..k {
            let card = outputs.cardinalities[j];
            let l = softmax_cross_entropy_into(
                outputs.logits(j, i),
                targets.cat_value(i, j) as usize,
                &mut grad[..card],
            )?;
            per_sample[i * f + j] = l;
            row_sum += l;
        }
        for l in 0..c {
            let diff = outputs.cont[l][i] - targets.cont_row(i)[l];
            per_sample[i * f + k + l] = diff * diff;
            row_sum += diff * diff;
        }
        total += row_sum;
    }
    let inv_n = 1.0 / n as f64;
    let per_feature = (0..f)
        .map(|ft| (0..n).map(|i| per_sample[i * f + ft]).sum::<f64>() * inv_n)
        .collect();
    let total = total * inv_n;
    if !total.is_finite() {
        return Err(Error::numeric("non-finite reconstruction loss"));
    }
    Ok(MlmLoss {
        total,
        per_feature,
        per_sample,
    })
}

/// Value of the upweighted objective: feature `weights.feature` scaled per row.
pub fn weighted_mlm_loss(outputs: &Reconstruction, targets: &EncodedDataset, weights: &RowWeights) -> Result<f64> {
    let base = mlm_loss(outputs, targets)?;
    check_weights(weights, targets)?;
    let f = targets.k() + targets.c();
    let mut total = 0.0;
    for i in 0..outputs.n {
        let mut row_sum = 0.0;
        for ft in 0..f {
            let l = base.per_sample[i * f + ft];
            row_sum += if ft == weights.feature {
                weights.weights[i] * l
            } else {
                l
            };
        }
        total += row_sum;
    }
    Ok(total / outputs.n as f64)
}

fn check_weights(weights: &RowWeights, targets: &EncodedDataset) -> Result<()> {
    if weights.feature >= targets.k() {
        return Err(Error::config(format!(
            "weighted feature {} is not categorical (k={})",
            weights.feature,
            targets.k()
        )));
    }
    if weights.weights.len() != targets.n() {
        return Err(Error::shape("row weights do not match batch size"));
    }
    Ok(())
}

/// Loss and full parameter gradient over `inputs`, targets taken from the
/// uncorrupted rows. With `weights` the selected feature's term is scaled
/// per row. With `with_encoder == false` encoder gradients stay zero.
pub fn loss_and_grad<R: Rows + ?Sized>(
    model: &ModelParams,
    inputs: &R,
    weights: Option<&RowWeights>,
    with_encoder: bool,
) -> Result<(f64, GradSet)> {
    let targets = inputs.dataset();
    model.check_schema(&targets.schema)?;
    if let Some(w) = weights {
        check_weights(w, targets)?;
    }
    let n = inputs.n();
    if n == 0 {
        return Err(Error::data("empty batch"));
    }
    let (k, c) = (model.k(), model.c());
    let inv_n = 1.0 / n as f64;
    let mut grads = model.params.zeros_like();
    let mut s = Scratch::new(model);
    let mut total = 0.0;
    for i in 0..n {
        let row = inputs.row(i);
        model.forward_row(row, &mut s);
        let mut row_sum = 0.0;
        for j in 0..k {
            let (lo, hi) = (s.logit_offsets[j], s.logit_offsets[j + 1]);
            let target = targets.cat_value(i, j) as usize;
            let l = softmax_cross_entropy_into(&s.logits[lo..hi], target, &mut s.dlogits[lo..hi])
                .map_err(|e| Error::data(format!("row {i}, feature {j}: {e}")))?;
            let w = match weights {
                Some(rw) if rw.feature == j => rw.weights[i],
                _ => 1.0,
            };
            row_sum += w * l;
            let scale = w * inv_n;
            s.dlogits[lo..hi].iter_mut().for_each(|g| *g *= scale);
        }
        let truth = targets.cont_row(i);
        for l in 0..c {
            let diff = s.cont_pred[l] - truth[l];
            row_sum += diff * diff;
            s.dcont[l] = 2.0 * diff * inv_n;
        }
        if !row_sum.is_finite() {
            return Err(Error::numeric(format!("non-finite loss at row {i}")));
        }
        total += row_sum;
        model.backward_row(row, &mut s, &mut grads, with_encoder);
    }
    Ok((total * inv_n, grads))
}

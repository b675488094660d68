//! Per-row forward and backward passes.
//!
//! Token layout: categorical features `0..k` followed by continuous features
//! `k..k+c`. Every row is processed independently with a reusable
//! [`Scratch`], so batching never changes a row's result.

use super::params::{EncoderVariant, ModelParams};
use crate::ndcore::{gelu, gelu_grad, matvec_add, matvec_t_add, outer_add, softmax_in_place, GradSet};

/// One input row after optional corruption.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    /// Category indices; the value `cardinality` selects the shared UNK/MASK row.
    pub cat: &'a [u32],
    pub cont: &'a [f64],
    /// Per continuous feature: whether the value was masked out.
    pub cont_masked: Option<&'a [bool]>,
}

/// Reusable activations and gradient buffers for one row.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    f: usize,
    d: usize,
    tokens: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    mixed: Vec<f64>,
    encoded: Vec<f64>,
    pooled: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    pub z: Vec<f64>,
    /// Concatenated categorical logits, feature-major.
    pub logits: Vec<f64>,
    pub logit_offsets: Vec<usize>,
    pub cont_pred: Vec<f64>,
    /// Upstream gradient for `logits`, filled by the caller before `backward`.
    pub dlogits: Vec<f64>,
    /// Upstream gradient for `cont_pred`.
    pub dcont: Vec<f64>,
    dz: Vec<f64>,
    dh1: Vec<f64>,
    da: Vec<f64>,
    dpooled: Vec<f64>,
    dencoded: Vec<f64>,
    dtokens: Vec<f64>,
    dmixed: Vec<f64>,
    dattn: Vec<f64>,
    dq: Vec<f64>,
    dk: Vec<f64>,
    dv: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &ModelParams) -> Self {
        let d = model.d;
        let f = model.n_features();
        let cards = model.cardinalities();
        let mut logit_offsets = Vec::with_capacity(cards.len() + 1);
        let mut acc = 0;
        logit_offsets.push(0);
        for c in &cards {
            acc += c;
            logit_offsets.push(acc);
        }
        let fd = vec![0.0; f * d];
        let ff = vec![0.0; f * f];
        let dv = vec![0.0; d];
        Self {
            f,
            d,
            tokens: fd.clone(),
            q: fd.clone(),
            k: fd.clone(),
            v: fd.clone(),
            attn: ff.clone(),
            mixed: fd.clone(),
            encoded: fd.clone(),
            pooled: dv.clone(),
            a1: dv.clone(),
            h1: dv.clone(),
            a2: dv.clone(),
            z: dv.clone(),
            logits: vec![0.0; acc],
            logit_offsets,
            cont_pred: vec![0.0; model.c()],
            dlogits: vec![0.0; acc],
            dcont: vec![0.0; model.c()],
            dz: dv.clone(),
            dh1: dv.clone(),
            da: dv.clone(),
            dpooled: dv,
            dencoded: fd.clone(),
            dtokens: fd.clone(),
            dmixed: fd.clone(),
            dattn: ff,
            dq: fd.clone(),
            dk: fd.clone(),
            dv: fd,
        }
    }

    pub fn logits_of(&self, j: usize) -> &[f64] {
        &self.logits[self.logit_offsets[j]..self.logit_offsets[j + 1]]
    }
}

impl ModelParams {
    fn t(&self, idx: usize) -> &[f64] {
        &self.params.tensors[idx].values
    }

    /// Encoder pass only: fills `s.z`.
    pub(crate) fn encode_row(&self, row: RowView<'_>, s: &mut Scratch) {
        let d = self.d;
        let lay = &self.layout;
        let k = self.k();

        for (j, &idx) in row.cat.iter().enumerate() {
            let table = self.t(lay.cat_emb[j]);
            let src = &table[idx as usize * d..(idx as usize + 1) * d];
            s.tokens[j * d..(j + 1) * d].copy_from_slice(src);
        }
        for (l, &x) in row.cont.iter().enumerate() {
            let masked = row.cont_masked.map(|m| m[l]).unwrap_or(false);
            let scale = self.t(lay.cont_scale[l]);
            let shift = self.t(lay.cont_shift[l]);
            let mvec = self.t(lay.cont_mask[l]);
            let tok = &mut s.tokens[(k + l) * d..(k + l + 1) * d];
            for i in 0..d {
                tok[i] = x * scale[i] + shift[i] + if masked { mvec[i] } else { 0.0 };
            }
        }

        match (self.variant, lay.attn) {
            (EncoderVariant::AttnLite, Some([wq, wk, wv, wo])) => {
                self.attention_forward(s, [wq, wk, wv, wo]);
            }
            _ => s.encoded.copy_from_slice(&s.tokens),
        }

        let inv_f = 1.0 / s.f as f64;
        s.pooled.iter_mut().for_each(|v| *v = 0.0);
        for tok in s.encoded.chunks_exact(d) {
            for (p, t) in s.pooled.iter_mut().zip(tok) {
                *p += t;
            }
        }
        s.pooled.iter_mut().for_each(|v| *v *= inv_f);

        let [w1, b1, w2, b2] = lay.dense;
        s.a1.copy_from_slice(self.t(b1));
        matvec_add(self.t(w1), &s.pooled, &mut s.a1);
        for i in 0..d {
            s.h1[i] = s.pooled[i] + gelu(s.a1[i]);
        }
        s.a2.copy_from_slice(self.t(b2));
        matvec_add(self.t(w2), &s.h1, &mut s.a2);
        for i in 0..d {
            s.z[i] = s.h1[i] + gelu(s.a2[i]);
        }
    }

    fn attention_forward(&self, s: &mut Scratch, [wq, wk, wv, wo]: [usize; 4]) {
        let (f, d) = (s.f, s.d);
        let scale = 1.0 / (d as f64).sqrt();
        for t in 0..f {
            let tok = &s.tokens[t * d..(t + 1) * d];
            for (buf, w) in [(&mut s.q, wq), (&mut s.k, wk), (&mut s.v, wv)] {
                let out = &mut buf[t * d..(t + 1) * d];
                out.iter_mut().for_each(|x| *x = 0.0);
                matvec_add(self.t(w), tok, out);
            }
        }
        for a in 0..f {
            let qa = &s.q[a * d..(a + 1) * d];
            let row = &mut s.attn[a * f..(a + 1) * f];
            for b in 0..f {
                row[b] = crate::ndcore::dot(qa, &s.k[b * d..(b + 1) * d]) * scale;
            }
            softmax_in_place(row);
        }
        // mixed = A V, encoded = tokens + Wo mixed
        s.mixed.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..f {
            for b in 0..f {
                let w = s.attn[a * f + b];
                let vb = &s.v[b * d..(b + 1) * d];
                let out = &mut s.mixed[a * d..(a + 1) * d];
                for (o, x) in out.iter_mut().zip(vb) {
                    *o += w * x;
                }
            }
        }
        s.encoded.copy_from_slice(&s.tokens);
        for a in 0..f {
            matvec_add(
                self.t(wo),
                &s.mixed[a * d..(a + 1) * d],
                &mut s.encoded[a * d..(a + 1) * d],
            );
        }
    }

    /// Decoder pass from `s.z`: fills logits and continuous predictions.
    pub(crate) fn decode_row(&self, s: &mut Scratch) {
        for (j, &(w, b)) in self.layout.cat_head.iter().enumerate() {
            let (lo, hi) = (s.logit_offsets[j], s.logit_offsets[j + 1]);
            s.logits[lo..hi].copy_from_slice(self.t(b));
            matvec_add(self.t(w), &s.z, &mut s.logits[lo..hi]);
        }
        for (l, &(w, b)) in self.layout.cont_head.iter().enumerate() {
            s.cont_pred[l] = self.t(b)[0] + crate::ndcore::dot(self.t(w), &s.z);
        }
    }

    pub(crate) fn forward_row(&self, row: RowView<'_>, s: &mut Scratch) {
        self.encode_row(row, s);
        self.decode_row(s);
    }

    /// Accumulates parameter gradients given `s.dlogits` and `s.dcont`.
    /// Must follow `forward_row` on the same row and scratch. With
    /// `with_encoder == false` only head gradients are produced.
    pub(crate) fn backward_row(&self, row: RowView<'_>, s: &mut Scratch, grads: &mut GradSet, with_encoder: bool) {
        let d = self.d;
        let lay = &self.layout;

        s.dz.iter_mut().for_each(|v| *v = 0.0);
        for (j, &(w, b)) in lay.cat_head.iter().enumerate() {
            let (lo, hi) = (s.logit_offsets[j], s.logit_offsets[j + 1]);
            let g = &s.dlogits[lo..hi];
            outer_add(&mut grads.values[w], g, &s.z);
            for (gb, x) in grads.values[b].iter_mut().zip(g) {
                *gb += x;
            }
            matvec_t_add(self.t(w), g, &mut s.dz);
        }
        for (l, &(w, b)) in lay.cont_head.iter().enumerate() {
            let g = s.dcont[l];
            for (gw, zi) in grads.values[w].iter_mut().zip(&s.z) {
                *gw += g * zi;
            }
            grads.values[b][0] += g;
            for (dz, wi) in s.dz.iter_mut().zip(self.t(w)) {
                *dz += g * wi;
            }
        }

        if !with_encoder {
            return;
        }

        let [w1, b1, w2, b2] = lay.dense;
        // z = h1 + gelu(a2)
        for i in 0..d {
            s.da[i] = s.dz[i] * gelu_grad(s.a2[i]);
        }
        outer_add(&mut grads.values[w2], &s.da, &s.h1);
        for (g, x) in grads.values[b2].iter_mut().zip(&s.da) {
            *g += x;
        }
        s.dh1.copy_from_slice(&s.dz);
        matvec_t_add(self.t(w2), &s.da, &mut s.dh1);
        // h1 = pooled + gelu(a1)
        for i in 0..d {
            s.da[i] = s.dh1[i] * gelu_grad(s.a1[i]);
        }
        outer_add(&mut grads.values[w1], &s.da, &s.pooled);
        for (g, x) in grads.values[b1].iter_mut().zip(&s.da) {
            *g += x;
        }
        s.dpooled.copy_from_slice(&s.dh1);
        matvec_t_add(self.t(w1), &s.da, &mut s.dpooled);

        let inv_f = 1.0 / s.f as f64;
        for tok in s.dencoded.chunks_exact_mut(d) {
            for (t, p) in tok.iter_mut().zip(&s.dpooled) {
                *t = p * inv_f;
            }
        }

        match lay.attn {
            Some(ids) => self.attention_backward(s, ids, grads),
            None => s.dtokens.copy_from_slice(&s.dencoded),
        }

        let k = self.k();
        for (j, &idx) in row.cat.iter().enumerate() {
            let g = &mut grads.values[lay.cat_emb[j]][idx as usize * d..(idx as usize + 1) * d];
            for (gi, x) in g.iter_mut().zip(&s.dtokens[j * d..(j + 1) * d]) {
                *gi += x;
            }
        }
        for (l, &x) in row.cont.iter().enumerate() {
            let masked = row.cont_masked.map(|m| m[l]).unwrap_or(false);
            let dt = &s.dtokens[(k + l) * d..(k + l + 1) * d];
            for (gi, t) in grads.values[lay.cont_scale[l]].iter_mut().zip(dt) {
                *gi += x * t;
            }
            for (gi, t) in grads.values[lay.cont_shift[l]].iter_mut().zip(dt) {
                *gi += t;
            }
            if masked {
                for (gi, t) in grads.values[lay.cont_mask[l]].iter_mut().zip(dt) {
                    *gi += t;
                }
            }
        }
    }

    fn attention_backward(&self, s: &mut Scratch, [wq, wk, wv, wo]: [usize; 4], grads: &mut GradSet) {
        let (f, d) = (s.f, s.d);
        let scale = 1.0 / (d as f64).sqrt();
        // encoded = tokens + Wo mixed
        s.dtokens.copy_from_slice(&s.dencoded);
        s.dmixed.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..f {
            let g = &s.dencoded[a * d..(a + 1) * d];
            outer_add(&mut grads.values[wo], g, &s.mixed[a * d..(a + 1) * d]);
            matvec_t_add(self.t(wo), g, &mut s.dmixed[a * d..(a + 1) * d]);
        }
        // mixed = A V
        s.dv.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..f {
            let gm = &s.dmixed[a * d..(a + 1) * d];
            for b in 0..f {
                s.dattn[a * f + b] = crate::ndcore::dot(gm, &s.v[b * d..(b + 1) * d]);
                let w = s.attn[a * f + b];
                for (dv, g) in s.dv[b * d..(b + 1) * d].iter_mut().zip(gm) {
                    *dv += w * g;
                }
            }
        }
        // softmax rows, then scores = q·k * scale
        s.dq.iter_mut().for_each(|x| *x = 0.0);
        s.dk.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..f {
            let arow = &s.attn[a * f..(a + 1) * f];
            let grow = &s.dattn[a * f..(a + 1) * f];
            let inner = crate::ndcore::dot(arow, grow);
            for b in 0..f {
                let ds = arow[b] * (grow[b] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for i in 0..d {
                    s.dq[a * d + i] += ds * s.k[b * d + i];
                    s.dk[b * d + i] += ds * s.q[a * d + i];
                }
            }
        }
        for t in 0..f {
            let tok = &s.tokens[t * d..(t + 1) * d];
            for (buf, w) in [(&s.dq, wq), (&s.dk, wk), (&s.dv, wv)] {
                let g = &buf[t * d..(t + 1) * d];
                outer_add(&mut grads.values[w], g, tok);
                matvec_t_add(self.t(w), g, &mut s.dtokens[t * d..(t + 1) * d]);
            }
        }
    }
}

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::ndcore::{ParamSet, ParamTensor};

pub const DEFAULT_LATENT_DIM: usize = 192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// Mean-pooled feature tokens followed by two residual GELU layers.
    #[serde(rename = "mlp")]
    Mlp,
    /// One single-head self-attention block over the feature tokens, then
    /// the same pooled residual stack.
    #[serde(rename = "attn-lite")]
    AttnLite,
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderVariant::Mlp => "mlp",
            EncoderVariant::AttnLite => "attn-lite",
        })
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(EncoderVariant::Mlp),
            "attn-lite" => Ok(EncoderVariant::AttnLite),
            other => Err(Error::config(format!("unknown encoder variant {other:?}"))),
        }
    }
}

/// Tensor indices for every role in the parameter set.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub cat_emb: Vec<usize>,
    pub cont_scale: Vec<usize>,
    pub cont_shift: Vec<usize>,
    pub cont_mask: Vec<usize>,
    /// `wq, wk, wv, wo`
    pub attn: Option<[usize; 4]>,
    /// `w1, b1, w2, b2`
    pub dense: [usize; 4],
    pub cat_head: Vec<(usize, usize)>,
    pub cont_head: Vec<(usize, usize)>,
    /// Tensors that make up the encoder `h` (embeddings included).
    pub n_encoder: usize,
}

/// Encoder `h` plus one decoder head per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub schema: Arc<Schema>,
    pub d: usize,
    pub variant: EncoderVariant,
    pub params: ParamSet,
    pub(crate) layout: Layout,
}

fn uniform(rng: &mut crate::util::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Builds the tensor list in canonical order. With `rng == None` every value is zero.
fn build(schema: &Schema, d: usize, variant: EncoderVariant, mut rng: Option<&mut crate::util::Rng>) -> (ParamSet, Layout) {
    let mut ps = ParamSet::default();
    let inv = 1.0 / (d as f64).sqrt();
    let mut draw = |n: usize, bound: f64| match rng.as_deref_mut() {
        Some(r) => uniform(r, n, bound),
        None => vec![0.0; n],
    };
    let add = |ps: &mut ParamSet, name: String, shape: Vec<usize>, values: Vec<f64>| {
        ps.push(ParamTensor {
            name,
            shape,
            values,
            trainable: true,
        })
    };

    let mut cat_emb = Vec::new();
    for f in schema.categorical() {
        let rows = f.cardinality().expect("categorical") + 1;
        let v = draw(rows * d, 1.0);
        cat_emb.push(add(&mut ps, format!("emb.cat.{}", f.name), vec![rows, d], v));
    }
    let (mut cont_scale, mut cont_shift, mut cont_mask) = (Vec::new(), Vec::new(), Vec::new());
    for f in schema.continuous() {
        let v = draw(d, 1.0);
        cont_scale.push(add(&mut ps, format!("emb.cont.{}.scale", f.name), vec![d], v));
        cont_shift.push(add(&mut ps, format!("emb.cont.{}.shift", f.name), vec![d], vec![0.0; d]));
        let v = draw(d, 1.0);
        cont_mask.push(add(&mut ps, format!("emb.cont.{}.mask", f.name), vec![d], v));
    }
    let attn = match variant {
        EncoderVariant::Mlp => None,
        EncoderVariant::AttnLite => {
            let mut ids = [0; 4];
            for (slot, nm) in ids.iter_mut().zip(["wq", "wk", "wv", "wo"]) {
                let v = draw(d * d, inv);
                *slot = add(&mut ps, format!("enc.attn.{nm}"), vec![d, d], v);
            }
            Some(ids)
        }
    };
    let v = draw(d * d, inv);
    let w1 = add(&mut ps, "enc.dense1.w".into(), vec![d, d], v);
    let b1 = add(&mut ps, "enc.dense1.b".into(), vec![d], vec![0.0; d]);
    let v = draw(d * d, inv);
    let w2 = add(&mut ps, "enc.dense2.w".into(), vec![d, d], v);
    let b2 = add(&mut ps, "enc.dense2.b".into(), vec![d], vec![0.0; d]);
    let n_encoder = ps.len();

    let (mut cat_head, mut cont_head) = (Vec::new(), Vec::new());
    for f in schema.categorical() {
        let c = f.cardinality().expect("categorical");
        let v = draw(c * d, inv);
        let w = add(&mut ps, format!("head.{}.w", f.name), vec![c, d], v);
        let b = add(&mut ps, format!("head.{}.b", f.name), vec![c], vec![0.0; c]);
        cat_head.push((w, b));
    }
    for f in schema.continuous() {
        let v = draw(d, inv);
        let w = add(&mut ps, format!("head.{}.w", f.name), vec![1, d], v);
        let b = add(&mut ps, format!("head.{}.b", f.name), vec![1], vec![0.0]);
        cont_head.push((w, b));
    }
    let layout = Layout {
        cat_emb,
        cont_scale,
        cont_shift,
        cont_mask,
        attn,
        dense: [w1, b1, w2, b2],
        cat_head,
        cont_head,
        n_encoder,
    };
    (ps, layout)
}

/// Seed-deterministic scaled-uniform initialization; every tensor trainable.
pub fn init_model(schema: &Schema, d: usize, variant: EncoderVariant, seed: u64) -> Result<ModelParams> {
    if d < 2 {
        return Err(Error::config(format!("latent dimension must be >= 2, got {d}")));
    }
    schema.validate()?;
    let mut rng = crate::util::rng(seed);
    let (params, layout) = build(schema, d, variant, Some(&mut rng));
    Ok(ModelParams {
        schema: Arc::new(schema.clone()),
        d,
        variant,
        params,
        layout,
    })
}

/// Which tensors an optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Encoder and the head of categorical feature `j`.
    EncoderAndHead(usize),
    /// Only the head of categorical feature `j`.
    HeadOnly(usize),
}

impl ModelParams {
    /// Reassembles a model from a parameter set, checking names and shapes.
    pub fn from_params(schema: Arc<Schema>, d: usize, variant: EncoderVariant, params: ParamSet) -> Result<Self> {
        if d < 2 {
            return Err(Error::config(format!("latent dimension must be >= 2, got {d}")));
        }
        let (reference, layout) = build(&schema, d, variant, None);
        if reference.len() != params.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (r, p) in reference.tensors.iter().zip(&params.tensors) {
            if r.name != p.name || r.shape != p.shape {
                return Err(Error::shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    p.name, p.shape, r.name, r.shape
                )));
            }
        }
        Ok(Self {
            schema,
            d,
            variant,
            params,
            layout,
        })
    }

    pub fn k(&self) -> usize {
        self.layout.cat_head.len()
    }

    pub fn c(&self) -> usize {
        self.layout.cont_head.len()
    }

    pub fn n_features(&self) -> usize {
        self.k() + self.c()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.layout
            .cat_head
            .iter()
            .map(|&(_, b)| self.params.tensors[b].len())
            .collect()
    }

    pub fn set_trainable(&mut self, which: Trainable) -> Result<()> {
        let k = self.k();
        let check = |j: usize| {
            if j >= k {
                Err(Error::config(format!("categorical feature {j} out of range (k={k})")))
            } else {
                Ok(())
            }
        };
        match which {
            Trainable::All => self.params.set_all_trainable(true),
            Trainable::EncoderAndHead(j) | Trainable::HeadOnly(j) => {
                check(j)?;
                let encoder = matches!(which, Trainable::EncoderAndHead(_));
                let (hw, hb) = self.layout.cat_head[j];
                for (i, t) in self.params.tensors.iter_mut().enumerate() {
                    t.trainable = i == hw || i == hb || (encoder && i < self.layout.n_encoder);
                }
            }
        }
        Ok(())
    }

    /// Indices of the encoder tensors.
    pub fn encoder_tensors(&self) -> std::ops::Range<usize> {
        0..self.layout.n_encoder
    }

    /// Tensor indices `(weight, bias)` of the head of categorical feature `j`.
    pub fn cat_head_tensors(&self, j: usize) -> (usize, usize) {
        self.layout.cat_head[j]
    }

    pub fn encoder_needs_grad(&self) -> bool {
        self.params.tensors[..self.layout.n_encoder]
            .iter()
            .any(|t| t.trainable)
    }

    pub fn check_schema(&self, other: &Schema) -> Result<()> {
        if self.schema.as_ref() != other {
            return Err(Error::data("dataset schema does not match the model"));
        }
        Ok(())
    }

    /// Fingerprint over parameter bits and structure.
    pub fn hash(&self) -> String {
        let (bytes, _) = crate::ndcore::encode_blob(&self.params);
        crate::util::sha256_hex(&bytes)
    }
}

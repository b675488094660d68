use std::sync::Arc;

use rand::Rng;

use super::*;
use crate::data::{synth_spurious, EncodedDataset, FeatureKind, FeatureSpec, Schema};
use crate::ndcore::grad_check;

pub(crate) fn mixed_schema(cards: &[usize], n_cont: usize) -> Schema {
    let mut features: Vec<FeatureSpec> = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| FeatureSpec {
            name: format!("c{i}"),
            kind: FeatureKind::Categorical {
                cardinality: c,
                vocabulary: (0..c).map(|v| format!("v{v}")).collect(),
            },
        })
        .collect();
    for l in 0..n_cont {
        features.push(FeatureSpec {
            name: format!("r{l}"),
            kind: FeatureKind::Continuous { mean: 0.0, std: 1.0 },
        });
    }
    Schema {
        features,
        target_name: "y".into(),
        target_values: ["0".into(), "1".into()],
    }
}

pub(crate) fn random_dataset(schema: &Schema, n: usize, seed: u64) -> EncodedDataset {
    let mut rng = crate::util::rng(seed);
    let cards = schema.cardinalities();
    let mut cat = Vec::new();
    let mut cont = Vec::new();
    for _ in 0..n {
        for &c in &cards {
            cat.push(rng.gen_range(0..c) as u32);
        }
        for _ in 0..schema.c() {
            cont.push(rng.gen_range(-2.0..2.0));
        }
    }
    let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
    EncodedDataset::new(Arc::new(schema.clone()), cat, cont, labels, (0..n as u64).collect()).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for variant in [EncoderVariant::Mlp, EncoderVariant::AttnLite] {
        for seed in 0..3 {
            let schema = mixed_schema(&[3, 4, 2], 1);
            let ds = random_dataset(&schema, 20, seed);
            let model = init_model(&schema, 8, variant, seed).unwrap();
            let batch = apply_mask(&ds, 0.3, seed).unwrap();
            let (_, grads) = loss_and_grad(&model, &batch, None, true).unwrap();
            let err = grad_check(
                |p| {
                    let mut m = model.clone();
                    m.params = p.clone();
                    loss_and_grad(&m, &batch, None, false).map(|(l, _)| l)
                },
                &model.params,
                &grads,
                1e-5,
                seed,
            )
            .unwrap();
            assert!(err < 1e-6, "{variant} seed {seed}: {err}");
        }
    }
}

#[test]
fn additivity_over_samples_and_features() {
    let schema = mixed_schema(&[3, 5], 2);
    let ds = random_dataset(&schema, 30, 7);
    let model = init_model(&schema, 6, EncoderVariant::Mlp, 7).unwrap();
    let lat = forward_latent(&model, &ds).unwrap();
    let out = reconstruct(&model, &lat).unwrap();
    let l = mlm_loss(&out, &ds).unwrap();
    let f = 4;
    let by_rows: f64 = (0..30)
        .map(|i| l.per_sample[i * f..(i + 1) * f].iter().sum::<f64>())
        .sum::<f64>()
        / 30.0;
    assert!((by_rows - l.total).abs() < 1e-9);
    assert!((l.per_feature.iter().sum::<f64>() - l.total).abs() < 1e-9);
    let (via_grad_path, _) = loss_and_grad(&model, &ds, None, false).unwrap();
    assert!((via_grad_path - l.total).abs() < 1e-12);
}

#[test]
fn latents_are_row_independent() {
    let schema = mixed_schema(&[3, 4], 1);
    let ds = random_dataset(&schema, 12, 3);
    for variant in [EncoderVariant::Mlp, EncoderVariant::AttnLite] {
        let model = init_model(&schema, 8, variant, 3).unwrap();
        let full = forward_latent(&model, &ds).unwrap();
        assert_eq!(full.z.len(), 12 * 8);
        let perm: Vec<usize> = (0..12).rev().collect();
        let permuted = forward_latent(&model, &ds.subset(&perm)).unwrap();
        for (pi, &orig) in perm.iter().enumerate() {
            assert_eq!(permuted.row(pi), full.row(orig));
        }
        let single = forward_latent(&model, &ds.subset(&[5])).unwrap();
        assert_eq!(single.row(0), full.row(5));
        let dup = forward_latent(&model, &ds.subset(&[2, 2])).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
    }
}

#[test]
fn zero_heads_give_zero_logits() {
    let schema = mixed_schema(&[3, 4], 1);
    let ds = random_dataset(&schema, 5, 1);
    let mut model = init_model(&schema, 8, EncoderVariant::Mlp, 1).unwrap();
    for t in &mut model.params.tensors {
        if t.name.starts_with("head.") {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let out = reconstruct(&model, &forward_latent(&model, &ds).unwrap()).unwrap();
    assert!(out.cat_logits.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(out.cat_logits[1].len(), 5 * 4);
    assert_eq!(out.cont.len(), 1);
}

#[test]
fn schema_mismatch_rejected() {
    let a = mixed_schema(&[3, 4], 0);
    let b = mixed_schema(&[3, 5], 0);
    let model = init_model(&a, 4, EncoderVariant::Mlp, 0).unwrap();
    let ds = random_dataset(&b, 4, 0);
    assert!(forward_latent(&model, &ds).is_err());
    let lat = LatentBatch { d: 5, z: vec![0.0; 5], row_ids: vec![0] };
    assert!(reconstruct(&model, &lat).is_err());
}

#[test]
fn memorizes_four_rows() {
    let schema = mixed_schema(&[3, 4], 1);
    let ds = random_dataset(&schema, 4, 11);
    let cfg = TrainConfig { epochs: 400, lr: 0.01, batch_size: 4 };
    let mcfg = ModelConfig { d: 16, variant: EncoderVariant::Mlp, mask_rate: 0.0 };
    let (_, hist) = pretrain_erm(&ds, &mcfg, &cfg, 43).unwrap();
    assert!(*hist.last().unwrap() < 0.05, "{:?}", &hist[hist.len() - 3..]);
}

#[test]
fn pretraining_descends_and_is_deterministic() {
    let ds = synth_spurious(500, 4, 0.9, 0.1, 43).unwrap();
    let mcfg = ModelConfig { d: 16, variant: EncoderVariant::Mlp, mask_rate: 0.15 };
    let cfg = TrainConfig { epochs: 10, lr: 0.01, batch_size: 64 };
    let (m1, h1) = pretrain_erm(&ds, &mcfg, &cfg, 43).unwrap();
    assert!(h1.last().unwrap() < &h1[0], "{h1:?}");
    let (m2, h2) = pretrain_erm(&ds, &mcfg, &cfg, 43).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.hash(), m2.hash());
    assert!(pretrain_erm(&ds, &mcfg, &TrainConfig { epochs: 0, ..cfg }, 43).is_err());
}

#[test]
fn attn_lite_trains() {
    let ds = synth_spurious(300, 3, 0.9, 0.1, 5).unwrap();
    let mcfg = ModelConfig { d: 8, variant: EncoderVariant::AttnLite, mask_rate: 0.15 };
    let cfg = TrainConfig { epochs: 5, lr: 0.01, batch_size: 32 };
    let (_, h) = pretrain_erm(&ds, &mcfg, &cfg, 43).unwrap();
    assert!(h.last().unwrap() < &h[0]);
}

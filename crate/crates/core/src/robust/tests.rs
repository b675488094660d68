use super::*;
use crate::data::{stratified_split, synth_spurious, EncodedDataset, SplitBundle};
use crate::model::{
    forward_latent, mlm_loss, pretrain_erm, reconstruct, weighted_mlm_loss, EncoderVariant, ModelConfig,
    ModelParams, TrainConfig,
};

const G: usize = 1;

fn small_base(n: usize, seed: u64) -> (ModelParams, SplitBundle) {
    let ds = synth_spurious(n, 4, 0.9, 0.1, seed).unwrap();
    let splits = stratified_split(&ds, [0.6, 0.2, 0.2], seed).unwrap();
    let mc = ModelConfig {
        d: 8,
        variant: EncoderVariant::Mlp,
        mask_rate: 0.15,
    };
    let tc = TrainConfig {
        epochs: 3,
        lr: 0.01,
        batch_size: 64,
    };
    let (m, _) = pretrain_erm(&splits.train, &mc, &tc, seed).unwrap();
    (m, splits)
}

fn quick_cfg(epochs: usize) -> FinetuneConfig {
    FinetuneConfig {
        epochs,
        lr: 0.01,
        batch_size: 64,
        mask_rate: 0.15,
    }
}

/// Pushes head `j` towards category 0 on every row.
fn bias_head(m: &mut ModelParams, j: usize, amount: f64) {
    let (w, b) = m.cat_head_tensors(j);
    m.params.tensors[w].values.iter_mut().for_each(|v| *v *= 0.1);
    m.params.tensors[b].values[0] += amount;
}

/// Per-category clean-input reconstruction accuracy of head `j`.
fn per_category_accuracy(m: &ModelParams, ds: &EncodedDataset, j: usize) -> Vec<f64> {
    let rec = reconstruct(m, &forward_latent(m, ds).unwrap()).unwrap();
    let card = m.cardinalities()[j];
    let (mut hit, mut tot) = (vec![0usize; card], vec![0usize; card]);
    for i in 0..ds.n() {
        let l = rec.logits(j, i);
        let mut best = 0;
        for c in 1..l.len() {
            if l[c] > l[best] {
                best = c;
            }
        }
        let t = ds.cat_value(i, j) as usize;
        tot[t] += 1;
        hit[t] += usize::from(best == t);
    }
    hit.iter().zip(&tot).map(|(&h, &t)| h as f64 / t.max(1) as f64).collect()
}

fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

#[test]
fn error_set_matches_brute_force() {
    let (m, splits) = small_base(600, 3);
    let train = &splits.train;
    let z = forward_latent(&m, train).unwrap();
    for j in 0..m.k() {
        let (w, b) = m.cat_head_tensors(j);
        let (w, b) = (&m.params.tensors[w].values, &m.params.tensors[b].values);
        let card = b.len();
        let mut expect = Vec::new();
        for i in 0..train.n() {
            let zi = z.row(i);
            let logits: Vec<f64> = (0..card)
                .map(|c| b[c] + (0..m.d).map(|t| w[c * m.d + t] * zi[t]).sum::<f64>())
                .collect();
            let mut best = 0;
            for c in 1..card {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            if best != train.cat_value(i, j) as usize {
                expect.push(train.row_ids[i]);
            }
        }
        let got = build_error_set(&m, train, j).unwrap();
        assert_eq!(got.row_ids, expect, "feature {j}");
        assert_eq!(got.source, m.hash());
    }
}

#[test]
fn constant_prediction_flags_the_other_category() {
    let (mut m, splits) = small_base(400, 5);
    // feature 0 is binary with a roughly even split
    let (w, b) = m.cat_head_tensors(0);
    m.params.tensors[w].values.iter_mut().for_each(|v| *v = 0.0);
    m.params.tensors[b].values = vec![3.0, 0.0];
    let train = &splits.train;
    let expect: Vec<u64> = (0..train.n())
        .filter(|&i| train.cat_value(i, 0) == 1)
        .map(|i| train.row_ids[i])
        .collect();
    let got = build_error_set(&m, train, 0).unwrap();
    assert_eq!(got.row_ids, expect);
    // a perfect tie goes to index 0
    m.params.tensors[b].values = vec![0.0, 0.0];
    assert_eq!(build_error_set(&m, train, 0).unwrap().row_ids, expect);
}

#[test]
fn error_set_rejects_bad_feature() {
    let (m, splits) = small_base(300, 1);
    assert!(build_error_set(&m, &splits.train, m.k()).is_err());
}

#[test]
fn weighted_loss_is_linear_in_the_weights() {
    let (m, splits) = small_base(400, 2);
    let train = &splits.train;
    let rec = reconstruct(&m, &forward_latent(&m, train).unwrap()).unwrap();
    let plain = mlm_loss(&rec, train).unwrap();
    let eset = build_error_set(&m, train, G).unwrap();
    let f = m.k() + m.c();

    let ones = jtt_weights(train, &eset, 1.0).unwrap();
    let at_one = weighted_mlm_loss(&rec, train, &ones).unwrap();
    assert!((at_one - plain.total).abs() < 1e-12);

    let w = 20.0;
    let rw = jtt_weights(train, &eset, w).unwrap();
    let got = weighted_mlm_loss(&rec, train, &rw).unwrap();
    let extra: f64 = (0..train.n())
        .map(|i| (rw.weights[i] - 1.0) * plain.per_sample[i * f + G])
        .sum::<f64>()
        / train.n() as f64;
    assert!((got - (plain.total + extra)).abs() < 1e-10, "{got} vs {}", plain.total + extra);
    assert_eq!(rw.weights.iter().filter(|&&x| x == w).count(), eset.len());
}

#[test]
fn upweight_below_one_is_rejected() {
    let (m, splits) = small_base(300, 1);
    let eset = build_error_set(&m, &splits.train, 0).unwrap();
    assert!(jtt_weights(&splits.train, &eset, 0.5).is_err());
    assert!(jtt_finetune(&m, &splits.train, &eset, f64::NAN, &quick_cfg(1), 0).is_err());
}

#[test]
fn dfr_touches_only_its_head() {
    let (m, splits) = small_base(600, 4);
    let sub = build_balanced_subset(&splits.val, G, 9).unwrap();
    let rows = splits.val.select_ids(&sub.row_ids).unwrap();
    let (tuned, _) = dfr_finetune(&m, &rows, G, &quick_cfg(3), 1).unwrap();
    let (hw, hb) = m.cat_head_tensors(G);
    for (i, (a, b)) in m.params.tensors.iter().zip(&tuned.params.tensors).enumerate() {
        if i == hw || i == hb {
            assert_ne!(a.values, b.values, "{}", a.name);
        } else {
            let same = a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{} moved", a.name);
        }
    }
    // the latent representation is untouched
    let z0 = forward_latent(&m, &splits.test).unwrap();
    let z1 = forward_latent(&tuned, &splits.test).unwrap();
    assert_eq!(z0, z1);
}

#[test]
fn jtt_leaves_other_heads_alone() {
    let (m, splits) = small_base(600, 4);
    let eset = build_error_set(&m, &splits.train, G).unwrap();
    let (tuned, _) = jtt_finetune(&m, &splits.train, &eset, 20.0, &quick_cfg(2), 1).unwrap();
    let enc = m.encoder_tensors();
    let (hw, hb) = m.cat_head_tensors(G);
    for (i, (a, b)) in m.params.tensors.iter().zip(&tuned.params.tensors).enumerate() {
        let moved = a.values != b.values;
        assert_eq!(moved, enc.contains(&i) || i == hw || i == hb, "{}", a.name);
    }
}

#[test]
fn jtt_reduces_error_on_the_error_set() {
    let (mut m, splits) = small_base(1500, 6);
    bias_head(&mut m, G, 2.0);
    let train = &splits.train;
    let eset = build_error_set(&m, train, G).unwrap();
    assert!(eset.len() > 50, "{}", eset.len());
    let hard = train.select_ids(&eset.row_ids).unwrap();
    let err = |model: &ModelParams| {
        let rec = reconstruct(model, &forward_latent(model, &hard).unwrap()).unwrap();
        (0..hard.n())
            .filter(|&i| {
                let l = rec.logits(G, i);
                let best = (1..l.len()).fold(0, |b, c| if l[c] > l[b] { c } else { b });
                best != hard.cat_value(i, G) as usize
            })
            .count() as f64
            / hard.n() as f64
    };
    let before = err(&m);
    assert_eq!(before, 1.0);
    let (tuned, _) = jtt_finetune(&m, train, &eset, 20.0, &quick_cfg(5), 2).unwrap();
    let after = err(&tuned);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn dfr_narrows_per_category_accuracy_spread() {
    let (mut m, splits) = small_base(3000, 7);
    bias_head(&mut m, G, 2.0);
    let sub = build_balanced_subset(&splits.val, G, 11).unwrap();
    let rows = splits.val.select_ids(&sub.row_ids).unwrap();
    let before = spread(&per_category_accuracy(&m, &rows, G));
    let (tuned, _) = dfr_finetune(&m, &rows, G, &quick_cfg(30), 3).unwrap();
    let after = spread(&per_category_accuracy(&tuned, &rows, G));
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn balanced_subset_counts() {
    let ds = synth_spurious(2000, 4, 0.9, 0.1, 8).unwrap();
    for j in 0..ds.k() {
        let sub = build_balanced_subset(&ds, j, 1).unwrap();
        let card = ds.schema.cardinalities()[j];
        let mut full = vec![0usize; card];
        for i in 0..ds.n() {
            full[ds.cat_value(i, j) as usize] += 1;
        }
        let m = *full.iter().filter(|&&c| c > 0).min().unwrap();
        assert_eq!(sub.per_category, m);
        let rows = ds.select_ids(&sub.row_ids).unwrap();
        let mut got = vec![0usize; card];
        for i in 0..rows.n() {
            got[rows.cat_value(i, j) as usize] += 1;
        }
        assert!(got.iter().all(|&c| c == m), "{got:?}");
        let mut ids = sub.row_ids.clone();
        ids.dedup();
        assert_eq!(ids.len(), sub.row_ids.len());
        assert_eq!(build_balanced_subset(&ds, j, 1).unwrap(), sub);
    }
    assert_ne!(
        build_balanced_subset(&ds, 0, 1).unwrap().row_ids,
        build_balanced_subset(&ds, 0, 2).unwrap().row_ids
    );
}

#[test]
fn balanced_subset_skips_absent_categories() {
    let ds = synth_spurious(600, 4, 0.9, 0.1, 8).unwrap();
    let keep: Vec<usize> = (0..ds.n()).filter(|&i| ds.cat_value(i, G) != 2).collect();
    let sub_ds = ds.subset(&keep);
    let sub = build_balanced_subset(&sub_ds, G, 0).unwrap();
    assert!(!sub.categories.contains(&2));
    assert_eq!(sub.categories.len(), 3);
}

#[test]
fn bank_is_parallel_invariant_and_round_trips() {
    let (m, splits) = small_base(500, 9);
    let cfg = quick_cfg(1);
    for strategy in [Strategy::Jtt { upweight: 20.0 }, Strategy::Dfr] {
        let seq = robustify_all(&m, &splits, strategy, &cfg, 5, false).unwrap();
        let par = robustify_all(&m, &splits, strategy, &cfg, 5, true).unwrap();
        assert_eq!(seq.hash(), par.hash());
        assert_eq!(seq.manifest, par.manifest);
        assert_eq!(seq.k(), m.k());

        let dir = tempfile::tempdir().unwrap();
        seq.save(dir.path()).unwrap();
        let back = ModelBank::load(dir.path()).unwrap();
        assert_eq!(back.hash(), seq.hash());
        assert_eq!(back.manifest, seq.manifest);
    }
}

#[test]
fn bank_load_detects_tampering() {
    let (m, splits) = small_base(400, 9);
    let bank = robustify_all(&m, &splits, Strategy::Dfr, &quick_cfg(1), 5, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    let path = dir.path().join("features").join(&bank.manifest.features[0].dir);
    let (mut other, meta) = crate::model::load_checkpoint(&path).unwrap();
    other.params.tensors[0].values[0] += 1.0;
    crate::model::save_checkpoint(&other, meta, &path).unwrap();
    assert!(ModelBank::load(dir.path()).is_err());
}

#[test]
fn strategy_labels_and_parsing() {
    assert_eq!(Strategy::Jtt { upweight: 20.0 }.label(), "jtt_w20");
    assert_eq!(Strategy::Dfr.label(), "dfr");
    assert_eq!("JTT".parse::<StrategyKind>().unwrap(), StrategyKind::Jtt);
    assert!("erm".parse::<StrategyKind>().is_err());
}


// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{max_abs_diff, peaky_model, random_input, reference_forward};
use kvlens::model::{forward, forward_with, image_kv, ForwardOptions, KnockoutSpec, ModelConfig, MultimodalInput};
use kvlens::seed;

fn recorded(w: &kvlens::model::ModelWeights, input: &MultimodalInput, ks: Option<&KnockoutSpec>) -> kvlens::model::ForwardOutput {
    forward_with(w, input, &ForwardOptions { knockout: ks, record_attention: true }).unwrap()
}

fn check_against_reference(cfg: &ModelConfig, n_inputs: u64, knock: &[(usize, usize)]) -> f64 {
    let w = peaky_model(cfg);
    let ks = KnockoutSpec::new(knock.iter().copied());
    let mut worst: f64 = 0.0;
    for i in 0..n_inputs {
        let mut rng = seed::rng(seed::derive(11, i));
        let input = random_input(&mut rng, cfg, (i % 3) as usize, 5 + (i % 4) as usize, 2 + (i % 3) as usize);
        let ours = recorded(&w, &input, Some(&ks));
        let reference = reference_forward(&w, &input, &ks.targets);
        let rec = ours.attention.as_ref().unwrap();
        let seq = input.spans().len();
        for l in 0..cfg.n_layers {
            for qh in 0..cfg.n_q_heads {
                for p in 0..seq {
                    worst = worst.max(max_abs_diff(rec.head_output(l, qh, p), &reference.head_out[l][qh][p]));
                    worst = worst.max(max_abs_diff(&rec.weights(l, qh, p)[..=p], &reference.attn[l][qh][p]));
                }
            }
            for g in 0..cfg.n_kv_heads {
                for p in 0..seq {
                    worst = worst.max(max_abs_diff(ours.cache.key(l, g, p), &reference.keys[l][g][p]));
                    worst = worst.max(max_abs_diff(ours.cache.value(l, g, p), &reference.values[l][g][p]));
                }
            }
        }
        let logits: Vec<f64> = reference.logits.transpose().iter().copied().collect();
        worst = worst.max(max_abs_diff(ours.logits.data(), &logits));
    }
    worst
}

/// Rebuilds every head's output from the recorded queries and a per-query-head
/// copy of the cached keys and values, so both sides see identical inputs.
fn gqa_layer_error(cfg: &ModelConfig, seed_value: u64) -> f64 {
    let w = peaky_model(cfg);
    let mut rng = seed::rng(seed_value);
    let input = random_input(&mut rng, cfg, 1, 7, 4);
    let out = recorded(&w, &input, None);
    let rec = out.attention.as_ref().unwrap();
    let seq = input.spans().len();
    let dh = cfg.d_head;
    let mut worst: f64 = 0.0;
    for l in 0..cfg.n_layers {
        let duplicated: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..cfg.n_q_heads)
            .map(|qh| {
                let g = qh * cfg.n_kv_heads / cfg.n_q_heads;
                ((0..seq).map(|p| out.cache.key(l, g, p).to_vec()).collect(), (0..seq).map(|p| out.cache.value(l, g, p).to_vec()).collect())
            })
            .collect();
        for (qh, (k, v)) in duplicated.iter().enumerate() {
            for p in 0..seq {
                let q = rec.query(l, qh, p);
                let logits: Vec<f64> = (0..=p).map(|j| q.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()).collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let s: f64 = e.iter().sum();
                let mut o = vec![0.0; dh];
                for j in 0..=p {
                    for (oo, vv) in o.iter_mut().zip(&v[j]) {
                        *oo += e[j] / s * vv;
                    }
                }
                worst = worst.max(max_abs_diff(rec.head_output(l, qh, p), &o));
            }
        }
    }
    worst
}

#[test]
fn gqa_matches_duplicated_kv_attention_per_layer() {
    let cfg = ModelConfig::default();
    let worst = (0..20).map(|i| gqa_layer_error(&cfg, seed::derive(31, i))).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst:e}");
}

// Twelve chained layers with peaked attention amplify last-bit differences
// in summation order, so the whole-network comparison uses 1e-10.
#[test]
fn full_forward_matches_reference_chain() {
    let worst = check_against_reference(&ModelConfig::default(), 20, &[]);
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn mqa_and_mha_configs_match_reference() {
    for n_kv in [1, 8] {
        let cfg = ModelConfig { n_layers: 3, n_kv_heads: n_kv, ..ModelConfig::default() };
        let worst = check_against_reference(&cfg, 4, &[]);
        assert!(worst < 1e-12, "n_kv {n_kv}: {worst:e}");
    }
}

#[test]
fn knockout_matches_deletion_recomputation() {
    let cfg = ModelConfig { n_layers: 4, ..ModelConfig::default() };
    let worst = check_against_reference(&cfg, 6, &[(1, 2), (3, 0), (3, 3)]);
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn image_kv_ignores_query_text() {
    let cfg = ModelConfig::default();
    let w = peaky_model(&cfg);
    for i in 0..50u64 {
        let mut rng = seed::rng(seed::derive(21, i));
        let with = random_input(&mut rng, &cfg, (i % 2) as usize, 6, 1 + (i % 7) as usize);
        let without = MultimodalInput::new(with.prefix_text.clone(), with.image_patches.clone(), Vec::new()).unwrap();
        let (a, b) = (forward(&w, &with, None).unwrap(), forward(&w, &without, None).unwrap());
        for l in 0..cfg.n_layers {
            for g in 0..cfg.n_kv_heads {
                let (x, y) = (image_kv(&a.cache, l, g).unwrap(), image_kv(&b.cache, l, g).unwrap());
                let bits = |m: &kvlens::numerics::Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&x.keys), bits(&y.keys));
                assert_eq!(bits(&x.values), bits(&y.values));
            }
        }
    }
}

#[test]
fn empty_knockout_is_bitwise_noop() {
    let cfg = ModelConfig::default();
    let w = peaky_model(&cfg);
    let mut rng = seed::rng(3);
    let input = random_input(&mut rng, &cfg, 2, 7, 4);
    let a = recorded(&w, &input, None);
    let b = recorded(&w, &input, Some(&KnockoutSpec::default()));
    let bits = |m: &kvlens::numerics::Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.logits), bits(&b.logits));
    assert_eq!(bits(&a.residual), bits(&b.residual));
    assert_eq!(a.attention, b.attention);
}

#[test]
fn blocked_weights_are_zero_and_rows_renormalise() {
    let cfg = ModelConfig::default();
    let w = peaky_model(&cfg);
    let mut rng = seed::rng(4);
    let input = random_input(&mut rng, &cfg, 1, 8, 5);
    let spans = input.spans();
    let ks = KnockoutSpec::new([(5, 1)]);
    let out = recorded(&w, &input, Some(&ks));
    let rec = out.attention.as_ref().unwrap();
    let group = cfg.n_q_heads / cfg.n_kv_heads;
    for qh in 0..cfg.n_q_heads {
        for p in spans.query.clone() {
            let row = &rec.weights(5, qh, p)[..=p];
            if qh / group == 1 {
                assert!(spans.image.clone().all(|j| row[j] == 0.0));
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn non_target_heads_unchanged_up_to_target_layer() {
    let cfg = ModelConfig::default();
    let w = peaky_model(&cfg);
    let mut rng = seed::rng(5);
    let input = random_input(&mut rng, &cfg, 0, 8, 5);
    let seq = input.spans().len();
    let target = (6, 2);
    let base = recorded(&w, &input, None);
    let ko = recorded(&w, &input, Some(&KnockoutSpec::new([target])));
    let (ra, rb) = (base.attention.as_ref().unwrap(), ko.attention.as_ref().unwrap());
    let group = cfg.n_q_heads / cfg.n_kv_heads;
    let mut changed = false;
    for l in 0..=target.0 {
        for qh in 0..cfg.n_q_heads {
            for p in 0..seq {
                let same = ra.head_output(l, qh, p).iter().zip(rb.head_output(l, qh, p)).all(|(x, y)| x.to_bits() == y.to_bits());
                if (l, qh / group) == target {
                    changed |= !same;
                } else {
                    assert!(same, "layer {l} head {qh} pos {p}");
                }
            }
        }
    }
    assert!(changed, "knockout had no effect on its own head");
}

#[test]
fn out_of_range_knockout_is_rejected() {
    let cfg = ModelConfig::default();
    let w = peaky_model(&cfg);
    let mut rng = seed::rng(6);
    let input = random_input(&mut rng, &cfg, 0, 3, 2);
    assert!(forward(&w, &input, Some(&KnockoutSpec::new([(0, 4)]))).is_err());
    assert!(forward(&w, &input, Some(&KnockoutSpec::new([(12, 0)]))).is_err());
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::model::{build_model, ModelConfig, PlantSpec};
use crate::synth::{gen_scene, SceneSpec};

fn small_config() -> ModelConfig {
    ModelConfig { n_layers: 4, n_kv_heads: 2, ..ModelConfig::default() }
}

fn scenes(n: u64) -> Vec<SyntheticScene> {
    (0..n).map(|s| gen_scene(s, &SceneSpec::default()).unwrap()).collect()
}

/// Exhaustive 1-D two-class split minimising within-class squared error;
/// returns the low-class membership.
fn brute_split(values: &[f64]) -> Vec<bool> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, sorted[0]);
    for i in 1..sorted.len() {
        let cost = sse(&sorted[..i]) + sse(&sorted[i..]);
        if cost < best.0 {
            best = (cost, sorted[i - 1]);
        }
    }
    values.iter().map(|&v| v <= best.1).collect()
}

#[test]
fn identical_scenes_have_zero_variance() {
    let w = build_model(&small_config(), None).unwrap();
    let s = gen_scene(3, &SceneSpec::default()).unwrap();
    let vm = variance_map(&w, &[s.clone(), s]).unwrap();
    assert!(vm.variance.iter().all(|&v| v == 0.0));
    assert_eq!(vm.variance.len(), 8);
}

#[test]
fn two_scene_scalar_variance_is_one() {
    let a = Matrix::from_rows(&[[0.0]]).unwrap();
    let b = Matrix::from_rows(&[[2.0]]).unwrap();
    assert_eq!(key_variance(&[&a, &b]).unwrap(), 1.0);
}

#[test]
fn planted_head_is_flat_and_random_heads_vary() {
    let w = build_model(&small_config(), Some(&PlantSpec::new([(1, 0), (3, 1)]))).unwrap();
    let vm = variance_map(&w, &scenes(6)).unwrap();
    for ((l, h), v) in vm.cells() {
        if [(1, 0), (3, 1)].contains(&(l, h)) {
            assert!(v < 1e-12, "({l},{h}) {v}");
        } else {
            assert!(v > 1e-3, "({l},{h}) {v}");
        }
    }
}

#[test]
fn variance_needs_matching_grids() {
    let w = build_model(&small_config(), None).unwrap();
    let a = gen_scene(0, &SceneSpec::default()).unwrap();
    let b = gen_scene(1, &SceneSpec { grid_h: 6, ..SceneSpec::default() }).unwrap();
    assert!(matches!(variance_map(&w, &[a.clone(), b]), Err(Error::DimensionMismatch(_))));
    assert!(variance_map(&w, &[a]).is_err());
}

#[test]
fn bimodal_clear_cases() {
    let v = [1.0, 1.0, 1.0, 9.0, 9.0, 9.0];
    let BimodalSplit::Split { threshold, modes } = bimodal_threshold(&v).unwrap() else {
        panic!("expected a split");
    };
    assert!(threshold > 1.0 && threshold < 9.0);
    assert!(modes.0 < threshold && threshold < modes.1);
    let labels: Vec<bool> = v.iter().map(|&x| x < threshold).collect();
    assert_eq!(labels, brute_split(&v));
    assert_eq!(bimodal_threshold(&[4.0; 6]).unwrap(), BimodalSplit::NoSplit);
    assert!(bimodal_threshold(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn unimodal_sample_has_no_split() {
    // uniform base with a single central bump
    let mut v: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    v.extend((-20..=20).map(|j| 0.5 + j as f64 / 200.0));
    assert_eq!(bimodal_threshold(&v).unwrap(), BimodalSplit::NoSplit);
}

#[test]
fn modes_near_two_and_six_hundred_split_between_them() {
    // reference split for this shape of data sits at 450
    let mut rng = crate::seed::rng(450);
    let lo = Normal::new(200.0, 40.0).unwrap();
    let hi = Normal::new(600.0, 40.0).unwrap();
    let v: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { lo.sample(&mut rng) } else { hi.sample(&mut rng) }).collect();
    let BimodalSplit::Split { threshold, modes } = bimodal_threshold(&v).unwrap() else {
        panic!("expected a split");
    };
    assert!(threshold > 200.0 && threshold < 600.0, "{threshold}");
    assert!((modes.0 - 200.0).abs() < 60.0 && (modes.1 - 600.0).abs() < 60.0, "{modes:?}");
}

#[test]
fn bimodal_agrees_with_brute_force_on_fifty_draws() {
    let mut rng = crate::seed::rng(7);
    for draw in 0..50 {
        let a = Normal::new(rng.random_range(0.0..10.0), 1.0).unwrap();
        let gap = rng.random_range(12.0..30.0);
        let b = Normal::new(a.mean() + gap, 1.0).unwrap();
        let n_a = rng.random_range(8..30);
        let n_b = rng.random_range(8..30);
        let mut v: Vec<f64> = (0..n_a).map(|_| a.sample(&mut rng)).collect();
        v.extend((0..n_b).map(|_| b.sample(&mut rng)));
        let BimodalSplit::Split { threshold, .. } = bimodal_threshold(&v).unwrap() else {
            panic!("draw {draw}: no split");
        };
        let labels: Vec<bool> = v.iter().map(|&x| x < threshold).collect();
        assert_eq!(labels, brute_split(&v), "draw {draw}");
    }
}

#[test]
fn manual_thresholds_at_the_extremes() {
    let vm = VarianceMap { n_layers: 3, n_kv_heads: 2, n_scenes: 2, variance: vec![0.5, 1.0, 2.0, 3.0, 0.1, 4.0] };
    let all_dep = classify_keys(&vm, Some(0.0)).unwrap();
    assert!(all_dep.labels.iter().all(|&l| l == KeyLabel::Dependent));
    let all_agn = classify_keys(&vm, Some(10.0)).unwrap();
    assert!(all_agn.labels.iter().all(|&l| l == KeyLabel::Agnostic));
    assert_eq!(all_agn.source, ThresholdSource::Manual);
    assert!(classify_keys(&vm, Some(f64::NAN)).is_err());
}

#[test]
fn no_split_without_threshold_is_an_error() {
    let vm = VarianceMap { n_layers: 2, n_kv_heads: 2, n_scenes: 2, variance: vec![1.0; 4] };
    assert!(matches!(classify_keys(&vm, None), Err(Error::ClassificationUnavailable(_))));
}

#[test]
fn layer_thirds() {
    let g = LayerGroups::thirds(12);
    assert_eq!((g.early.clone(), g.middle.clone(), g.late.clone()), (0..4, 4..8, 8..12));
    let g = LayerGroups::thirds(28);
    assert_eq!((g.early.len(), g.middle.len(), g.late.len()), (9, 10, 9));
    let g = LayerGroups::thirds(2);
    assert_eq!((g.early.len(), g.middle.len(), g.late.len()), (0, 2, 0));
}

#[test]
fn planted_set_recovered_by_automatic_split() {
    let cfg = ModelConfig::default();
    let plant = PlantSpec::whole_layers(&[0, 1, 10, 11], cfg.n_kv_heads);
    let w = build_model(&cfg, Some(&plant)).unwrap();
    let vm = variance_map(&w, &scenes(12)).unwrap();
    let c = classify_keys(&vm, None).unwrap();
    assert_eq!(c.source, ThresholdSource::Bimodal);
    assert_eq!(c.agnostic_set(), plant.heads);
    assert_eq!(c.heads(LayerGroup::Late, KeyLabel::Agnostic), vec![(10, 0), (10, 1), (10, 2), (10, 3), (11, 0), (11, 1), (11, 2), (11, 3)]);
    // any threshold strictly between the two populations gives the same set
    let max_planted = plant.heads.iter().map(|&(l, h)| vm.get(l, h)).fold(0.0, f64::max);
    let min_other = vm.cells().filter(|(c, _)| !plant.heads.contains(c)).map(|(_, v)| v).fold(f64::INFINITY, f64::min);
    for t in [0.01, 0.5, 0.99] {
        let thr = max_planted + t * (min_other - max_planted);
        assert_eq!(classify_keys(&vm, Some(thr)).unwrap().agnostic_set(), plant.heads);
    }
}

#[test]
fn planted_pca_coordinates_coincide_across_scenes() {
    let w = build_model(&small_config(), Some(&PlantSpec::new([(2, 1)]))).unwrap();
    let sc = scenes(2);
    let coords = export_key_pca(&w, &sc, 2, 1, 3).unwrap();
    assert_eq!((coords[0].rows(), coords[0].cols()), (64, 3));
    for (a, b) in coords[0].data().iter().zip(coords[1].data()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(coords.iter().all(|m| m.data().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn single_scene_export_shape_and_identical_keys() {
    let w = build_model(&small_config(), None).unwrap();
    let s = scenes(1);
    let coords = export_key_pca(&w, &s, 0, 0, 3).unwrap();
    assert_eq!(coords.len(), 1);
    assert_eq!((coords[0].rows(), coords[0].cols()), (64, 3));
    let twice = export_key_pca(&w, &[s[0].clone(), s[0].clone()], 0, 0, 3).unwrap();
    assert_eq!(twice[0], twice[1]);
}

#[test]
fn csv_layouts() {
    let vm = VarianceMap { n_layers: 1, n_kv_heads: 2, n_scenes: 2, variance: vec![0.0, 0.25] };
    assert_eq!(variance_csv(&vm, None), "layer,kv_head,variance,label\n0,0,0,\n0,1,0.25,\n");
    let c = classify_keys(&vm, Some(0.1)).unwrap();
    assert_eq!(variance_csv(&vm, Some(&c)), "layer,kv_head,variance,label\n0,0,0,agnostic\n0,1,0.25,dependent\n");
    let m = Matrix::from_rows(&[[0.0, 0.5, 1.0], [1.0, 0.0, 0.25]]).unwrap();
    assert_eq!(pca_csv(&[m], 2), "scene_id,position,row,col,c1,c2,c3\n0,0,0,0,0,0.5,1\n0,1,0,1,1,0,0.25\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_is_scene_order_invariant(vals in proptest::collection::vec(-3.0f64..3.0, 5 * 4 * 2), rot in 1usize..5) {
        let mats: Vec<Matrix> = vals.chunks(8).map(|c| Matrix::new(4, 2, c.to_vec()).unwrap()).collect();
        let a: Vec<&Matrix> = mats.iter().collect();
        let mut b = a.clone();
        b.rotate_left(rot);
        b.reverse();
        let (va, vb) = (key_variance(&a).unwrap(), key_variance(&b).unwrap());
        prop_assert!(va >= 0.0);
        prop_assert!((va - vb).abs() <= 1e-12 * va.max(1.0));
    }
}

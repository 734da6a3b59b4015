// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::reference_pca;
use kvlens::keys::export_key_pca;
use kvlens::model::{build_model, ModelConfig, PlantSpec};
use kvlens::numerics::{pca_fit, Matrix};
use kvlens::seed;
use kvlens::synth::{gen_scene, SceneSpec};
use rand::Rng;

/// Largest relative error of components (sign-aligned) and explained variance.
pub fn pca_error(d: usize, n: usize, seed_value: u64) -> f64 {
    let mut rng = seed::rng(seed_value);
    // anisotropic scales keep the eigenvalues well apart
    let scales: Vec<f64> = (0..d).map(|i| 1.0 + 1.5 * i as f64).collect();
    let data: Vec<f64> = (0..n * d).map(|i| rng.random_range(-1.0..1.0) * scales[i % d]).collect();
    let m = Matrix::new(n, d, data).unwrap();
    let ours = pca_fit(&m, d).unwrap();
    let (values, vectors) = reference_pca(&m);
    let mut worst: f64 = 0.0;
    for c in 0..d {
        worst = worst.max((ours.explained_variance[c] - values[c]).abs() / values[c].abs().max(1e-300));
        let ours_c = ours.components.row(c);
        let sign = if ours_c.iter().zip(&vectors[c]).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let err = ours_c.iter().zip(&vectors[c]).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn pca_matches_dense_eigendecomposition() {
    for d in 2..=16 {
        for s in 0..3 {
            let e = pca_error(d, 3 * d + 10, seed::derive(d as u64, s));
            assert!(e < 1e-6, "d {d} seed {s}: {e:e}");
        }
    }
}

#[test]
fn planted_head_projections_coincide_across_scenes() {
    let cfg = ModelConfig::default();
    let w = build_model(&cfg, Some(&PlantSpec::whole_layers(&[0, 1, 10, 11], cfg.n_kv_heads))).unwrap();
    let scenes: Vec<_> = (0..2).map(|s| gen_scene(40 + s, &SceneSpec::default()).unwrap()).collect();
    for (l, h) in [(0, 0), (10, 3), (11, 1)] {
        let coords = export_key_pca(&w, &scenes, l, h, 2).unwrap();
        let diff = coords[0].data().iter().zip(coords[1].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "({l},{h}): {diff:e}");
    }
    // an unplanted head does not coincide
    let coords = export_key_pca(&w, &scenes, 5, 0, 2).unwrap();
    let diff = coords[0].data().iter().zip(coords[1].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3);
}

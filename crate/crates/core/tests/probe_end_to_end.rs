// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::two_class_sizes;
use kvlens::model::ModelConfig;
use kvlens::probes::{planted_probe_model, probe_fg_seg, probe_sem_corr, probe_temp_corr, probe_text_seg, PROBE_HEADS};
use kvlens::synth::{gen_episode, EpisodeSizes, Task};

#[test]
fn planted_heads_solve_every_probe() {
    let w = planted_probe_model(&ModelConfig::default()).unwrap();
    let (l, h) = PROBE_HEADS.color;
    let (al, ah) = PROBE_HEADS.appearance;
    for s in 0..5 {
        let ep = gen_episode(Task::FgSeg, s, &two_class_sizes()).unwrap();
        assert_eq!(probe_fg_seg(&w, &ep, l, h).unwrap().value, 1.0, "fg_seg seed {s}");

        let ep = gen_episode(Task::SemSeg, s, &two_class_sizes()).unwrap();
        for scene in &ep.query {
            assert_eq!(probe_text_seg(&w, scene, &ep.text, l, h).unwrap().value, 1.0, "text_seg seed {s}");
        }

        let ep = gen_episode(Task::SemCorr, s, &EpisodeSizes::default()).unwrap();
        for (a, b) in ep.support.iter().zip(&ep.query) {
            assert_eq!(probe_sem_corr(&w, a, b, al, ah).unwrap().value, 1.0, "sem_corr seed {s}");
        }

        let ep = gen_episode(Task::TempCorr, s, &EpisodeSizes::default()).unwrap();
        assert_eq!(probe_temp_corr(&w, &ep.query, l, h).unwrap().value, 1.0, "temp_corr seed {s}");
    }
}

#[test]
fn each_head_fails_the_other_family() {
    let w = planted_probe_model(&ModelConfig::default()).unwrap();
    let (l, h) = PROBE_HEADS.appearance;
    let worst = (0..5)
        .map(|s| {
            let ep = gen_episode(Task::SemSeg, s, &two_class_sizes()).unwrap();
            probe_text_seg(&w, &ep.query[0], &ep.text, l, h).unwrap().value
        })
        .fold(1.0, f64::min);
    assert!(worst < 1.0);
    // colour values are flat inside an object, so they cannot locate keypoints
    let (l, h) = PROBE_HEADS.color;
    let ep = gen_episode(Task::SemCorr, 4, &EpisodeSizes::default()).unwrap();
    assert!(probe_sem_corr(&w, &ep.support[0], &ep.query[0], l, h).unwrap().value < 1.0);
}

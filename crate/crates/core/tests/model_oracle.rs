mod common;

use common::{bound_from_vars, naive_score, random_labeled};
use grail_core::autodiff::{grad_check, GradCheck};
use grail_core::model::{self, EdgeMasks, GnnConfig, GnnParams, Readout};
use grail_core::rng::{indexed_substream, substream};
use grail_core::subgraph::structural_dim;
use grail_core::Tensor;

fn small_cfg(k: usize, d: usize) -> GnnConfig {
    GnnConfig {
        hidden_dim: d,
        attn_hidden: d,
        num_bases: 2,
        ..GnnConfig::new(structural_dim(k))
    }
}

#[test]
fn tape_forward_matches_loop_reference() {
    let variants = [
        (Readout::JumpingKnowledge, true, false, None),
        (Readout::LastLayer, true, true, None),
        (Readout::TargetNode, false, false, None),
        (Readout::JumpingKnowledge, true, true, Some(0.45)),
    ];
    for (case, &(readout, attention, in_nb, floor)) in variants.iter().enumerate() {
        for trial in 0..15 {
            let mut rng = indexed_substream(case as u64, "oracle", trial);
            let sub = random_labeled(&mut rng, 8, 3, 2);
            let cfg = GnnConfig {
                readout,
                attention,
                aggregate_in_neighbors: in_nb,
                attention_floor: floor,
                num_layers: 2,
                ..small_cfg(2, 5)
            };
            let params = GnnParams::init(&cfg, 3, &mut rng).unwrap();
            let fast = model::score(&sub, &params, &cfg).unwrap();
            let slow = naive_score(&sub, &params, &cfg, None);
            assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()), "{fast} vs {slow}");
        }
    }
}

#[test]
fn masked_forward_matches_loop_reference() {
    let mut rng = substream(3, "masked");
    for _ in 0..20 {
        let sub = random_labeled(&mut rng, 8, 3, 2);
        let cfg = small_cfg(2, 4);
        let params = GnnParams::init(&cfg, 3, &mut rng).unwrap();
        let masks = EdgeMasks::sample(&sub, cfg.num_layers, 0.5, &mut rng);
        let plain: Vec<Vec<f64>> = (0..cfg.num_layers)
            .map(|k| masks.layer(k).unwrap().data().to_vec())
            .collect();
        let (tape, _, score) = model::score_triplet(&sub, &params, &cfg, Some(&masks)).unwrap();
        let slow = naive_score(&sub, &params, &cfg, Some(&plain));
        assert!((tape.value(score).item() - slow).abs() < 1e-10 * (1.0 + slow.abs()));
    }
}

#[test]
fn score_gradients_match_finite_differences() {
    let k = 2;
    let cfg = small_cfg(k, 8);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..20 {
        let mut rng = indexed_substream(11, "gradcheck", trial);
        let sub = random_labeled(&mut rng, 8, 3, k);
        let params = GnnParams::init(&cfg, 3, &mut rng).unwrap();
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let report = grad_check(
            |tape, vars| {
                let bound = bound_from_vars(vars, cfg.num_layers);
                Ok(model::forward(tape, &bound, &sub, &cfg, None)?.score)
            },
            &tensors,
            GradCheck {
                eps: 1e-4,
                max_coords_per_param: None,
            },
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    assert!(checked > 20_000, "only {checked} coordinates checked");
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn bound_gradients_land_in_matching_slots() {
    let mut rng = substream(5, "slots");
    let sub = random_labeled(&mut rng, 6, 2, 1);
    let cfg = GnnConfig {
        num_bases: 1,
        ..small_cfg(1, 3)
    };
    let params = GnnParams::init(&cfg, 2, &mut rng).unwrap();
    let (mut tape, bound, score) = model::score_triplet(&sub, &params, &cfg, None).unwrap();
    tape.backward(score).unwrap();
    let grads = bound.gradients(&tape, &params);
    for ((name, g), p) in grads.named().into_iter().zip(params.tensors()) {
        assert_eq!(g.shape(), p.shape(), "{name}");
    }
    assert!(grads.readout.data().iter().any(|&x| x != 0.0));
}

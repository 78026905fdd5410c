mod common;

use std::f64::consts::E;

use common::{js_oracle, l_full_oracle, l_self_oracle, random, rng, row, softmax};
use fsru::gradcheck::check_fn;
use fsru::graph::Graph;
use fsru::objectives::{
    classify, cross_entropy, fuse, gamma, l_full, l_self, logits, total_loss, HeadParams, HeadVars,
    SupervisedPairing,
};
use fsru::params::Parameters;
use fsru::Tensor;
use proptest::prelude::*;

fn scalar(g: &Graph, v: fsru::graph::Var) -> f64 {
    g.value(v).item().unwrap()
}

fn labels_from(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| u8::from(b)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn supervised_term_matches_loop_oracle(
        seed in 0u64..10_000,
        bits in prop::collection::vec(any::<bool>(), 2..=32),
        dim in 2usize..6,
        tau in 0.05f64..2.0,
        literal in any::<bool>(),
    ) {
        let pairing = if literal { SupervisedPairing::Literal } else { SupervisedPairing::WithinClass };
        let labels = labels_from(&bits);
        let mut r = rng(seed);
        let (t, v) = (random(&[labels.len(), dim], &mut r), random(&[labels.len(), dim], &mut r));
        let mut g = Graph::new();
        let (tv, vv) = (g.constant(t.clone()), g.constant(v.clone()));
        let term = l_full(&mut g, tv, vv, &labels, tau, pairing).unwrap();
        let got = scalar(&g, term.loss);
        let want = l_full_oracle(&[&t, &v], &labels, tau, pairing);
        prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn inter_modal_term_matches_loop_oracle(
        seed in 0u64..10_000,
        b in 2usize..=32,
        dim in 2usize..6,
        tau in 0.05f64..2.0,
    ) {
        let mut r = rng(seed);
        let (t, v) = (random(&[b, dim], &mut r), random(&[b, dim], &mut r));
        let mut g = Graph::new();
        let (tv, vv) = (g.constant(t.clone()), g.constant(v.clone()));
        let term = l_self(&mut g, tv, vv, tau).unwrap();
        let got = scalar(&g, term.loss);
        let want = l_self_oracle(&t, &v, tau);
        prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn gamma_is_symmetric_bounded_and_matches_oracle(
        seed in 0u64..10_000,
        b in 1usize..8,
        dim in 1usize..10,
        spread in 0.1f64..60.0,
    ) {
        let mut r = rng(seed);
        let t = random(&[b, dim], &mut r).map(|x| x * spread);
        let v = random(&[b, dim], &mut r).map(|x| x * spread);
        let mut g = Graph::new();
        let (tv, vv) = (g.constant(t.clone()), g.constant(v.clone()));
        let forward = gamma(&mut g, tv, vv).unwrap();
        let backward = gamma(&mut g, vv, tv).unwrap();
        prop_assert_eq!(g.value(forward).data(), g.value(backward).data());
        for i in 0..b {
            let value = g.value(forward).data()[i];
            prop_assert!((0.0..=1.0).contains(&value));
            prop_assert!((value - js_oracle(row(&t, i), row(&v, i)).clamp(0.0, 1.0)).abs() < 1e-12);
        }
        let same = gamma(&mut g, tv, tv).unwrap();
        prop_assert!(g.value(same).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fusion_is_linear_in_features_for_fixed_gamma(
        seed in 0u64..10_000,
        lambda in -4.0f64..4.0,
        gammas in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let mut r = rng(seed);
        let head = HeadParams::init(4, &mut r);
        let (t, v) = (random(&[3, 4], &mut r), random(&[3, 4], &mut r));
        let eval = |scale: f64| {
            let mut g = Graph::new();
            let hv = head.bind(&mut g);
            let tv = g.constant(t.map(|x| x * scale));
            let vv = g.constant(v.map(|x| x * scale));
            let gv = g.constant(Tensor::new(&[3, 1], gammas.clone()).unwrap());
            let m = fuse(&mut g, tv, vv, gv, &hv).unwrap();
            g.value(m).clone()
        };
        let base = eval(1.0).map(|x| x * lambda);
        prop_assert!(eval(lambda).max_abs_diff(&base) < 1e-12);
    }

    #[test]
    fn total_is_the_weighted_sum_of_its_terms(
        seed in 0u64..10_000,
        bits in prop::collection::vec(any::<bool>(), 2..12),
        alpha in 0.0f64..1.0,
        beta in 0.0f64..1.0,
    ) {
        let labels = labels_from(&bits);
        let b = labels.len();
        let mut r = rng(seed);
        let (t, v, z) = (random(&[b, 5], &mut r), random(&[b, 5], &mut r), random(&[b, 2], &mut r));
        let mut g = Graph::new();
        let (tv, vv, zv) = (g.constant(t.clone()), g.constant(v.clone()), g.constant(z.clone()));
        let gm = gamma(&mut g, tv, vv).unwrap();
        let obj = total_loss(&mut g, zv, tv, vv, gm, &labels, alpha, beta, 0.1, SupervisedPairing::WithinClass).unwrap();
        let ce: f64 = (0..b)
            .map(|i| -softmax(row(&z, i))[usize::from(labels[i])].ln())
            .sum::<f64>() / b as f64;
        let full = l_full_oracle(&[&t, &v], &labels, 0.1, SupervisedPairing::WithinClass);
        let inter = l_self_oracle(&t, &v, 0.1);
        let want = ce + alpha * full + beta * inter;
        let rep = obj.report;
        prop_assert!((rep.total - want).abs() < 1e-10 * want.max(1.0));
        prop_assert_eq!(rep.total, scalar(&g, obj.total));
        prop_assert!(rep.l_cls >= 0.0 && rep.l_full >= 0.0 && rep.l_self >= 0.0);
    }
}

#[test]
fn supervised_closed_form() {
    // Two per class; same-class features coincide, cross-class are orthogonal; τ = 1.
    let feats = Tensor::new(&[4, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let per_anchor = -(E / (E + 2.0)).ln();
    assert!((per_anchor - 0.551).abs() < 5e-4);
    let mut g = Graph::new();
    let z = g.constant(feats);
    let term = l_full(&mut g, z, z, &[1, 1, 0, 0], 1.0, SupervisedPairing::WithinClass).unwrap();
    // Four anchors, one positive each weighted by 1/|R_c| = 1/2, two modalities.
    assert!((scalar(&g, term.loss) - 2.0 * 4.0 * 0.5 * per_anchor).abs() < 1e-12);
}

#[test]
fn inter_modal_closed_form() {
    let feats = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let per_direction = -(E / (E + 1.0)).ln();
    assert!((per_direction - 0.3133).abs() < 5e-5);
    let mut g = Graph::new();
    let z = g.constant(feats);
    let term = l_self(&mut g, z, z, 1.0).unwrap();
    assert!((scalar(&g, term.loss) - per_direction).abs() < 1e-12);
}

#[test]
fn disjoint_distributions_push_gamma_to_one() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(&[1, 3], vec![80.0, 0.0, 0.0]).unwrap());
    let b = g.constant(Tensor::new(&[1, 3], vec![0.0, 80.0, 0.0]).unwrap());
    let gm = gamma(&mut g, a, b).unwrap();
    assert!((g.value(gm).data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn half_gamma_with_identity_maps_adds_features() {
    let mut r = rng(1);
    let head = HeadParams {
        fuse_text: Tensor::from_fn(&[3, 3], |i| f64::from(u8::from(i / 3 == i % 3))),
        fuse_image: Tensor::from_fn(&[3, 3], |i| f64::from(u8::from(i / 3 == i % 3))),
        ..HeadParams::init(3, &mut r)
    };
    let (t, v) = (random(&[2, 3], &mut r), random(&[2, 3], &mut r));
    let mut g = Graph::new();
    let hv = head.bind(&mut g);
    let (tv, vv) = (g.constant(t.clone()), g.constant(v.clone()));
    let half = g.constant(Tensor::full(&[2, 1], 0.5));
    let m = fuse(&mut g, tv, vv, half, &hv).unwrap();
    let want = Tensor::from_fn(&[2, 3], |i| t.data()[i] + v.data()[i]);
    assert!(g.value(m).max_abs_diff(&want) < 1e-15);
}

#[test]
fn class_probabilities_match_direct_softmax() {
    let mut r = rng(6);
    let head = HeadParams {
        classifier_bias: random(&[1, 2], &mut r),
        ..HeadParams::init(5, &mut r)
    };
    let m = random(&[4, 5], &mut r);
    let mut g = Graph::new();
    let hv = head.bind(&mut g);
    let mv = g.constant(m.clone());
    let probs = classify(&mut g, mv, &hv).unwrap();
    for i in 0..4 {
        let z: Vec<f64> = (0..2)
            .map(|c| (0..5).map(|e| m.at(&[i, e]) * head.classifier.at(&[e, c])).sum::<f64>() + head.classifier_bias.at(&[0, c]))
            .collect();
        let want = softmax(&z);
        let got = row(g.value(probs), i);
        assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14);
        assert!((got[0] + got[1] - 1.0).abs() < 1e-15);
    }
}

#[test]
fn head_and_loss_gradients_match_finite_differences() {
    let mut r = rng(29);
    let head = HeadParams::init(4, &mut r);
    let labels = [1u8, 0, 0, 1, 1];
    let mut inputs = vec![random(&[5, 4], &mut r), random(&[5, 4], &mut r)];
    inputs.extend(head.named().into_iter().map(|(_, t)| t.clone()));
    inputs[5] = random(&[1, 2], &mut r);
    let report = check_fn(&inputs, |g, v| {
        let hv = HeadVars {
            fuse_text: v[2],
            fuse_image: v[3],
            classifier: v[4],
            classifier_bias: v[5],
        };
        let gm = gamma(g, v[0], v[1])?;
        let m = fuse(g, v[0], v[1], gm, &hv)?;
        let z = logits(g, m, &hv)?;
        let obj = total_loss(g, z, v[0], v[1], gm, &labels, 0.2, 0.2, 0.5, SupervisedPairing::WithinClass)?;
        Ok(obj.total)
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    assert_eq!(report.covered.len(), 6);
}

#[test]
fn perfect_predictions_have_near_zero_cross_entropy() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(&[2, 2], vec![-40.0, 40.0, 40.0, -40.0]).unwrap());
    let ce = cross_entropy(&mut g, z, &[1, 0]).unwrap();
    assert!(scalar(&g, ce) < 1e-30);
}

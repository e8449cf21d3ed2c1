mod common;

use adtn_core::adtn::{plan_partition, plan_partition_capped, Activation, Adtn, AdtnSpec, Column, Init};
use adtn_core::Tensor;
use proptest::prelude::*;

use common::{layer_matrix_oracle, rel_diff};

const ACTIVATIONS: [Activation; 2] = [Activation::Identity, Activation::Relu];

#[test]
fn contraction_matches_layer_matrices() {
    for q in 3..=6 {
        for m in 1..=3 {
            for act in ACTIVATIONS {
                for seed in 0..10 {
                    let spec = AdtnSpec::new(q, 2, m, act);
                    let init = if seed % 2 == 0 { Init::Gaussian { std: 0.5 } } else { Init::NearIdentity { noise: 0.3 } };
                    let adtn = Adtn::<f64>::build(spec, init, seed).unwrap();
                    let fast = adtn.contract().unwrap();
                    let err = rel_diff(fast.flat(), &layer_matrix_oracle(&adtn));
                    assert!(err < 1e-12, "q={q} m={m} {act:?} seed={seed}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn contraction_matches_layer_matrices_for_d3() {
    for (q, m) in [(3, 1), (3, 2), (4, 2)] {
        for act in ACTIVATIONS {
            let adtn = Adtn::<f64>::build(AdtnSpec::new(q, 3, m, act), Init::Gaussian { std: 0.4 }, 7).unwrap();
            let err = rel_diff(adtn.contract().unwrap().flat(), &layer_matrix_oracle(&adtn));
            assert!(err < 1e-12, "q={q} m={m} {act:?}: {err:e}");
        }
    }
}

#[test]
fn wiring_is_a_brick_wall() {
    let sites = AdtnSpec::new(5, 2, 2, Activation::Relu).wiring();
    let tops: Vec<(usize, Column, usize)> = sites.iter().map(|s| (s.layer, s.column, s.top)).collect();
    assert_eq!(
        tops,
        vec![
            (0, Column::A, 0),
            (0, Column::A, 2),
            (0, Column::B, 1),
            (0, Column::B, 3),
            (1, Column::A, 0),
            (1, Column::A, 2),
            (1, Column::B, 1),
            (1, Column::B, 3),
        ]
    );
}

#[test]
fn identity_init_without_noise_reproduces_the_product_state() {
    let adtn = Adtn::<f64>::build(AdtnSpec::new(4, 2, 2, Activation::Relu), Init::NearIdentity { noise: 0.0 }, 0).unwrap();
    let out = adtn.contract().unwrap();
    let mut expected = vec![0.0; 16];
    expected[0] = 1.0;
    assert_eq!(out.flat(), expected.as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counts_scale_linearly(q in 2usize..12, m in 1usize..5, d in 2usize..4) {
        let spec = AdtnSpec::new(q, d, m, Activation::Relu);
        let adtn = Adtn::<f64>::build(spec, Init::default(), 1).unwrap();
        prop_assert_eq!(adtn.param_count(), m * (q - 1) * d.pow(4));
        prop_assert_eq!(adtn.tensors().len(), m * (q - 1));
        if d.pow(q as u32) <= 1 << 12 {
            prop_assert_eq!(adtn.contract().unwrap().flat().len(), d.pow(q as u32));
        }
        prop_assert_eq!(spec.encoded_size(), d.pow(q as u32));
    }

    #[test]
    fn identity_activation_is_linear_in_each_tensor(
        q in 3usize..7,
        m in 1usize..4,
        seed in 0u64..1000,
        pick in 0usize..64,
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let spec = AdtnSpec::new(q, 2, m, Activation::Identity);
        let base = Adtn::<f64>::build(spec, Init::Gaussian { std: 0.5 }, seed).unwrap();
        let k = pick % spec.tensor_count();
        let other = Adtn::<f64>::build(spec, Init::Gaussian { std: 0.5 }, seed + 1).unwrap().tensors()[k].clone();
        let with = |t: Tensor<f64>| {
            let mut a = base.clone();
            a.tensors_mut()[k] = t;
            a.contract().unwrap().flat().to_vec()
        };
        let x = base.tensors()[k].clone();
        let mixed = with(x.scale(alpha).add(&other.scale(beta)).unwrap());
        let fx = with(x);
        let fy = with(other);
        let combined: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| alpha * a + beta * b).collect();
        let scale = combined.iter().chain(&mixed).fold(1.0f64, |s, v| s.max(v.abs()));
        for (a, b) in mixed.iter().zip(&combined) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{} vs {}", a, b);
        }
    }

    #[test]
    fn random_networks_match_the_oracle(q in 2usize..6, m in 1usize..4, relu in any::<bool>(), seed in any::<u64>()) {
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let adtn = Adtn::<f64>::build(AdtnSpec::new(q, 2, m, act), Init::Gaussian { std: 0.6 }, seed).unwrap();
        prop_assert!(rel_diff(adtn.contract().unwrap().flat(), &layer_matrix_oracle(&adtn)) < 1e-12);
    }

    #[test]
    fn capped_plans_are_prefixes(n in 4usize..2_000_000, cap in 1usize..6) {
        let full = plan_partition(n, 2, 1);
        let capped = plan_partition_capped(n, 2, 1, Some(cap));
        let keep = cap.min(full.chunks.len());
        prop_assert_eq!(&capped.chunks[..], &full.chunks[..keep]);
        prop_assert_eq!(capped.residual.offset + capped.residual.len, n);
    }
}

#[test]
fn partition_example_from_the_layout() {
    let p = plan_partition(3 * 1024, 2, 1);
    let lens: Vec<usize> = p.chunks.iter().map(|c| c.len).collect();
    assert_eq!(lens, vec![2048, 1024]);
    assert_eq!(p.residual.len, 0);
}

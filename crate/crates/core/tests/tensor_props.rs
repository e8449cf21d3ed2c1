use adtn_core::Tensor;
use proptest::prelude::*;
use proptest::sample::subsequence;

/// Shape of order 1..=5 with dims 1..=4.
fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 1..=5)
}

fn tensor_of(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
}

fn tensor() -> impl Strategy<Value = Tensor<f64>> {
    shape().prop_flat_map(tensor_of)
}

/// A pair of tensors sharing the dims of `axes_a` (in `a`) and `axes_b` (in `b`).
fn contractible() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, Vec<usize>, Vec<usize>)> {
    (shape(), prop::collection::vec(1usize..=3, 0..=3))
        .prop_flat_map(|(sa, extra)| {
            let order = sa.len();
            (Just(sa), Just(extra), subsequence((0..order).collect::<Vec<_>>(), 0..=order.min(3)))
        })
        .prop_flat_map(|(sa, extra, axes_a)| {
            let k = axes_a.len();
            let perm = Just((0..k + extra.len()).collect::<Vec<_>>()).prop_shuffle();
            (Just(sa), Just(extra), Just(axes_a), perm)
        })
        .prop_flat_map(|(sa, extra, axes_a, slots)| {
            // Place the shared axes at the first k shuffled slots of b.
            let k = axes_a.len();
            let mut sb = vec![0; k + extra.len()];
            let axes_b: Vec<usize> = slots[..k].to_vec();
            for (i, &slot) in axes_b.iter().enumerate() {
                sb[slot] = sa[axes_a[i]];
            }
            for (e, &slot) in extra.iter().zip(&slots[k..]) {
                sb[slot] = *e;
            }
            (tensor_of(sa), tensor_of(sb), Just(axes_a), Just(axes_b))
        })
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &dim) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % dim;
        flat /= dim;
    }
    idx
}

/// Nested-loop contraction: free axes of `a` in order, then free axes of `b`.
fn contract_oracle(a: &Tensor<f64>, b: &Tensor<f64>, axes_a: &[usize], axes_b: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let free_a: Vec<usize> = (0..a.order()).filter(|i| !axes_a.contains(i)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|i| !axes_b.contains(i)).collect();
    let out_shape: Vec<usize> =
        free_a.iter().map(|&i| a.shape()[i]).chain(free_b.iter().map(|&i| b.shape()[i])).collect();
    let shared: Vec<usize> = axes_a.iter().map(|&i| a.shape()[i]).collect();
    let n_out: usize = out_shape.iter().product();
    let n_shared: usize = shared.iter().product();
    let mut out = vec![0.0; n_out];
    for (o, slot) in out.iter_mut().enumerate() {
        let oi = unravel(o, &out_shape);
        for s in 0..n_shared {
            let si = unravel(s, &shared);
            let mut ia = vec![0; a.order()];
            let mut ib = vec![0; b.order()];
            for (k, &ax) in free_a.iter().enumerate() {
                ia[ax] = oi[k];
            }
            for (k, &ax) in free_b.iter().enumerate() {
                ib[ax] = oi[free_a.len() + k];
            }
            for (k, (&xa, &xb)) in axes_a.iter().zip(axes_b).enumerate() {
                ia[xa] = si[k];
                ib[xb] = si[k];
            }
            *slot += a.at(&ia) * b.at(&ib);
        }
    }
    (out_shape, out)
}

fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
    x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())))
}

proptest! {
    #[test]
    fn contract_matches_nested_loops((a, b, axes_a, axes_b) in contractible()) {
        let fast = a.contract(&b, &axes_a, &axes_b).unwrap();
        let (shape, slow) = contract_oracle(&a, &b, &axes_a, &axes_b);
        prop_assert_eq!(fast.shape(), shape.as_slice());
        prop_assert!(close(fast.data(), &slow, 1e-12));
    }

    #[test]
    fn contract_is_bilinear(
        (a, b, axes_a, axes_b) in contractible(),
        seed in any::<u64>(),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let noise = |t: &Tensor<f64>, salt: u64| Tensor::from_fn(t.shape().to_vec(), |i| {
            let h = i.iter().fold(seed ^ salt, |h, &k| h.wrapping_mul(6364136223846793005).wrapping_add(k as u64 + 1));
            ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }).unwrap();
        let a2 = noise(&a, 1);
        let b2 = noise(&b, 2);
        let lhs = a.scale(alpha).add(&a2.scale(beta)).unwrap().contract(&b, &axes_a, &axes_b).unwrap();
        let rhs = a.contract(&b, &axes_a, &axes_b).unwrap().scale(alpha)
            .add(&a2.contract(&b, &axes_a, &axes_b).unwrap().scale(beta)).unwrap();
        prop_assert!(close(lhs.data(), rhs.data(), 1e-10));
        let lhs = a.contract(&b.scale(alpha).add(&b2.scale(beta)).unwrap(), &axes_a, &axes_b).unwrap();
        let rhs = a.contract(&b, &axes_a, &axes_b).unwrap().scale(alpha)
            .add(&a.contract(&b2, &axes_a, &axes_b).unwrap().scale(beta)).unwrap();
        prop_assert!(close(lhs.data(), rhs.data(), 1e-10));
    }

    #[test]
    fn reshape_round_trips_bitwise(t in tensor()) {
        let flat = t.reshape(vec![t.len()]).unwrap();
        prop_assert!(flat.reshape(t.shape().to_vec()).unwrap().bitwise_eq(&t));
        prop_assert!(t.reshape(vec![t.len() + 1]).is_err());
    }

    #[test]
    fn permute_round_trips_bitwise(
        (t, perm) in tensor().prop_flat_map(|t| {
            let order = t.order();
            (Just(t), Just((0..order).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let p = t.permute(&perm).unwrap();
        for (i, &axis) in perm.iter().enumerate() {
            prop_assert_eq!(p.shape()[i], t.shape()[axis]);
        }
        let mut inverse = vec![0; perm.len()];
        for (i, &axis) in perm.iter().enumerate() {
            inverse[axis] = i;
        }
        prop_assert!(p.permute(&inverse).unwrap().bitwise_eq(&t));
    }

    #[test]
    fn relu_properties(t in tensor(), c in 0.0f64..5.0) {
        let r = t.relu();
        prop_assert!(r.data().iter().all(|&x| x >= 0.0));
        prop_assert!(r.relu().bitwise_eq(&r));
        for (x, y) in t.data().iter().zip(r.data()) {
            prop_assert_eq!(*y, if *x > 0.0 { *x } else { 0.0 });
        }
        // Positive homogeneity.
        prop_assert!(close(t.scale(c).relu().data(), r.scale(c).data(), 1e-15));
    }
}

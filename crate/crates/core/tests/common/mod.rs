//! Slow reference implementations shared by the integration tests.

#![allow(dead_code)]

use adtn_core::adtn::{Activation, Adtn};

/// Digits of `index` in base `d`, most significant first, `q` of them.
fn digits(mut index: usize, d: usize, q: usize) -> Vec<usize> {
    let mut out = vec![0; q];
    for slot in out.iter_mut().rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

/// Dense `d^q x d^q` matrix `L[out, in]` of one column of gates. `gates`
/// pairs each gate's top line with its tensor; lines not covered by any
/// gate pass through unchanged.
fn column_matrix(q: usize, d: usize, gates: &[(usize, &[f64])]) -> Vec<f64> {
    let n = d.pow(q as u32);
    let mut covered = vec![false; q];
    for &(top, _) in gates {
        covered[top] = true;
        covered[top + 1] = true;
    }
    let mut m = vec![0.0; n * n];
    for out in 0..n {
        let o = digits(out, d, q);
        for inp in 0..n {
            let i = digits(inp, d, q);
            if (0..q).any(|l| !covered[l] && o[l] != i[l]) {
                continue;
            }
            let mut v = 1.0;
            for &(t, a) in gates {
                v *= a[((i[t] * d + i[t + 1]) * d + o[t]) * d + o[t + 1]];
            }
            m[out * n + inp] = v;
        }
    }
    m
}

fn mat_vec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * x[c]).sum()).collect()
}

/// Encoded tensor computed by materialising every column as a matrix:
/// state <- B_k A_k state, activation between TN layers, starting from
/// the product state of the boundary vector.
pub fn layer_matrix_oracle(adtn: &Adtn<f64>) -> Vec<f64> {
    let spec = *adtn.spec();
    let (q, d) = (spec.q, spec.d);
    let v = adtn.boundary().data();
    let n = d.pow(q as u32);
    let mut state: Vec<f64> = (0..n).map(|idx| digits(idx, d, q).iter().map(|&i| v[i]).product()).collect();

    let mut tensors = adtn.tensors().iter();
    for layer in 0..spec.m {
        for first in [0, 1] {
            let gates: Vec<(usize, &[f64])> =
                (first..q - 1).step_by(2).map(|top| (top, tensors.next().expect("enough tensors").data())).collect();
            state = mat_vec(&column_matrix(q, d, &gates), &state);
        }
        if layer + 1 < spec.m && spec.activation == Activation::Relu {
            state.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
    assert!(tensors.next().is_none(), "unused tensors");
    state
}

/// `max |a - b| / max(max |b|, tiny)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

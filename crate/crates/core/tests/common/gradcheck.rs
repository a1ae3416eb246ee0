// Central finite-difference oracle shared by unit and integration tests.
// It only evaluates forward values; no backward rule is consulted.

#![allow(dead_code)]

use gated_vae::autodiff::{Tape, Var};
use gated_vae::tensor::{Scalar, Tensor};
use gated_vae::Result;

/// Forward-only evaluation of `build` at `inputs`.
pub fn eval<T, F>(inputs: &[Tensor<T>], build: &F) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    tape.value(out).item().to_f64().unwrap()
}

/// Central differences of the scalar output w.r.t. every input element.
pub fn numeric_grads<T, F>(inputs: &[Tensor<T>], build: &F, step: f64) -> Vec<Vec<f64>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + T::lit(step);
            let plus = eval(&work, build);
            work[i].data_mut()[j] = orig - T::lit(step);
            let minus = eval(&work, build);
            work[i].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        out.push(g);
    }
    out
}

/// Backward-pass gradients for comparison.
pub fn analytic_grads<T, F>(inputs: &[Tensor<T>], build: &F) -> Vec<Vec<f64>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| match grads.get(*v) {
            Some(g) => g.data().iter().map(|x| x.to_f64().unwrap()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect()
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Largest per-input relative error between backward and finite differences.
pub fn max_rel_err<T, F>(inputs: &[Tensor<T>], build: F, step: f64) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let a = analytic_grads(inputs, &build);
    let n = numeric_grads(inputs, &build, step);
    a.iter().zip(&n).map(|(x, y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Deterministic pseudo-random tensor in `[lo, hi)` (splitmix64 stream).
pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let u = (z >> 11) as f64 / (1u64 << 53) as f64;
            T::lit(lo + (hi - lo) * u)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

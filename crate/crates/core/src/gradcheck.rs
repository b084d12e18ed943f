//! Central finite differences for verifying analytic gradients.
//!
//! Only forward evaluations are used here, so the numbers are independent
//! of the backward rules they are compared against.

use alloc::vec::Vec;

use crate::graph::Graph;
use crate::models::{pair_loss, Seq2Seq};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every entry of every
/// input tensor.
pub fn numeric_gradient(
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Vec<Tensor<f64>> {
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[t].shape());
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + step;
            let plus = f(&probe);
            probe[t].data_mut()[i] = orig - step;
            let minus = f(&probe);
            probe[t].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// Largest entrywise `|a − n| / max(|a|, |n|, floor)` over all tensors.
/// `floor` keeps entries whose true gradient is ~0 from dividing by noise.
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>], floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shapes differ");
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            let e = (x - y).abs() / denom;
            if e.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(e);
        }
    }
    worst
}

/// Largest relative error between 32-bit analytic gradients of the
/// label-smoothed loss and 64-bit central differences, over up to
/// `per_tensor` entries of every parameter.
pub fn model_gradient_error<M32, M64>(
    m32: &M32,
    m64: &mut M64,
    src: &[u32],
    tgt: &[u32],
    per_tensor: usize,
    floor: f64,
) -> f64
where
    M32: Seq2Seq<f32>,
    M64: Seq2Seq<f64>,
{
    let mut g = Graph::new();
    let p = m32.store().bind(&mut g);
    let loss = pair_loss(m32, &mut g, &p, src, tgt, 0.1, None).unwrap().loss;
    let grads = p.gradients(m32.store(), g.backward(loss).unwrap());

    let loss64 = |m: &M64| {
        let mut g = Graph::new();
        let p = m.store().bind_frozen(&mut g);
        let l = pair_loss(m, &mut g, &p, src, tgt, 0.1, None).unwrap().loss;
        g.value(l).item()
    };
    let step = 1e-5;
    let mut worst = 0.0f64;
    for (k, analytic) in grads.grads.iter().enumerate() {
        let n = analytic.len();
        let stride = (n / per_tensor.max(1)).max(1);
        let picks: Vec<usize> = (0..n).step_by(stride).take(per_tensor).collect();
        let mut a = Vec::new();
        let mut num = Vec::new();
        for &i in &picks {
            let orig = m64.store().tensors().nth(k).unwrap().data()[i];
            let set = |m: &mut M64, v: f64| {
                m.store_mut().tensors_mut().nth(k).unwrap().data_mut()[i] = v;
            };
            set(m64, orig + step);
            let up = loss64(m64);
            set(m64, orig - step);
            let down = loss64(m64);
            set(m64, orig);
            num.push((up - down) / (2.0 * step));
            a.push(analytic.data()[i] as f64);
        }
        let at = Tensor::new(&[a.len()], a).unwrap();
        let nt = Tensor::new(&[num.len()], num).unwrap();
        worst = worst.max(max_relative_error(&[at], &[nt], floor));
    }
    worst
}

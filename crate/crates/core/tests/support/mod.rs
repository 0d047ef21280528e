#![allow(dead_code)]

pub mod grad;

use eend::nnet::AedEend;
use eend::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in `[lo, hi]`.
pub fn uniform_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let den = norm(a).max(norm(b));
    if den == 0.0 {
        0.0
    } else {
        norm(&diff) / den
    }
}

fn new_graph(dropout_seed: Option<u64>) -> Graph {
    match dropout_seed {
        Some(s) => Graph::training(s),
        None => Graph::new(),
    }
}

/// Reduces any output to a scalar through a fixed random projection so
/// every output element contributes to the checked gradient.
fn project<'g>(g: &'g Graph, out: Var<'g>) -> Var<'g> {
    let shape = out.shape();
    if shape.iter().product::<usize>() == 1 {
        return out;
    }
    let w = rand_tensor(&mut rng(0x9e37), &shape, 1.0);
    out.mul(g.constant(w)).unwrap().sum()
}

fn eval<F>(inputs: &[Tensor], dropout_seed: Option<u64>, f: &F) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = new_graph(dropout_seed);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    project(&g, f(&g, &vars)).item()
}

/// Largest norm-wise relative error between reverse-mode gradients and
/// central differences over all inputs of `f`. Training graphs are
/// rebuilt with the same seed so dropout masks repeat.
pub fn fd_check<F>(inputs: &[Tensor], dropout_seed: Option<u64>, f: F) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = new_graph(dropout_seed);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = project(&g, f(&g, &vars));
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = vec![0.0; inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += FD_STEP;
            let up = eval(&shifted, dropout_seed, &f);
            shifted[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&shifted, dropout_seed, &f);
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Relative error of parameter gradients of a model-level scalar, on up to
/// `per_param` randomly chosen coordinates of every parameter tensor.
pub fn model_fd_check<F>(model: &AedEend, per_param: usize, seed: u64, f: F) -> f64
where
    F: for<'g> Fn(&AedEend, &'g Graph) -> Var<'g>,
{
    let g = Graph::new();
    let loss = f(model, &g);
    let grads = g.backward(loss).unwrap();
    let mut r = rng(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = model.params().tensor(id).numel();
        let full = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for _ in 0..per_param.min(n) {
            let i = r.random_range(0..n);
            let mut m = model.clone();
            m.params_mut().tensor_mut(id).data_mut()[i] += FD_STEP;
            let up = f(&m, &Graph::new()).item();
            m.params_mut().tensor_mut(id).data_mut()[i] -= 2.0 * FD_STEP;
            let down = f(&m, &Graph::new()).item();
            analytic.push(full[i]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&analytic, &numeric)
}

//! Gradient-check catalogue: one entry per differentiable operation plus
//! the full teacher-forced objective.

use eend::nnet::{AedEend, EncoderKind, ModelConfig};
use eend::tensor::{Graph, Tensor, Var};
use eend::train::{forced_loss, Forcing, LabelMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{fd_check, model_fd_check, rand_tensor, rng, uniform_tensor};

pub type Case = fn(&mut ChaCha8Rng) -> f64;

/// Random (rows, cols, extra) with rows and cols at most 16.
fn dims(r: &mut impl Rng) -> (usize, usize, usize) {
    (r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=8))
}

/// Keeps entries at least `gap` away from zero so kinks are not straddled.
fn away_from_zero(mut t: Tensor, gap: f64) -> Tensor {
    for x in t.data_mut() {
        if x.abs() < gap {
            *x = if *x < 0.0 { -gap } else { gap };
        }
    }
    t
}

fn binary_targets(r: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    let y = uniform_tensor(r, &[m, n], 0.0, 1.0).data().iter().map(|p| p.round()).collect();
    Tensor::new(vec![m, n], y).unwrap()
}

pub fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = dims(r);
            let a = rand_tensor(r, &[m, k], 1.0);
            let b = rand_tensor(r, &[k, n], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].matmul(v[1]).unwrap())
        }),
        ("matmul_t", |r| {
            let (m, k, n) = dims(r);
            let a = rand_tensor(r, &[m, k], 1.0);
            let b = rand_tensor(r, &[n, k], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].matmul_t(v[1]).unwrap())
        }),
        ("transpose", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, |_, v| v[0].t().unwrap())
        }),
        ("add", |r| {
            let (m, n, _) = dims(r);
            let a = rand_tensor(r, &[m, n], 1.0);
            let b = rand_tensor(r, &[m, n], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].add(v[1]).unwrap())
        }),
        ("sub", |r| {
            let (m, n, _) = dims(r);
            let a = rand_tensor(r, &[m, n], 1.0);
            let b = rand_tensor(r, &[m, n], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].sub(v[1]).unwrap())
        }),
        ("mul", |r| {
            let (m, n, _) = dims(r);
            let a = rand_tensor(r, &[m, n], 1.0);
            let b = rand_tensor(r, &[m, n], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].mul(v[1]).unwrap())
        }),
        ("reused operand", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, |_, v| {
                v[0].mul(v[0]).unwrap().add(v[0]).unwrap()
            })
        }),
        ("scale", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, |_, v| v[0].scale(-1.7))
        }),
        ("add_bias", |r| {
            let (m, n, _) = dims(r);
            let a = rand_tensor(r, &[m, n], 1.0);
            let b = rand_tensor(r, &[n], 1.0);
            fd_check(&[a, b], None, |_, v| v[0].add_bias(v[1]).unwrap())
        }),
        ("sigmoid", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 2.0)], None, |_, v| v[0].sigmoid())
        }),
        ("relu", |r| {
            let (m, n, _) = dims(r);
            let x = away_from_zero(rand_tensor(r, &[m, n], 1.0), 1e-2);
            fd_check(&[x], None, |_, v| v[0].relu())
        }),
        ("swish", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 2.0)], None, |_, v| v[0].swish())
        }),
        ("softmax rows", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 2.0)], None, |_, v| v[0].softmax(1).unwrap())
        }),
        ("softmax columns", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 2.0)], None, |_, v| v[0].softmax(0).unwrap())
        }),
        ("layer_norm", |r| {
            let (m, n, _) = dims(r);
            let n = n.max(2);
            let x = rand_tensor(r, &[m, n], 1.0);
            let gain = rand_tensor(r, &[n], 1.0);
            let bias = rand_tensor(r, &[n], 1.0);
            fd_check(&[x, gain, bias], None, |_, v| v[0].layer_norm(v[1], v[2], 1e-5).unwrap())
        }),
        ("depthwise_conv1d", |r| {
            let (t, c, _) = dims(r);
            let k = 2 * r.random_range(0..=3) + 1;
            let x = rand_tensor(r, &[t, c], 1.0);
            let w = rand_tensor(r, &[c, k], 1.0);
            fd_check(&[x, w], None, |_, v| v[0].depthwise_conv1d(v[1]).unwrap())
        }),
        ("narrow_cols", |r| {
            let (m, n, _) = dims(r);
            let start = r.random_range(0..n);
            let len = r.random_range(1..=n - start);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, move |_, v| v[0].narrow_cols(start, len).unwrap())
        }),
        ("concat_cols", |r| {
            let (m, a, b) = dims(r);
            let x = rand_tensor(r, &[m, a], 1.0);
            let y = rand_tensor(r, &[m, b], 1.0);
            fd_check(&[x, y], None, |_, v| Var::concat_cols(&[v[0], v[1], v[0]]).unwrap())
        }),
        ("concat_rows", |r| {
            let (a, n, b) = dims(r);
            let x = rand_tensor(r, &[a, n], 1.0);
            let y = rand_tensor(r, &[b, n], 1.0);
            fd_check(&[x, y], None, |_, v| Var::concat_rows(&[v[1], v[0]]).unwrap())
        }),
        ("gather_rows", |r| {
            let (m, n, k) = dims(r);
            let idx: Vec<usize> = (0..k).map(|_| r.random_range(0..m)).collect();
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, move |_, v| v[0].gather_rows(&idx).unwrap())
        }),
        ("mean_rows", |r| {
            let (m, n, _) = dims(r);
            let mut idx: Vec<usize> = (0..m).filter(|_| r.random_bool(0.5)).collect();
            if idx.is_empty() {
                idx.push(0);
            }
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, move |_, v| v[0].mean_rows(&idx).unwrap())
        }),
        ("sum", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, |_, v| v[0].sum().scale(0.3))
        }),
        ("mean", |r| {
            let (m, n, _) = dims(r);
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], None, |_, v| v[0].mean().scale(2.0))
        }),
        ("dropout", |r| {
            let (m, n, _) = dims(r);
            let seed = r.random();
            fd_check(&[rand_tensor(r, &[m, n], 1.0)], Some(seed), |_, v| v[0].dropout(0.3))
        }),
        ("bce_with_logits", |r| {
            let (m, n, _) = dims(r);
            let y = binary_targets(r, m, n);
            fd_check(&[rand_tensor(r, &[m, n], 3.0)], None, move |_, v| v[0].bce_with_logits(&y).unwrap())
        }),
        ("bce", |r| {
            let (m, n, _) = dims(r);
            let y = uniform_tensor(r, &[m, n], 0.0, 1.0);
            let p = uniform_tensor(r, &[m, n], 0.05, 0.95);
            fd_check(&[p], None, move |_, v| v[0].bce(&y, 1e-7).unwrap())
        }),
    ]
}

pub fn toy_model(kind: EncoderKind, enh_layers: usize, share: bool, seed: u64) -> AedEend {
    AedEend::new(ModelConfig {
        input_dim: 5,
        attn_dim: 8,
        heads: 2,
        enc_layers: 1,
        dec_layers: 2,
        enh_layers,
        enc_ff_dim: 6,
        dec_ff_dim: 6,
        encoder_kind: kind,
        conformer_kernel: 3,
        share_dec_enh_layers: share,
        dropout: 0.0,
        init_seed: seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

/// Random activity in which every speaker has a single-speaker frame.
pub fn toy_labels(r: &mut impl Rng, frames: usize, speakers: usize) -> LabelMatrix {
    loop {
        let activity: Vec<Vec<bool>> = (0..speakers)
            .map(|_| (0..frames).map(|_| r.random_bool(0.5)).collect())
            .collect();
        let names = (0..speakers).map(|s| format!("s{s}")).collect();
        let labels = LabelMatrix::from_activity(&activity, frames, 0.1, names).unwrap();
        if (0..speakers).all(|s| !labels.single_speaker_frames(s).is_empty()) {
            return labels;
        }
    }
}

/// Model variants exercised by the full-objective check.
pub const MODEL_VARIANTS: [(EncoderKind, usize, bool); 6] = [
    (EncoderKind::Transformer, 0, true),
    (EncoderKind::Transformer, 2, true),
    (EncoderKind::Transformer, 2, false),
    (EncoderKind::Conformer, 0, true),
    (EncoderKind::Conformer, 2, true),
    (EncoderKind::Conformer, 2, false),
];

/// Worst of the parameter and input errors of the teacher-forced objective
/// (both heads when an Enhancer is present) on a random toy problem.
pub fn total_loss_case(variant: (EncoderKind, usize, bool), seed: u64) -> f64 {
    let (kind, enh, share) = variant;
    let mut r = rng(7000 + seed);
    let frames = r.random_range(4..=16);
    let speakers = r.random_range(1..=3);
    let model = toy_model(kind, enh, share, seed);
    let labels = toy_labels(&mut r, frames, speakers);
    let runs = (0..speakers)
        .map(|s| {
            let f = labels.single_speaker_frames(s);
            Some(f[..f.len().min(2)].to_vec())
        })
        .collect();
    let mut forcing = Forcing::all(runs);
    if speakers > 1 {
        forcing.keep[0] = false;
    }
    let x = rand_tensor(&mut r, &[frames, 5], 1.0);
    let param_err = model_fd_check(&model, 6, seed, |m, g: &Graph| {
        let xv = g.constant(x.clone());
        forced_loss(m, g, xv, &labels, &forcing).unwrap().loss
    });
    let input_err = fd_check(std::slice::from_ref(&x), None, |g, v| {
        forced_loss(&model, g, v[0], &labels, &forcing).unwrap().loss
    });
    param_err.max(input_err)
}

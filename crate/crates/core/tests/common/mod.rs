//! Loop-based reference implementations used as independent oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use mmixer::cells::baseline::{GruParams, LstmParams};
use mmixer::cells::mcu::McuParams;
use mmixer::{CellKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `W x` for a row-major `[out x in]` matrix.
pub fn matvec(w: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let rows = w.shape()[0];
    let cols = w.shape()[1];
    assert_eq!(cols, x.len());
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += w.data()[i * cols + j] * x[j];
        }
        out[i] = acc;
    }
    out
}

pub fn layer_norm(x: &[f64], gain: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let denom = (var + LN_EPS).sqrt();
    let mut out = Vec::with_capacity(x.len());
    for (k, v) in x.iter().enumerate() {
        out.push((v - mean) / denom * gain.data()[k] + bias.data()[k]);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn map(x: &[f64], f: fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    (0..a.len()).map(|k| a[k] + b[k] + c[k]).collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Every intermediate of one contextualization step.
#[derive(Debug, Clone)]
pub struct McuRef {
    pub f_bar: Vec<f64>,
    pub g_bar: Vec<f64>,
    pub s: Option<Vec<f64>>,
    pub f_tilde: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn mcu_ref(p: &McuParams<f64>, f: &[f64], g: &[f64], h: &[f64], kind: CellKind) -> McuRef {
    let ln = kind == CellKind::Mcu || kind == CellKind::McuSelf;
    let norm = |x: Vec<f64>, gain: &Tensor<f64>, bias: &Tensor<f64>| {
        if ln {
            layer_norm(&x, gain, bias)
        } else {
            x
        }
    };
    let f_bar = map(&norm(matvec(&p.w_f, f), &p.ln_f_gain, &p.ln_f_bias), f64::tanh);
    let g_bar = map(&norm(matvec(&p.w_g, g), &p.ln_g_gain, &p.ln_g_bias), f64::tanh);
    let mut joined = f_bar.clone();
    joined.extend_from_slice(&g_bar);
    let (s, f_tilde) = if kind == CellKind::McuConcatMix {
        (None, map(&matvec(&p.w_s, &joined), f64::tanh))
    } else {
        let s = map(&norm(matvec(&p.w_s, &joined), &p.ln_s_gain, &p.ln_s_bias), sigmoid);
        let ft = (0..s.len())
            .map(|k| s[k] * f_bar[k] + (1.0 - s[k]) * g_bar[k])
            .collect();
        (Some(s), ft)
    };
    let u = add(&f_tilde, h);
    let r = map(&norm(matvec(&p.w_r, &u), &p.ln_r_gain, &p.ln_r_bias), sigmoid);
    let z = map(&norm(matvec(&p.w_z, &u), &p.ln_z_gain, &p.ln_z_bias), sigmoid);
    let cand = add(&mul(&r, h), &f_tilde);
    let h_tilde = map(&norm(matvec(&p.w_h, &cand), &p.ln_h_gain, &p.ln_h_bias), f64::tanh);
    let h_new = (0..h.len())
        .map(|k| z[k] * h_tilde[k] + (1.0 - z[k]) * h[k])
        .collect();
    McuRef {
        f_bar,
        g_bar,
        s,
        f_tilde,
        r,
        z,
        h_tilde,
        h: h_new,
    }
}

pub fn gru_ref(p: &GruParams<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let z = map(&add3(&matvec(&p.w_z, x), &matvec(&p.u_z, h), p.b_z.data()), sigmoid);
    let r = map(&add3(&matvec(&p.w_r, x), &matvec(&p.u_r, h), p.b_r.data()), sigmoid);
    let n = map(
        &add3(&matvec(&p.w_n, x), &matvec(&p.u_n, &mul(&r, h)), p.b_n.data()),
        f64::tanh,
    );
    (0..h.len()).map(|k| z[k] * n[k] + (1.0 - z[k]) * h[k]).collect()
}

pub fn lstm_ref(p: &LstmParams<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let i = map(&add3(&matvec(&p.w_i, x), &matvec(&p.u_i, h), p.b_i.data()), sigmoid);
    let f = map(&add3(&matvec(&p.w_f, x), &matvec(&p.u_f, h), p.b_f.data()), sigmoid);
    let g = map(&add3(&matvec(&p.w_g, x), &matvec(&p.u_g, h), p.b_g.data()), f64::tanh);
    let o = map(&add3(&matvec(&p.w_o, x), &matvec(&p.u_o, h), p.b_o.data()), sigmoid);
    let c_new: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let h_new = (0..c.len()).map(|k| o[k] * c_new[k].tanh()).collect();
    (h_new, c_new)
}

/// Randomizes every parameter, including layer-norm affines, so no
/// instance sits at the identity initialization.
pub fn jitter<S>(rng: &mut ChaCha8Rng, params: Vec<(S, &mut Tensor<f64>)>, spread: f64) {
    for (_, t) in params {
        for v in t.data_mut() {
            *v += rng.random_range(-spread..spread);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Maximum-likelihood factor of modality `i` under isotropic Gaussian noise:
/// the factor whose clean sequence is nearest in squared distance.
pub fn nearest_factor(
    spec: &mmixer::TaskSpec,
    protos: &mmixer::data::Prototypes,
    seq: &Tensor<f32>,
    i: usize,
) -> usize {
    let mut best = (f64::INFINITY, 0);
    for a in 0..spec.m {
        let mut d = 0.0;
        for t in 0..spec.seq_len {
            let clean = protos.clean_frame(spec, i, a, t);
            for (x, p) in seq.row(t).iter().zip(clean) {
                let e = *x as f64 - spec.prototype_scale * p;
                d += e * e;
            }
        }
        if d < best.0 {
            best = (d, a);
        }
    }
    best.1
}

/// Accuracy of decoding every factor with `nearest_factor`; this is the
/// Bayes-optimal fused classifier for the synthetic task.
pub fn nearest_prototype_accuracy(spec: &mmixer::TaskSpec, samples: &[mmixer::ModalSample]) -> f64 {
    let protos = mmixer::data::Prototypes::new(spec);
    let hits = samples
        .iter()
        .filter(|s| {
            let f: Vec<usize> = (0..spec.n_modalities)
                .map(|i| nearest_factor(spec, &protos, &s.sequences[i], i))
                .collect();
            spec.label_of(&f) == s.label
        })
        .count();
    hits as f64 / samples.len() as f64
}

//! Reverse-mode gradients against central finite differences (f64).

mod common;

use common::*;
use mmixer::cells::{self, CellParams};
use mmixer::train::{grad_check, GradCheckSpec};
use mmixer::{AsoKind, CellKind, Graph, Reduce, Tensor, Var};

const H: f64 = 1e-5;

/// Compares d(sum(w * out))/d(inputs) with central differences and returns
/// the worst relative error. `build` binds the inputs itself and returns the
/// output together with the leaf for each input, in order.
fn fd_check_with(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Tensor<f64>]) -> (Var, Vec<Var>),
) -> f64 {
    let eval = |vals: &[Tensor<f64>], weights: Option<&Tensor<f64>>| {
        let mut g = Graph::new();
        let (out, vars) = build(&mut g, vals);
        let w = weights.cloned().unwrap_or_else(|| {
            let n = g.value(out).len();
            let data = (0..n).map(|i| 0.3 + ((i * 37) % 11) as f64 * 0.17).collect();
            Tensor::new(g.value(out).shape().to_vec(), data).unwrap()
        });
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv).unwrap();
        let total = g.sum(prod);
        (g, vars, total, w)
    };
    let (g, vars, total, w) = eval(inputs, None);
    assert_eq!(vars.len(), inputs.len());
    let grads = g.backward(total).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let (gp, _, tp, _) = eval(&plus, Some(&w));
            let (gm, _, tm, _) = eval(&minus, Some(&w));
            numeric[j] = (gp.value(tp).data()[0] - gm.value(tm).data()[0]) / (2.0 * H);
        }
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        worst = worst.max(max_abs_diff(&analytic, &numeric) / scale);
    }
    worst
}

/// `fd_check_with` for operations whose inputs are plain leaves.
fn fd_check(inputs: &[Tensor<f64>], op: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    fd_check_with(inputs, |g, vals| {
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t)).collect();
        (op(g, &vars), vars)
    })
}

fn rand_t(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(&mut rng(seed), n, lo, hi)).unwrap()
}

#[test]
fn matmul_and_linear() {
    let a = rand_t(1, &[3, 4], -1.0, 1.0);
    let b = rand_t(2, &[4, 2], -1.0, 1.0);
    assert!(fd_check(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]).unwrap()) < 1e-6);
    let w = rand_t(3, &[5, 4], -1.0, 1.0);
    assert!(fd_check(&[a, w], |g, v| g.linear(v[0], v[1]).unwrap()) < 1e-6);
}

#[test]
fn elementwise_ops() {
    let a = rand_t(4, &[2, 3], -2.0, 2.0);
    let b = rand_t(5, &[2, 3], -2.0, 2.0);
    let row = rand_t(6, &[3], -1.0, 1.0);
    let ab = [a.clone(), b];
    assert!(fd_check(&ab, |g, v| g.add(v[0], v[1]).unwrap()) < 1e-6);
    assert!(fd_check(&ab, |g, v| g.sub(v[0], v[1]).unwrap()) < 1e-6);
    assert!(fd_check(&ab, |g, v| g.mul(v[0], v[1]).unwrap()) < 1e-6);
    assert!(fd_check(&[a.clone(), row], |g, v| g.add_row(v[0], v[1]).unwrap()) < 1e-6);
    assert!(fd_check(std::slice::from_ref(&a), |g, v| g.affine(v[0], -1.5, 0.25)) < 1e-6);
    assert!(fd_check(std::slice::from_ref(&a), |g, v| g.one_minus(v[0])) < 1e-6);
    assert!(fd_check(std::slice::from_ref(&a), |g, v| g.sigmoid(v[0])) < 1e-6);
    assert!(fd_check(std::slice::from_ref(&a), |g, v| g.tanh(v[0])) < 1e-6);
    assert!(fd_check(&[a], |g, v| g.sum(v[0])) < 1e-6);
}

#[test]
fn layer_norm_all_arguments() {
    for seed in 0..5 {
        let x = rand_t(10 + seed, &[3, 6], -3.0, 3.0);
        let gain = rand_t(20 + seed, &[6], 0.5, 1.5);
        let bias = rand_t(30 + seed, &[6], -0.5, 0.5);
        let err = fd_check(&[x, gain, bias], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        });
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn concat_and_reductions() {
    let a = rand_t(7, &[2, 3], -1.0, 1.0);
    let b = rand_t(8, &[2, 2], -1.0, 1.0);
    let c = rand_t(9, &[2, 3], -1.0, 1.0);
    assert!(fd_check(&[a.clone(), b], |g, v| g.concat(&[v[0], v[1]]).unwrap()) < 1e-6);
    let ac = [a, c];
    assert!(fd_check(&ac, |g, v| g.temporal_reduce(&[v[0], v[1]], Reduce::Mean).unwrap()) < 1e-6);
    assert!(fd_check(&ac, |g, v| g.temporal_reduce(&[v[0], v[1]], Reduce::Max).unwrap()) < 1e-6);
}

#[test]
fn softmax_cross_entropy() {
    let logits = rand_t(11, &[4, 5], -3.0, 3.0);
    let labels = [0, 4, 2, 2];
    assert!(fd_check(std::slice::from_ref(&logits), |g, v| g.softmax_xent(v[0], &labels).unwrap()) < 1e-6);

    // the gradient of the mean loss is (probs - onehot) / rows
    let mut g = Graph::new();
    let lv = g.param(&logits);
    let loss = g.softmax_xent(lv, &labels).unwrap();
    let probs = g.probs(loss).unwrap();
    let grad = g.backward(loss).unwrap().get(lv).unwrap().to_vec();
    for r in 0..4 {
        for k in 0..5 {
            let onehot = if labels[r] == k { 1.0 } else { 0.0 };
            let want = (probs.at(r, k) - onehot) / 4.0;
            assert!((grad[r * 5 + k] - want).abs() < 1e-14);
        }
    }
}

/// BPTT through a T=4, d_h=8 unroll: gradient of `sum(w * h_T)` with respect
/// to every cell parameter, the inputs and the content.
#[test]
fn unrolled_cells_through_time() {
    let (steps, d_f, d_c, d_h) = (4, 5, 6, 8);
    for kind in CellKind::ALL {
        let mut r = rng(50);
        let mut params = CellParams::<f64>::init(&mut r, kind, d_f, d_c, d_h);
        jitter(&mut r, params.named_params_mut(), 0.3);
        let base: Vec<Tensor<f64>> = params.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let n_params = base.len();
        let mut inputs = base;
        for t in 0..steps {
            inputs.push(rand_t(60 + t as u64, &[1, d_f], -1.0, 1.0));
        }
        inputs.push(rand_t(70, &[1, d_c], -1.0, 1.0));
        let template = params.clone();
        let err = fd_check_with(&inputs, |g, vals| {
            let mut p = template.clone();
            for ((_, slot), val) in p.named_params_mut().into_iter().zip(&vals[..n_params]) {
                *slot = val.clone();
            }
            let cell = p.bind(g);
            let f: Vec<Var> = vals[n_params..n_params + steps].iter().map(|t| g.param(t)).collect();
            let content = g.param(&vals[n_params + steps]);
            let mut leaves = cell.vars();
            leaves.extend(&f);
            leaves.push(content);
            let out = cells::unroll(g, &cell, kind, &f, Some(content), None).unwrap();
            (out.h_last, leaves)
        });
        assert!(err < 1e-6, "{kind}: {err:e}");
    }
}

#[test]
fn full_network_every_cell_and_summarizer() {
    for cell in CellKind::ALL {
        for aso in AsoKind::ALL {
            let spec = GradCheckSpec {
                cell_kind: cell,
                aso_kind: aso,
                seed: 4,
                ..GradCheckSpec::default()
            };
            let report = grad_check(&spec, 1e-4).unwrap();
            assert!(report.passed, "{cell}/{aso}: {} {:e}", report.worst_block, report.worst_error);
            assert!(report.blocks.iter().filter(|b| b.max_grad > 0.0).count() > 3);
        }
    }
}

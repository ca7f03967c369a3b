//! Per-modality linear probes on frozen final stream states.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::MixerModel;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

use super::{adam_step, argmax, check_dataset, AdamState, AuxMetrics, TrainConfig, EVAL_CHUNK};

/// SHA-256 over every backbone parameter's name, shape and value bits.
pub fn backbone_checksum<T: Scalar>(model: &MixerModel<T>) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.backbone_params() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_f64_lossy().to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Final stream states as one `[samples x d_h]` matrix per modality.
fn features<T: Scalar>(model: &MixerModel<T>, samples: &[ModalSample]) -> Result<Vec<Tensor<T>>> {
    let preds = model.predict(samples, EVAL_CHUNK)?;
    let d = model.dims;
    (0..d.n_modalities)
        .map(|i| {
            let data = preds
                .iter()
                .flat_map(|p| p.h_last[i].data().iter().copied())
                .collect();
            Tensor::new(vec![samples.len(), d.d_h], data)
        })
        .collect()
}

fn gather<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let data = idx.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    Tensor::new(vec![idx.len(), x.cols()], data).expect("row gather keeps width")
}

/// Per-stream probe accuracy and the summed per-stream cross-entropy.
fn probe_scores<T: Scalar>(
    heads: &[Tensor<T>],
    feats: &[Tensor<T>],
    labels: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let mut acc = Vec::with_capacity(heads.len());
    let mut loss = 0.0;
    for (w, x) in heads.iter().zip(feats) {
        if labels.is_empty() {
            acc.push(0.0);
            continue;
        }
        let mut graph = Graph::new();
        let xv = graph.constant(x.clone());
        let wv = graph.constant(w.clone());
        let logits = graph.linear(xv, wv)?;
        let z = graph.value(logits);
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(r, &y)| argmax(z.row(r)) == y)
            .count();
        acc.push(hits as f64 / labels.len() as f64);
        let l = graph.softmax_xent(logits, labels)?;
        loss += graph.value(l).data()[0].to_f64_lossy();
    }
    Ok((acc, loss))
}

/// Trains fresh zero-initialized auxiliary heads on the frozen backbone with
/// the summed per-stream cross-entropy, using the config's optimizer
/// settings, batch size and `aux_epochs`. Fails with an invariant error if
/// any backbone parameter changed.
pub fn train_aux_heads<T: Scalar>(
    model: &mut MixerModel<T>,
    train_set: &[ModalSample],
    test_set: &[ModalSample],
    config: &TrainConfig,
) -> Result<AuxMetrics> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    check_dataset(train_set, &model.dims, "training")?;
    check_dataset(test_set, &model.dims, "test")?;
    let before = backbone_checksum(model);

    let train_x = features(model, train_set)?;
    let test_x = features(model, test_set)?;
    let train_y: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let test_y: Vec<usize> = test_set.iter().map(|s| s.label).collect();

    model.init_aux_heads();
    let adam = config.adam();
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(11);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for _ in 0..config.aux_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let labels: Vec<usize> = idx.iter().map(|&r| train_y[r]).collect();
            let mut graph = Graph::new();
            let mut heads = Vec::new();
            let mut total = None;
            for (i, w) in model.aux_heads.iter().flatten().enumerate() {
                let x = graph.constant(gather(&train_x[i], idx));
                let wv = graph.param(w);
                heads.push(wv);
                let logits = graph.linear(x, wv)?;
                let l = graph.softmax_xent(logits, &labels)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => graph.add(acc, l)?,
                });
            }
            let total = total.expect("at least one modality");
            let grads = graph.backward(total)?;
            let mut params = model.aux_params_mut();
            for ((_, p), v) in params.iter_mut().zip(&heads) {
                if let Some(g) = grads.get(*v) {
                    p.accumulate_grad(g);
                }
            }
            let step = adam_step(&mut params, &mut state, &adam);
            for (_, p) in params.iter_mut() {
                p.zero_grad();
            }
            step?;
        }
    }

    let after = backbone_checksum(model);
    if after != before {
        return Err(Error::Invariant(format!(
            "backbone changed during auxiliary training ({before} -> {after})"
        )));
    }
    let heads = model.aux_heads.as_deref().expect("heads initialized above");
    let (train_acc, final_loss) = probe_scores(heads, &train_x, &train_y)?;
    let (test_acc, _) = probe_scores(heads, &test_x, &test_y)?;
    Ok(AuxMetrics {
        epochs: config.aux_epochs,
        train_acc,
        test_acc,
        final_loss,
        backbone_checksum: after,
    })
}

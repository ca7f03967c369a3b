//! Optimization: Adam, the training loop, evaluation, frozen auxiliary
//! probes and the finite-difference gradient checker.

mod adam;
mod aux;
mod gradcheck;
mod metrics;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use aux::{backbone_checksum, train_aux_heads};
pub use gradcheck::{grad_check, BlockReport, GradCheckReport, GradCheckSpec};
pub(crate) use metrics::write_csv;
pub use metrics::{
    argmax, evaluate, score, AuxMetrics, ClassAccuracy, EpochMetrics, Evaluation, Metrics,
};

use crate::cells::CellKind;
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::{group_by_len, AsoKind, MixerModel, ModelDims};
use crate::scalar::Scalar;
use crate::tensor::Graph;

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch budget for the frozen-feature auxiliary probes.
    pub aux_epochs: usize,
    pub seed: u64,
    pub cell_kind: CellKind,
    pub aso_kind: AsoKind,
    pub d_h: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            epochs: 30,
            aux_epochs: 20,
            seed: 0,
            cell_kind: CellKind::Mcu,
            aso_kind: AsoKind::Mean,
            d_h: 64,
            checkpoint_path: None,
            metrics_path: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = match self.adam().validate() {
            Ok(()) => Vec::new(),
            Err(Error::Validation(v)) => v,
            Err(e) => return Err(e),
        };
        if self.batch_size == 0 {
            bad.push("batch size must be at least 1".into());
        }
        if self.d_h == 0 {
            bad.push("hidden width must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    /// Model dimensions implied by the config and a dataset.
    pub fn dims(&self, n_modalities: usize, d_f: usize, num_classes: usize) -> ModelDims {
        ModelDims::new(n_modalities, d_f, self.d_h, num_classes)
    }
}

/// Loss and hit count of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
}

/// Forward and backward pass for one batch of equal-length samples. The
/// gradient of the mean cross-entropy, multiplied by `scale`, is added to
/// each backbone parameter's `grad`.
pub fn accumulate_batch_gradients<T: Scalar>(
    model: &mut MixerModel<T>,
    batch: &[&ModalSample],
    scale: T,
) -> Result<BatchStats> {
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph);
    let inputs = model.batch_inputs(&mut graph, batch)?;
    let out = model.forward_vars(&mut graph, &bound, &inputs)?;
    let loss = graph.softmax_xent(out.logits, &labels)?;
    let loss_value = graph.value(loss).data()[0].to_f64_lossy();
    if !loss_value.is_finite() {
        return Err(Error::Numeric {
            context: "training loss".into(),
        });
    }
    let probs = graph.probs(loss).expect("loss node carries probabilities");
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(probs.row(r)) == y)
        .count();
    let grads = graph.backward(loss)?;
    let params = model.backbone_params_mut();
    debug_assert_eq!(params.len(), bound.vars.len());
    for ((_, p), v) in params.into_iter().zip(&bound.vars) {
        if let Some(g) = grads.get(*v) {
            if scale == T::one() {
                p.accumulate_grad(g);
            } else {
                let scaled: Vec<T> = g.iter().map(|&x| x * scale).collect();
                p.accumulate_grad(&scaled);
            }
        }
    }
    Ok(BatchStats {
        loss: loss_value,
        correct,
    })
}

/// Mean cross-entropy of the model on a batch, without gradients.
pub fn batch_loss<T: Scalar>(model: &MixerModel<T>, batch: &[&ModalSample]) -> Result<T> {
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph);
    let inputs = model.batch_inputs(&mut graph, batch)?;
    let out = model.forward_vars(&mut graph, &bound, &inputs)?;
    let loss = graph.softmax_xent(out.logits, &labels)?;
    Ok(graph.value(loss).data()[0])
}

/// One optimizer update from a mini-batch that may mix sequence lengths.
/// Length groups are processed separately and weighted by their share of
/// the batch, so the update follows the mean loss over all samples.
pub fn train_step<T: Scalar>(
    model: &mut MixerModel<T>,
    batch: &[&ModalSample],
    state: &mut AdamState<T>,
    adam: &AdamConfig,
) -> Result<BatchStats> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut groups: Vec<Vec<&ModalSample>> = Vec::new();
    for &s in batch {
        match groups.iter_mut().find(|g| g[0].seq_len() == s.seq_len()) {
            Some(g) => g.push(s),
            None => groups.push(vec![s]),
        }
    }
    let total = batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for g in &groups {
        let w = g.len() as f64 / total;
        let st = accumulate_batch_gradients(model, g, T::from_f64_lossy(w))?;
        loss += st.loss * w;
        correct += st.correct;
    }
    let mut params = model.backbone_params_mut();
    let result = adam_step(&mut params, state, adam);
    for (_, p) in params.iter_mut() {
        p.zero_grad();
    }
    result?;
    Ok(BatchStats { loss, correct })
}

/// Rejects datasets that cannot be fed to a model of the given shape.
pub fn check_dataset(samples: &[ModalSample], dims: &ModelDims, what: &str) -> Result<()> {
    for s in samples {
        if s.sequences.len() != dims.n_modalities {
            return Err(Error::Config(format!(
                "{what} sample {} has {} modalities, expected {}",
                s.id,
                s.sequences.len(),
                dims.n_modalities
            )));
        }
        s.validate()?;
        if s.d_f() != dims.d_f {
            return Err(Error::Config(format!(
                "{what} sample {} has feature width {}, expected {}",
                s.id,
                s.d_f(),
                dims.d_f
            )));
        }
        if s.label >= dims.num_classes {
            return Err(Error::Config(format!(
                "{what} sample {} has label {} but there are {} classes",
                s.id, s.label, dims.num_classes
            )));
        }
    }
    Ok(())
}

/// Shape of a dataset as (modalities, feature width).
pub fn dataset_shape(samples: &[ModalSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("training set is empty".into()))?;
    Ok((first.sequences.len(), first.d_f()))
}

fn mean_loss<T: Scalar>(model: &MixerModel<T>, samples: &[ModalSample]) -> Result<f64> {
    let mut total = 0.0;
    for group in group_by_len(samples) {
        for idx in group.chunks(EVAL_CHUNK) {
            let batch: Vec<&ModalSample> = idx.iter().map(|&i| &samples[i]).collect();
            total += batch_loss(model, &batch)?.to_f64_lossy() * batch.len() as f64;
        }
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains a fresh model and returns the checkpoint with the best test
/// accuracy (earliest on ties) together with per-epoch metrics.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &[ModalSample],
    test_set: &[ModalSample],
    num_classes: usize,
) -> Result<(MixerModel<T>, Metrics)> {
    config.validate()?;
    let (n, d_f) = dataset_shape(train_set)?;
    let dims = config.dims(n, d_f, num_classes);
    dims.validate()?;
    check_dataset(train_set, &dims, "training")?;
    check_dataset(test_set, &dims, "test")?;

    let started = Instant::now();
    let mut model = MixerModel::<T>::new(dims, config.cell_kind, config.aso_kind, config.seed)?;
    let mut state = AdamState::new();
    let adam = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);

    let initial_train_loss = mean_loss(&model, train_set)?;
    let mut best_eval = evaluate(&model, test_set)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&ModalSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let st = train_step(&mut model, &batch, &mut state, &adam)?;
            loss_sum += st.loss * batch.len() as f64;
            correct += st.correct;
        }
        let eval = evaluate(&model, test_set)?;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
            seconds: t0.elapsed().as_secs_f64(),
        };
        if eval.accuracy > best_eval.accuracy {
            best_eval = eval;
            best = model.clone();
            best_epoch = epoch;
        }
        epochs.push(row);
    }

    let metrics = Metrics {
        cell_kind: config.cell_kind,
        aso_kind: config.aso_kind,
        precision: T::NAME.to_string(),
        num_classes,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        initial_train_loss,
        epochs,
        best_epoch,
        best_test_acc: best_eval.accuracy,
        per_class: best_eval.per_class,
        aux: None,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(path) = &config.checkpoint_path {
        crate::model::checkpoint::save(&best, path)?;
    }
    if let Some(path) = &config.metrics_path {
        metrics.write(path)?;
    }
    Ok((best, metrics))
}

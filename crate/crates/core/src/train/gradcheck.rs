//! Central-difference verification of end-to-end network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::{AsoKind, MixerModel, ModelDims};
use crate::tensor::Tensor;

use super::{accumulate_batch_gradients, batch_loss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSpec {
    pub n_modalities: usize,
    pub seq_len: usize,
    pub d_f: usize,
    pub d_h: usize,
    pub num_classes: usize,
    pub batch: usize,
    pub cell_kind: CellKind,
    pub aso_kind: AsoKind,
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            n_modalities: 2,
            seq_len: 3,
            d_f: 5,
            d_h: 8,
            num_classes: 3,
            batch: 2,
            cell_kind: CellKind::Mcu,
            aso_kind: AsoKind::Gru,
            seed: 0,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub numel: usize,
    /// Largest analytic gradient magnitude in the block.
    pub max_grad: f64,
    /// `max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-7)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cell_kind: CellKind,
    pub aso_kind: AsoKind,
    pub tolerance: f64,
    pub loss: f64,
    pub blocks: Vec<BlockReport>,
    pub worst_block: String,
    pub worst_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Turns a failed report into an error naming the worst block.
    pub fn ensure(&self) -> Result<()> {
        if self.passed {
            Ok(())
        } else {
            Err(Error::Numeric {
                context: format!(
                    "gradient check for {}/{}: block {} has relative error {:.3e} > {:.1e}",
                    self.cell_kind, self.aso_kind, self.worst_block, self.worst_error, self.tolerance
                ),
            })
        }
    }
}

const FLOOR: f64 = 1e-7;

fn random_batch(spec: &GradCheckSpec, rng: &mut ChaCha8Rng) -> Result<Vec<ModalSample>> {
    (0..spec.batch)
        .map(|b| {
            let sequences = (0..spec.n_modalities)
                .map(|_| {
                    let data = (0..spec.seq_len * spec.d_f)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                        .collect();
                    Tensor::new(vec![spec.seq_len, spec.d_f], data)
                })
                .collect::<Result<_>>()?;
            Ok(ModalSample {
                id: format!("gc-{b}"),
                label: rng.random_range(0..spec.num_classes),
                sequences,
            })
        })
        .collect()
}

/// Builds a small model with generic (non-default) parameters, including a
/// random head and perturbed layer-norm affines, and compares every
/// parameter's reverse-mode gradient with central differences in f64.
pub fn grad_check(spec: &GradCheckSpec, tolerance: f64) -> Result<GradCheckReport> {
    if !(spec.step.is_finite() && spec.step > 0.0 && tolerance > 0.0) {
        return Err(Error::Argument("step and tolerance must be positive".into()));
    }
    let dims = ModelDims::new(spec.n_modalities, spec.d_f, spec.d_h, spec.num_classes);
    let mut model = MixerModel::<f64>::new(dims, spec.cell_kind, spec.aso_kind, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(3);
    for (name, p) in model.backbone_params_mut() {
        let spread = if name.starts_with("head") { 1.0 } else { 0.3 };
        for v in p.data_mut() {
            *v += rng.random_range(-spread..spread);
        }
    }
    let samples = random_batch(spec, &mut rng)?;
    let batch: Vec<&ModalSample> = samples.iter().collect();

    let loss = accumulate_batch_gradients(&mut model, &batch, 1.0)?.loss;
    let analytic: Vec<(String, Vec<f64>)> = model
        .backbone_params_mut()
        .into_iter()
        .map(|(name, p)| {
            let g = p.grad.take().unwrap_or_else(|| vec![0.0; p.len()]);
            (name, g)
        })
        .collect();

    let h = spec.step;
    let mut blocks = Vec::with_capacity(analytic.len());
    for (j, (name, grad)) in analytic.iter().enumerate() {
        let mut max_diff = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        for (k, &a) in grad.iter().enumerate() {
            let orig = model.backbone_params_mut()[j].1.data()[k];
            model.backbone_params_mut()[j].1.data_mut()[k] = orig + h;
            let up = batch_loss(&model, &batch)?;
            model.backbone_params_mut()[j].1.data_mut()[k] = orig - h;
            let down = batch_loss(&model, &batch)?;
            model.backbone_params_mut()[j].1.data_mut()[k] = orig;
            let n = (up - down) / (2.0 * h);
            max_diff = max_diff.max((a - n).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(n.abs());
        }
        blocks.push(BlockReport {
            name: name.clone(),
            numel: grad.len(),
            max_grad: max_a,
            rel_error: max_diff / max_a.max(max_n).max(FLOOR),
        });
    }
    let worst = blocks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("model has parameters");
    let worst_block = worst.name.clone();
    let worst_error = worst.rel_error;
    Ok(GradCheckReport {
        cell_kind: spec.cell_kind,
        aso_kind: spec.aso_kind,
        tolerance,
        loss,
        blocks,
        worst_block,
        worst_error,
        passed: worst_error < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcu_passes() {
        let r = grad_check(&GradCheckSpec::default(), 1e-4).unwrap();
        r.ensure().unwrap();
        assert!(r.blocks.iter().any(|b| b.name == "stream0.w_g" && b.max_grad > 0.0));
    }

    #[test]
    fn failure_names_worst_block() {
        let mut r = grad_check(
            &GradCheckSpec {
                cell_kind: CellKind::Gru,
                ..GradCheckSpec::default()
            },
            1e-4,
        )
        .unwrap();
        r.passed = false;
        r.worst_block = "stream1.u_z".into();
        assert!(r.ensure().unwrap_err().to_string().contains("stream1.u_z"));
    }
}

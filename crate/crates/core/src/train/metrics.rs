use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::model::{AsoKind, MixerModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::EVAL_CHUNK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub count: usize,
    pub correct: usize,
    /// `correct / count`, or 0 for a class with no samples.
    pub accuracy: f64,
}

/// Frozen-feature probe results, one entry per modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxMetrics {
    pub epochs: usize,
    pub train_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub final_loss: f64,
    pub backbone_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cell_kind: CellKind,
    pub aso_kind: AsoKind,
    pub precision: String,
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Mean training loss of the freshly initialized model.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch of the selected checkpoint; 0 is the initial model.
    pub best_epoch: usize,
    pub best_test_acc: f64,
    /// Test accuracy by class for the selected checkpoint.
    pub per_class: Vec<ClassAccuracy>,
    pub aux: Option<AuxMetrics>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy.
    pub loss: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub predictions: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores a set of probability vectors against labels.
pub fn score<T: Scalar>(probs: &[Tensor<T>], labels: &[usize], num_classes: usize) -> Result<Evaluation> {
    if probs.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut per_class: Vec<ClassAccuracy> = (0..num_classes)
        .map(|class| ClassAccuracy {
            class,
            count: 0,
            correct: 0,
            accuracy: 0.0,
        })
        .collect();
    let mut predictions = Vec::with_capacity(probs.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != num_classes {
            return Err(Error::Shape {
                op: "score",
                lhs: p.shape().to_vec(),
                rhs: vec![num_classes],
            });
        }
        let slot = per_class.get_mut(y).ok_or(Error::Index {
            what: "label",
            index: y,
            len: num_classes,
        })?;
        let guess = argmax(p.data());
        slot.count += 1;
        if guess == y {
            slot.correct += 1;
            correct += 1;
        }
        loss += crate::model::loss(p, y)?.to_f64_lossy();
        predictions.push(guess);
    }
    for c in &mut per_class {
        if c.count > 0 {
            c.accuracy = c.correct as f64 / c.count as f64;
        }
    }
    let n = labels.len().max(1) as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
        per_class,
        predictions,
    })
}

/// Argmax accuracy and per-class breakdown of a model on a dataset.
pub fn evaluate<T: Scalar>(model: &MixerModel<T>, samples: &[ModalSample]) -> Result<Evaluation> {
    let preds = model.predict(samples, EVAL_CHUNK)?;
    let probs: Vec<Tensor<T>> = preds.into_iter().map(|p| p.probs).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    score(&probs, &labels, model.dims.num_classes)
}

#[derive(Serialize)]
struct AuxRow {
    modality: usize,
    train_acc: f64,
    test_acc: f64,
}

impl Metrics {
    /// Companion paths: `<stem>.csv` (one row per epoch),
    /// `<stem>.per_class.csv` and `<stem>.aux.csv` next to the JSON file.
    pub fn csv_paths(json: &Path) -> (PathBuf, PathBuf, PathBuf) {
        (
            json.with_extension("csv"),
            json.with_extension("per_class.csv"),
            json.with_extension("aux.csv"),
        )
    }

    /// Writes the JSON summary and the CSV companions.
    pub fn write(&self, json: &Path) -> Result<()> {
        if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: json.to_path_buf(),
            source: e,
        })?;
        fs::write(json, text).map_err(|e| Error::io(json, e))?;
        let (epochs, classes, aux) = Self::csv_paths(json);
        write_csv(&epochs, &self.epochs)?;
        write_csv(&classes, &self.per_class)?;
        if let Some(a) = &self.aux {
            let rows: Vec<AuxRow> = (0..a.test_acc.len())
                .map(|i| AuxRow {
                    modality: i,
                    train_acc: a.train_acc[i],
                    test_acc: a.test_acc[i],
                })
                .collect();
            write_csv(&aux, &rows)?;
        }
        Ok(())
    }

    pub fn read(json: &Path) -> Result<Self> {
        let text = fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: json.to_path_buf(),
            source: e,
        })
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

pub(crate) fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Argument(format!("csv {}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25f64, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1f64, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.1f32, 0.2, 0.7]), 2);
    }

    #[test]
    fn uniform_outputs_score_class_zero_frequency() {
        let labels = [0, 1, 2, 0, 3, 0, 1];
        let probs = vec![Tensor::<f64>::full(&[4], 0.25); labels.len()];
        let e = score(&probs, &labels, 4).unwrap();
        assert!((e.accuracy - 3.0 / 7.0).abs() < 1e-12);
        assert!((e.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_outputs_score_one() {
        let labels = [2, 0, 1, 1];
        let probs: Vec<Tensor<f64>> = labels
            .iter()
            .map(|&y| {
                let mut v = vec![0.0; 3];
                v[y] = 1.0;
                Tensor::vector(v)
            })
            .collect();
        let e = score(&probs, &labels, 3).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert!(e.per_class.iter().all(|c| c.accuracy == 1.0));
    }

    #[test]
    fn per_class_weights_to_overall() {
        let labels = [0, 0, 1, 1, 1, 2];
        let rows = [[0.9, 0.1, 0.0], [0.1, 0.8, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]];
        let probs: Vec<Tensor<f64>> = rows.iter().map(|r| Tensor::vector(r.to_vec())).collect();
        let e = score(&probs, &labels, 3).unwrap();
        let weighted: f64 = e
            .per_class
            .iter()
            .map(|c| c.accuracy * c.count as f64)
            .sum::<f64>()
            / labels.len() as f64;
        assert!((weighted - e.accuracy).abs() < 1e-12);
        assert!((e.accuracy - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let probs = vec![Tensor::<f64>::full(&[2], 0.5)];
        assert!(matches!(score(&probs, &[2], 2), Err(Error::Index { .. })));
    }
}

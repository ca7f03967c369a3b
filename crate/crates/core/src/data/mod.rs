//! Synthetic multi-modal classification tasks.
//!
//! A class is a tuple of per-modality factors `(a_1, ..., a_N)`, each in
//! `0..m`, so `K = m^N`. Modality `i` is generated only from factor `a_i`, which
//! makes every single modality blind to the other factors: a classifier that
//! sees one modality can do no better than `1 / m^(N-1)`.

pub mod container;

pub use container::{read_container, write_container, Dataset, Manifest, SplitCounts};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a factor is written into a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    /// Every frame shows the factor's prototype plus noise.
    Static,
    /// Frames walk a fixed cycle of signatures; the factor sets the phase.
    /// Pooling over time gives the same vector for every factor.
    Ordered,
}

impl fmt::Display for TemporalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemporalMode::Static => "static",
            TemporalMode::Ordered => "ordered",
        })
    }
}

impl FromStr for TemporalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TemporalMode::Static),
            "ordered" => Ok(TemporalMode::Ordered),
            other => Err(Error::Argument(format!("unknown temporal mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    /// Factor values per modality.
    pub m: usize,
    pub n_modalities: usize,
    pub seq_len: usize,
    pub d_f: usize,
    pub prototype_scale: f64,
    pub noise_sigma: f64,
    pub temporal_mode: TemporalMode,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            m: 4,
            n_modalities: 2,
            seq_len: 8,
            d_f: 32,
            prototype_scale: 1.0,
            noise_sigma: 1.0,
            temporal_mode: TemporalMode::Static,
            train_per_class: 200,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.m.pow(self.n_modalities as u32)
    }

    /// Best accuracy reachable from any single modality.
    pub fn single_modality_bound(&self) -> f64 {
        1.0 / (self.m as f64).powi(self.n_modalities as i32 - 1)
    }

    /// Splits a class index into per-modality factors, modality 0 most significant.
    pub fn factors(&self, label: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_modalities];
        let mut rest = label;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.m;
            rest /= self.m;
        }
        out
    }

    pub fn label_of(&self, factors: &[usize]) -> usize {
        factors.iter().fold(0, |acc, &f| acc * self.m + f)
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes())
            .map(|k| {
                let f: Vec<String> = self.factors(k).iter().map(usize::to_string).collect();
                format!("class{k}_f{}", f.join("-"))
            })
            .collect()
    }

    pub fn modality_names(&self) -> Vec<String> {
        (0..self.n_modalities).map(|i| format!("modality{i}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.m < 2 {
            bad.push(format!("m must be at least 2 (got {})", self.m));
        }
        if self.n_modalities < 2 {
            bad.push(format!(
                "at least 2 modalities are required (got {})",
                self.n_modalities
            ));
        }
        if self.m >= 2
            && self.n_modalities >= 1
            && (self.m as f64).powi(self.n_modalities as i32) > u32::MAX as f64
        {
            bad.push("m^N classes does not fit a u32 label".into());
        }
        if self.seq_len == 0 {
            bad.push("sequence length must be at least 1".into());
        }
        if self.d_f == 0 {
            bad.push("feature width must be at least 1".into());
        }
        match self.temporal_mode {
            TemporalMode::Static => {
                if self.m > self.d_f {
                    bad.push(format!(
                        "static mode needs m <= d_f for orthonormal prototypes (m={}, d_f={})",
                        self.m, self.d_f
                    ));
                }
            }
            TemporalMode::Ordered => {
                if self.seq_len < 2 || self.seq_len < self.m {
                    bad.push(format!(
                        "ordered mode needs seq_len >= max(2, m) (seq_len={}, m={})",
                        self.seq_len, self.m
                    ));
                }
                if self.seq_len > self.d_f {
                    bad.push(format!(
                        "ordered mode needs seq_len <= d_f for orthonormal signatures (seq_len={}, d_f={})",
                        self.seq_len, self.d_f
                    ));
                }
            }
        }
        if !(self.prototype_scale.is_finite() && self.prototype_scale > 0.0) {
            bad.push("prototype_scale must be positive and finite".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            bad.push("noise_sigma must be non-negative and finite".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            bad.push("each split needs at least one sample per class".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// One video: a `[T x d_f]` feature sequence per modality and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSample {
    pub id: String,
    pub label: usize,
    pub sequences: Vec<Tensor<f32>>,
}

impl ModalSample {
    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, Tensor::rows)
    }

    pub fn d_f(&self) -> usize {
        self.sequences.first().map_or(0, Tensor::cols)
    }

    /// All modalities must share `T` and `d_f`.
    pub fn validate(&self) -> Result<()> {
        let (t, d) = (self.seq_len(), self.d_f());
        if self.sequences.is_empty() {
            return Err(Error::Validation(vec![format!(
                "sample {} has no modalities",
                self.id
            )]));
        }
        let bad: Vec<String> = self
            .sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.dims2() != (t, d) || s.shape().len() != 2)
            .map(|(i, s)| {
                format!(
                    "sample {} modality {i} has shape {:?}, expected [{t}, {d}]",
                    self.id,
                    s.shape()
                )
            })
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// Orthonormal rows via Gram-Schmidt on Gaussian draws. Requires `count <= dim`.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Per-modality basis vectors shared by both splits.
#[derive(Debug, Clone)]
pub struct Prototypes {
    /// `[modality][vector][d_f]`; `m` vectors in static mode, `T` in ordered mode.
    pub vectors: Vec<Vec<Vec<f64>>>,
}

impl Prototypes {
    pub fn new(spec: &TaskSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let count = match spec.temporal_mode {
            TemporalMode::Static => spec.m,
            TemporalMode::Ordered => spec.seq_len,
        };
        Prototypes {
            vectors: (0..spec.n_modalities)
                .map(|_| orthonormal(&mut rng, count, spec.d_f))
                .collect(),
        }
    }

    /// Noise-free frame `t` of modality `i` for factor value `factor`.
    pub fn clean_frame(&self, spec: &TaskSpec, i: usize, factor: usize, t: usize) -> &[f64] {
        let idx = match spec.temporal_mode {
            TemporalMode::Static => factor,
            TemporalMode::Ordered => (t + factor) % spec.seq_len,
        };
        &self.vectors[i][idx]
    }
}

fn make_split(
    spec: &TaskSpec,
    protos: &Prototypes,
    split: &str,
    per_class: usize,
    stream: u64,
) -> Vec<ModalSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let k = spec.num_classes();
    let mut out = Vec::with_capacity(k * per_class);
    for rep in 0..per_class {
        for label in 0..k {
            let factors = spec.factors(label);
            let sequences = factors
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let mut data = Vec::with_capacity(spec.seq_len * spec.d_f);
                    for t in 0..spec.seq_len {
                        let clean = protos.clean_frame(spec, i, a, t);
                        for &p in clean {
                            let noise: f64 = rng.sample(StandardNormal);
                            data.push((spec.prototype_scale * p + spec.noise_sigma * noise) as f32);
                        }
                    }
                    Tensor::new(vec![spec.seq_len, spec.d_f], data).expect("sized above")
                })
                .collect();
            out.push(ModalSample {
                id: format!("{split}-{:06}", rep * k + label),
                label,
                sequences,
            });
        }
    }
    out
}

/// Deterministic train/test splits. Both share prototypes and draw
/// independent noise; every class appears exactly `*_per_class` times.
pub fn generate(spec: &TaskSpec) -> Result<(Vec<ModalSample>, Vec<ModalSample>)> {
    spec.validate()?;
    let protos = Prototypes::new(spec);
    let train = make_split(spec, &protos, "train", spec.train_per_class, 1);
    let test = make_split(spec, &protos, "test", spec.test_per_class, 2);
    Ok((train, test))
}

/// Counts per class label.
pub fn class_counts(samples: &[ModalSample], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for s in samples {
        if s.label < k {
            counts[s.label] += 1;
        }
    }
    counts
}

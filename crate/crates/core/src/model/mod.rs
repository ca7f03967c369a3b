//! Network assembly: action summaries, cross-modality content, one recurrent
//! stream per modality, late-fusion classifier and the per-stream auxiliary
//! heads used for probing frozen streams.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{unroll, BoundCell, CellKind, CellParams, GruParams, GruVars};
use crate::data::ModalSample;
use crate::error::{Error, Result};
use crate::params::expect_shape;
use crate::scalar::Scalar;
use crate::tensor::{softmax, Graph, Reduce, Tensor, Var};

/// Action summarizing operator: condenses a sequence into one content vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsoKind {
    Mean,
    Max,
    Gru,
}

impl AsoKind {
    pub const ALL: [AsoKind; 3] = [AsoKind::Gru, AsoKind::Max, AsoKind::Mean];

    pub fn as_str(self) -> &'static str {
        match self {
            AsoKind::Mean => "mean",
            AsoKind::Max => "max",
            AsoKind::Gru => "gru",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            AsoKind::Mean => 0,
            AsoKind::Max => 1,
            AsoKind::Gru => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        [AsoKind::Mean, AsoKind::Max, AsoKind::Gru].get(c as usize).copied()
    }
}

impl fmt::Display for AsoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AsoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AsoKind::Mean),
            "max" => Ok(AsoKind::Max),
            "gru" => Ok(AsoKind::Gru),
            other => Err(Error::Argument(format!("unknown ASO kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_modalities: usize,
    pub d_f: usize,
    /// Content width. Equal to `d_f` for every ASO kind.
    pub d_c: usize,
    pub d_h: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(n_modalities: usize, d_f: usize, d_h: usize, num_classes: usize) -> Self {
        ModelDims {
            n_modalities,
            d_f,
            d_c: d_f,
            d_h,
            num_classes,
        }
    }

    /// Width of the content vector each stream receives.
    pub fn content_width(&self, cell: CellKind) -> usize {
        match cell {
            CellKind::McuSelf => self.d_c,
            k if k.uses_cross_content() => (self.n_modalities - 1) * self.d_c,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modalities < 2 {
            return Err(Error::Config(format!(
                "the mixer needs at least 2 modalities, got {}",
                self.n_modalities
            )));
        }
        if self.d_f == 0 || self.d_h == 0 || self.d_c == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!("degenerate dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerModel<T> {
    pub dims: ModelDims,
    pub aso_kind: AsoKind,
    pub cell_kind: CellKind,
    pub streams: Vec<CellParams<T>>,
    /// One summarizing GRU per modality when `aso_kind` is `Gru`, else empty.
    pub aso_cells: Vec<GruParams<T>>,
    /// `[K x N*d_h]`
    pub head_w: Tensor<T>,
    /// `[K]`
    pub head_b: Tensor<T>,
    /// Per-stream probes `[K x d_h]`, no bias.
    pub aux_heads: Option<Vec<Tensor<T>>>,
}

/// Model parameters bound as trainable leaves of one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub streams: Vec<BoundCell>,
    pub aso: Vec<GruVars>,
    pub head_w: Var,
    pub head_b: Var,
    /// Backbone handles in `backbone_params` order.
    pub vars: Vec<Var>,
}

/// Output of a batched forward pass on the tape.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[B x K]`
    pub logits: Var,
    /// Final hidden state of every stream, `[B x d_h]` each.
    pub h_last: Vec<Var>,
    pub contents: Vec<Var>,
}

/// Tape-free result for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub probs: Tensor<T>,
    pub h_last: Vec<Tensor<T>>,
}

/// Concatenates every content vector except modality `i`'s, in modality order.
pub fn cross_content<T: Scalar>(contents: &[Tensor<T>], i: usize) -> Result<Tensor<T>> {
    if contents.len() < 2 {
        return Err(Error::Config(format!(
            "cross-modality content needs at least 2 modalities, got {}",
            contents.len()
        )));
    }
    if i >= contents.len() {
        return Err(Error::Index {
            what: "modality",
            index: i,
            len: contents.len(),
        });
    }
    let data: Vec<T> = contents
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .flat_map(|(_, c)| c.data().iter().copied())
        .collect();
    Ok(Tensor::vector(data))
}

fn cross_content_var<T: Scalar>(graph: &mut Graph<T>, contents: &[Var], i: usize) -> Result<Var> {
    let others: Vec<Var> = contents
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .collect();
    graph.concat(&others)
}

/// Summarizes one modality's `[B x d_f]`-per-step sequence into `[B x d_c]`.
pub fn aso<T: Scalar>(
    graph: &mut Graph<T>,
    f_seq: &[Var],
    kind: AsoKind,
    gru: Option<&GruVars>,
) -> Result<Var> {
    match kind {
        AsoKind::Mean => graph.temporal_reduce(f_seq, Reduce::Mean),
        AsoKind::Max => graph.temporal_reduce(f_seq, Reduce::Max),
        AsoKind::Gru => {
            let gru = gru.ok_or_else(|| Error::Config("gru ASO without parameters".into()))?;
            let out = unroll(
                graph,
                &BoundCell::Gru(*gru),
                CellKind::Gru,
                f_seq,
                None,
                None,
            )?;
            Ok(out.h_last)
        }
    }
}

/// Cross-entropy `-ln p[label]` of a probability vector.
pub fn loss<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<T> {
    let p = probs.data().get(label).ok_or(Error::Index {
        what: "class label",
        index: label,
        len: probs.len(),
    })?;
    Ok(-p.max(T::min_positive_value()).ln())
}

impl<T: Scalar> MixerModel<T> {
    pub fn new(dims: ModelDims, cell_kind: CellKind, aso_kind: AsoKind, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_content = dims.content_width(cell_kind);
        let streams = (0..dims.n_modalities)
            .map(|_| CellParams::init(&mut rng, cell_kind, dims.d_f, d_content, dims.d_h))
            .collect();
        let aso_cells = if aso_kind == AsoKind::Gru && cell_kind.is_mcu() {
            (0..dims.n_modalities)
                .map(|_| GruParams::init(&mut rng, dims.d_f, dims.d_c))
                .collect()
        } else {
            Vec::new()
        };
        // zero head: the untrained network predicts the uniform distribution
        Ok(MixerModel {
            dims,
            aso_kind,
            cell_kind,
            streams,
            aso_cells,
            head_w: Tensor::zeros(&[dims.num_classes, dims.n_modalities * dims.d_h]),
            head_b: Tensor::zeros(&[dims.num_classes]),
            aux_heads: None,
        })
    }

    /// Backbone parameters (everything except auxiliary heads) in canonical order.
    pub fn backbone_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, s) in self.streams.iter().enumerate() {
            for (n, t) in s.named_params() {
                out.push((format!("stream{i}.{n}"), t));
            }
        }
        for (i, a) in self.aso_cells.iter().enumerate() {
            for (n, t) in a.named_params() {
                out.push((format!("aso{i}.{n}"), t));
            }
        }
        out.push(("head.w_p".into(), &self.head_w));
        out.push(("head.b_p".into(), &self.head_b));
        out
    }

    pub fn backbone_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        backbone_mut(
            &mut self.streams,
            &mut self.aso_cells,
            &mut self.head_w,
            &mut self.head_b,
        )
    }

    pub fn aux_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.aux_heads
            .iter_mut()
            .flatten()
            .enumerate()
            .map(|(i, t)| (format!("aux{i}.w_p"), t))
            .collect()
    }

    /// Backbone followed by auxiliary heads.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.backbone_params();
        for (i, t) in self.aux_heads.iter().flatten().enumerate() {
            out.push((format!("aux{i}.w_p"), t));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let MixerModel {
            streams,
            aso_cells,
            head_w,
            head_b,
            aux_heads,
            ..
        } = self;
        let mut out = backbone_mut(streams, aso_cells, head_w, head_b);
        for (i, t) in aux_heads.iter_mut().flatten().enumerate() {
            out.push((format!("aux{i}.w_p"), t));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds zero-initialized auxiliary heads, replacing any existing ones.
    pub fn init_aux_heads(&mut self) {
        let d = self.dims;
        self.aux_heads = Some(
            (0..d.n_modalities)
                .map(|_| Tensor::zeros(&[d.num_classes, d.d_h]))
                .collect(),
        );
    }

    /// Checks every parameter shape against `dims` and the cell kind.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        d.validate()?;
        if self.streams.len() != d.n_modalities {
            return Err(Error::Config(format!(
                "{} streams for {} modalities",
                self.streams.len(),
                d.n_modalities
            )));
        }
        for (i, s) in self.streams.iter().enumerate() {
            if !s.matches_kind(self.cell_kind) {
                return Err(Error::Config(format!(
                    "stream {i} parameters do not match cell kind {}",
                    self.cell_kind
                )));
            }
            if s.d_h() != d.d_h {
                return Err(Error::Config(format!("stream {i} has d_h {}", s.d_h())));
            }
            if let CellParams::Mcu(p) = s {
                p.check()?;
                expect_shape("w_f", &p.w_f, &[d.d_h, d.d_f])?;
                expect_shape("w_g", &p.w_g, &[d.d_h, d.content_width(self.cell_kind)])?;
            }
        }
        let wants_aso = self.aso_kind == AsoKind::Gru && self.cell_kind.is_mcu();
        if wants_aso && self.aso_cells.len() != d.n_modalities {
            return Err(Error::Config("gru ASO needs one summarizer per modality".into()));
        }
        expect_shape("head.w_p", &self.head_w, &[d.num_classes, d.n_modalities * d.d_h])?;
        expect_shape("head.b_p", &self.head_b, &[d.num_classes])?;
        if let Some(aux) = &self.aux_heads {
            if aux.len() != d.n_modalities {
                return Err(Error::Config("one auxiliary head per modality required".into()));
            }
            for a in aux {
                expect_shape("aux.w_p", a, &[d.num_classes, d.d_h])?;
            }
        }
        Ok(())
    }

    /// Binds the backbone as trainable leaves.
    pub fn bind(&self, graph: &mut Graph<T>) -> BoundModel {
        let streams: Vec<BoundCell> = self.streams.iter().map(|s| s.bind(graph)).collect();
        let aso: Vec<GruVars> = self.aso_cells.iter().map(|a| a.bind(graph)).collect();
        let head_w = graph.param(&self.head_w);
        let head_b = graph.param(&self.head_b);
        let mut vars: Vec<Var> = streams.iter().flat_map(BoundCell::vars).collect();
        vars.extend(aso.iter().flat_map(GruVars::vars));
        vars.push(head_w);
        vars.push(head_b);
        BoundModel {
            streams,
            aso,
            head_w,
            head_b,
            vars,
        }
    }

    /// Checks a batch against the model and lays it out as per-modality,
    /// per-timestep `[B x d_f]` constants.
    pub fn batch_inputs(&self, graph: &mut Graph<T>, batch: &[&ModalSample]) -> Result<Vec<Vec<Var>>> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Argument("empty batch".into()))?;
        let t_len = first.seq_len();
        if t_len == 0 {
            return Err(Error::Argument(format!("sample {} has no timesteps", first.id)));
        }
        for s in batch {
            if s.sequences.len() != self.dims.n_modalities {
                return Err(Error::Config(format!(
                    "sample {} has {} modalities, model expects {}",
                    s.id,
                    s.sequences.len(),
                    self.dims.n_modalities
                )));
            }
            s.validate()?;
            if s.seq_len() != t_len {
                return Err(Error::Argument(format!(
                    "batch mixes sequence lengths {} and {}",
                    t_len,
                    s.seq_len()
                )));
            }
            if s.d_f() != self.dims.d_f {
                return Err(Error::Shape {
                    op: "sample features",
                    lhs: s.sequences[0].shape().to_vec(),
                    rhs: vec![t_len, self.dims.d_f],
                });
            }
        }
        let b = batch.len();
        let d_f = self.dims.d_f;
        let mut out = Vec::with_capacity(self.dims.n_modalities);
        for i in 0..self.dims.n_modalities {
            let mut steps = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mut data = Vec::with_capacity(b * d_f);
                for s in batch {
                    data.extend(s.sequences[i].row(t).iter().map(|&v| T::from_f64_lossy(v as f64)));
                }
                steps.push(graph.constant(Tensor::new(vec![b, d_f], data)?));
            }
            out.push(steps);
        }
        Ok(out)
    }

    /// Batched forward pass on the tape.
    pub fn forward_vars(
        &self,
        graph: &mut Graph<T>,
        bound: &BoundModel,
        inputs: &[Vec<Var>],
    ) -> Result<ForwardVars> {
        let n = self.dims.n_modalities;
        if inputs.len() != n {
            return Err(Error::Config(format!(
                "{} modality inputs for a {n}-modality model",
                inputs.len()
            )));
        }
        let contents: Vec<Var> = if self.cell_kind.is_mcu() {
            inputs
                .iter()
                .enumerate()
                .map(|(i, seq)| aso(graph, seq, self.aso_kind, bound.aso.get(i)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut h_last = Vec::with_capacity(n);
        for (i, seq) in inputs.iter().enumerate() {
            let content = match self.cell_kind {
                CellKind::McuSelf => Some(contents[i]),
                k if k.uses_cross_content() => Some(cross_content_var(graph, &contents, i)?),
                _ => None,
            };
            let out = unroll(graph, &bound.streams[i], self.cell_kind, seq, content, None)?;
            h_last.push(out.h_last);
        }
        let fused = graph.concat(&h_last)?;
        let logits = graph.linear(fused, bound.head_w)?;
        let logits = graph.add_row(logits, bound.head_b)?;
        Ok(ForwardVars {
            logits,
            h_last,
            contents,
        })
    }

    /// Class probabilities and final stream states for a batch.
    pub fn predict_batch(&self, batch: &[&ModalSample]) -> Result<Vec<Prediction<T>>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph);
        let inputs = self.batch_inputs(&mut graph, batch)?;
        let out = self.forward_vars(&mut graph, &bound, &inputs)?;
        let probs = softmax(graph.value(out.logits));
        Ok((0..batch.len())
            .map(|r| Prediction {
                probs: Tensor::vector(probs.row(r).to_vec()),
                h_last: out
                    .h_last
                    .iter()
                    .map(|h| Tensor::vector(graph.value(*h).row(r).to_vec()))
                    .collect(),
            })
            .collect())
    }

    /// Predictions for any number of samples. Samples are grouped by sequence
    /// length and evaluated in chunks; output order follows input order.
    pub fn predict(&self, samples: &[ModalSample], chunk: usize) -> Result<Vec<Prediction<T>>> {
        let mut out: Vec<Option<Prediction<T>>> = vec![None; samples.len()];
        for group in group_by_len(samples) {
            for idx in group.chunks(chunk.max(1)) {
                let batch: Vec<&ModalSample> = idx.iter().map(|&i| &samples[i]).collect();
                for (p, &i) in self.predict_batch(&batch)?.into_iter().zip(idx) {
                    out[i] = Some(p);
                }
            }
        }
        Ok(out.into_iter().map(|p| p.expect("every sample predicted")).collect())
    }

    pub fn forward(&self, sample: &ModalSample) -> Result<Prediction<T>> {
        Ok(self.predict_batch(&[sample])?.remove(0))
    }

    /// Per-stream probe distributions `softmax(W_aux_i h_i)`.
    pub fn aux_forward(&self, h_last: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let heads = self
            .aux_heads
            .as_ref()
            .ok_or_else(|| Error::Config("model has no auxiliary heads".into()))?;
        if h_last.len() != heads.len() {
            return Err(Error::Config(format!(
                "{} stream states for {} auxiliary heads",
                h_last.len(),
                heads.len()
            )));
        }
        heads
            .iter()
            .zip(h_last)
            .map(|(w, h)| {
                let h_col = h.clone().reshape(vec![h.len(), 1])?;
                let logits = w.matmul(&h_col)?.reshape(vec![w.rows()])?;
                Ok(softmax(&logits))
            })
            .collect()
    }
}

fn backbone_mut<'a, T: Scalar>(
    streams: &'a mut [CellParams<T>],
    aso_cells: &'a mut [GruParams<T>],
    head_w: &'a mut Tensor<T>,
    head_b: &'a mut Tensor<T>,
) -> Vec<(String, &'a mut Tensor<T>)> {
    let mut out = Vec::new();
    for (i, s) in streams.iter_mut().enumerate() {
        for (n, t) in s.named_params_mut() {
            out.push((format!("stream{i}.{n}"), t));
        }
    }
    for (i, a) in aso_cells.iter_mut().enumerate() {
        for (n, t) in a.named_params_mut() {
            out.push((format!("aso{i}.{n}"), t));
        }
    }
    out.push(("head.w_p".into(), head_w));
    out.push(("head.b_p".into(), head_b));
    out
}

/// Sum over streams of the per-stream cross-entropy.
pub fn aux_loss<T: Scalar>(aux_probs: &[Tensor<T>], label: usize) -> Result<T> {
    let mut total = T::zero();
    for p in aux_probs {
        total += loss(p, label)?;
    }
    Ok(total)
}

/// Sample indices grouped by sequence length, groups in first-seen order.
pub(crate) fn group_by_len(samples: &[ModalSample]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let t = s.seq_len();
        match groups.iter_mut().find(|(len, _)| *len == t) {
            Some((_, g)) => g.push(i),
            None => groups.push((t, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, t: usize, d: usize, label: usize, seed: u64) -> ModalSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModalSample {
            id: format!("s{seed}"),
            label,
            sequences: (0..n)
                .map(|_| {
                    Tensor::new(
                        vec![t, d],
                        (0..t * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn cross_content_examples() {
        let c: Vec<Tensor<f64>> = (0..3)
            .map(|i| Tensor::vector(vec![i as f64, 10.0 + i as f64]))
            .collect();
        assert_eq!(cross_content(&c[..2], 0).unwrap().data(), c[1].data());
        assert_eq!(cross_content(&c[..2], 1).unwrap().data(), c[0].data());
        assert_eq!(
            cross_content(&c, 0).unwrap().data(),
            &[1.0, 11.0, 2.0, 12.0]
        );
        assert!(matches!(cross_content(&c[..1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn self_variant_uses_own_content_width() {
        let dims = ModelDims::new(3, 4, 6, 5);
        let m = MixerModel::<f64>::new(dims, CellKind::McuSelf, AsoKind::Mean, 0).unwrap();
        let CellParams::Mcu(p) = &m.streams[0] else { panic!() };
        assert_eq!(p.d_content(), 4);
        let m = MixerModel::<f64>::new(dims, CellKind::Mcu, AsoKind::Mean, 0).unwrap();
        let CellParams::Mcu(p) = &m.streams[0] else { panic!() };
        assert_eq!(p.d_content(), 8);
    }

    #[test]
    fn aso_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::vector(vec![1.0, 3.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 5.0]));
        let mean = aso(&mut g, &[a, b], AsoKind::Mean, None).unwrap();
        let max = aso(&mut g, &[a, b], AsoKind::Max, None).unwrap();
        assert_eq!(g.value(mean).data(), &[2.0, 4.0]);
        assert_eq!(g.value(max).data(), &[3.0, 5.0]);
        assert!(aso(&mut g, &[], AsoKind::Mean, None).is_err());
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let dims = ModelDims::new(2, 4, 6, 5);
        let m = MixerModel::<f64>::new(dims, CellKind::Mcu, AsoKind::Mean, 1).unwrap();
        let p = m.forward(&sample(2, 3, 4, 0, 9)).unwrap();
        assert!(p.probs.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn loss_examples() {
        let onehot = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(loss(&onehot, 1).unwrap(), 0.0);
        let uniform = Tensor::vector(vec![0.1f64; 10]);
        assert!((loss(&uniform, 3).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(loss(&uniform, 10), Err(Error::Index { .. })));
    }

    #[test]
    fn modality_count_mismatch_is_config_error() {
        let dims = ModelDims::new(2, 4, 6, 5);
        let m = MixerModel::<f64>::new(dims, CellKind::Gru, AsoKind::Mean, 1).unwrap();
        assert!(matches!(
            m.forward(&sample(3, 3, 4, 0, 9)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn aux_requires_heads() {
        let dims = ModelDims::new(2, 4, 6, 5);
        let mut m = MixerModel::<f64>::new(dims, CellKind::Mcu, AsoKind::Mean, 1).unwrap();
        let p = m.forward(&sample(2, 3, 4, 0, 9)).unwrap();
        assert!(matches!(m.aux_forward(&p.h_last), Err(Error::Config(_))));
        m.init_aux_heads();
        let aux = m.aux_forward(&p.h_last).unwrap();
        assert_eq!(aux.len(), 2);
        for a in &aux {
            assert!(a.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn predict_keeps_input_order_across_lengths() {
        let dims = ModelDims::new(2, 4, 6, 5);
        let mut m = MixerModel::<f64>::new(dims, CellKind::Mcu, AsoKind::Mean, 1).unwrap();
        m.head_w = crate::params::uniform_fan_in(&mut ChaCha8Rng::seed_from_u64(2), &[5, 12], 12);
        let samples = vec![
            sample(2, 3, 4, 0, 1),
            sample(2, 5, 4, 0, 2),
            sample(2, 3, 4, 0, 3),
        ];
        let all = m.predict(&samples, 2).unwrap();
        for (s, p) in samples.iter().zip(&all) {
            let single = m.forward(s).unwrap();
            for (a, b) in single.probs.data().iter().zip(p.probs.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

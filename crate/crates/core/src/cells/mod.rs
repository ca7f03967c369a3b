//! Recurrent cells behind one interface: the contextualization cell, its
//! ablation variants, and GRU/LSTM baselines.

pub mod baseline;
pub mod mcu;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{gru_step, lstm_step, GruParams, GruVars, LstmParams, LstmVars};
pub use mcu::{mcu_step, mix_module, project_content, McuParams, McuTrace, McuVars};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    /// Full cell: cross content, gated mix, layer norm.
    #[serde(rename = "mcu")]
    Mcu,
    /// Own-modality content instead of cross content.
    #[serde(rename = "mcu-self")]
    McuSelf,
    /// Gated mix replaced by a projected concatenation; layer norm off.
    #[serde(rename = "mcu-concat")]
    McuConcatMix,
    /// Layer norm off.
    #[serde(rename = "mcu-noln")]
    McuNoLn,
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "lstm")]
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::Mcu,
        CellKind::McuSelf,
        CellKind::McuConcatMix,
        CellKind::McuNoLn,
        CellKind::Gru,
        CellKind::Lstm,
    ];

    pub fn is_mcu(self) -> bool {
        !matches!(self, CellKind::Gru | CellKind::Lstm)
    }

    pub fn uses_layer_norm(self) -> bool {
        matches!(self, CellKind::Mcu | CellKind::McuSelf)
    }

    /// Whether the cell consumes other modalities' content.
    pub fn uses_cross_content(self) -> bool {
        matches!(
            self,
            CellKind::Mcu | CellKind::McuConcatMix | CellKind::McuNoLn
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Mcu => "mcu",
            CellKind::McuSelf => "mcu-self",
            CellKind::McuConcatMix => "mcu-concat",
            CellKind::McuNoLn => "mcu-noln",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub(crate) fn code(self) -> u8 {
        CellKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        CellKind::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown cell kind {s:?}")))
    }
}

/// Parameters of one modality stream.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams<T> {
    Mcu(McuParams<T>),
    Gru(GruParams<T>),
    Lstm(LstmParams<T>),
}

#[derive(Debug, Clone, Copy)]
pub enum BoundCell {
    Mcu(McuVars),
    Gru(GruVars),
    Lstm(LstmVars),
}

/// Recurrent state. Only the LSTM carries a cell vector.
#[derive(Debug, Clone, Copy)]
pub struct HiddenState {
    pub h: Var,
    pub c: Option<Var>,
}

impl<T: Scalar> CellParams<T> {
    /// `d_content` is ignored by the baselines.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        kind: CellKind,
        d_f: usize,
        d_content: usize,
        d_h: usize,
    ) -> Self {
        match kind {
            CellKind::Gru => CellParams::Gru(GruParams::init(rng, d_f, d_h)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::init(rng, d_f, d_h)),
            _ => CellParams::Mcu(McuParams::init(rng, d_f, d_content, d_h)),
        }
    }

    pub fn d_h(&self) -> usize {
        match self {
            CellParams::Mcu(p) => p.d_h(),
            CellParams::Gru(p) => p.d_h(),
            CellParams::Lstm(p) => p.d_h(),
        }
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            CellParams::Mcu(p) => p.named_params(),
            CellParams::Gru(p) => p.named_params(),
            CellParams::Lstm(p) => p.named_params(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            CellParams::Mcu(p) => p.named_params_mut(),
            CellParams::Gru(p) => p.named_params_mut(),
            CellParams::Lstm(p) => p.named_params_mut(),
        }
    }

    pub fn bind(&self, graph: &mut Graph<T>) -> BoundCell {
        match self {
            CellParams::Mcu(p) => BoundCell::Mcu(p.bind(graph)),
            CellParams::Gru(p) => BoundCell::Gru(p.bind(graph)),
            CellParams::Lstm(p) => BoundCell::Lstm(p.bind(graph)),
        }
    }

    pub(crate) fn matches_kind(&self, kind: CellKind) -> bool {
        matches!(
            (self, kind),
            (CellParams::Gru(_), CellKind::Gru) | (CellParams::Lstm(_), CellKind::Lstm)
        ) || matches!(self, CellParams::Mcu(_)) && kind.is_mcu()
    }
}

impl BoundCell {
    pub fn vars(&self) -> Vec<Var> {
        match self {
            BoundCell::Mcu(v) => v.vars(),
            BoundCell::Gru(v) => v.vars(),
            BoundCell::Lstm(v) => v.vars(),
        }
    }
}

/// One baseline recurrence.
pub fn baseline_step<T: Scalar>(
    graph: &mut Graph<T>,
    cell: &BoundCell,
    f_t: Var,
    state: HiddenState,
) -> Result<HiddenState> {
    match cell {
        BoundCell::Gru(p) => Ok(HiddenState {
            h: gru_step(graph, p, f_t, state.h)?,
            c: None,
        }),
        BoundCell::Lstm(p) => {
            let c = state
                .c
                .ok_or_else(|| Error::Argument("LSTM state without a cell vector".into()))?;
            let (h, c) = lstm_step(graph, p, f_t, state.h, c)?;
            Ok(HiddenState { h, c: Some(c) })
        }
        BoundCell::Mcu(_) => Err(Error::Config(
            "baseline_step called with a contextualization cell".into(),
        )),
    }
}

/// Hidden states of an unrolled sequence.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub h_all: Vec<Var>,
    pub h_last: Var,
    /// Per-step internals, populated for contextualization cells only.
    pub traces: Vec<McuTrace>,
}

fn ensure_finite<T: Scalar>(graph: &Graph<T>, v: Var, what: &str, kind: CellKind, t: usize) -> Result<()> {
    if graph.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            context: format!("{kind} {what} at timestep {t}"),
        })
    }
}

/// Runs a cell over `f_seq` (one `[B x d_f]` value per timestep).
///
/// `content` is required for contextualization cells and ignored by the
/// baselines. `h0` defaults to zeros.
pub fn unroll<T: Scalar>(
    graph: &mut Graph<T>,
    cell: &BoundCell,
    kind: CellKind,
    f_seq: &[Var],
    content: Option<Var>,
    h0: Option<Var>,
) -> Result<Unrolled> {
    let first = *f_seq
        .first()
        .ok_or_else(|| Error::Argument("unroll over an empty sequence".into()))?;
    let batch = graph.value(first).rows();
    let d_h = match cell {
        BoundCell::Mcu(p) => graph.value(p.w_f).rows(),
        BoundCell::Gru(p) => graph.value(p.w_z).rows(),
        BoundCell::Lstm(p) => graph.value(p.w_i).rows(),
    };
    let h0 = match h0 {
        Some(h) => h,
        None => graph.constant(Tensor::zeros(&[batch, d_h])),
    };
    let mut state = HiddenState {
        h: h0,
        c: matches!(cell, BoundCell::Lstm(_))
            .then(|| graph.constant(Tensor::zeros(&[batch, d_h]))),
    };

    let mut h_all = Vec::with_capacity(f_seq.len());
    let mut traces = Vec::new();
    match cell {
        BoundCell::Mcu(p) => {
            if !kind.is_mcu() {
                return Err(Error::Config(format!("{kind} parameters do not match the cell")));
            }
            let content = content.ok_or_else(|| {
                Error::Argument(format!("{kind} requires an action content input"))
            })?;
            let g_bar = mcu::project_content(graph, p, content, kind.uses_layer_norm())?;
            for (t, &f_t) in f_seq.iter().enumerate() {
                ensure_finite(graph, f_t, "input", kind, t)?;
                let tr = mcu::step_projected(graph, p, f_t, g_bar, state.h, kind)?;
                ensure_finite(graph, tr.h, "hidden state", kind, t)?;
                state.h = tr.h;
                h_all.push(tr.h);
                traces.push(tr);
            }
        }
        _ => {
            for (t, &f_t) in f_seq.iter().enumerate() {
                ensure_finite(graph, f_t, "input", kind, t)?;
                state = baseline_step(graph, cell, f_t, state)?;
                ensure_finite(graph, state.h, "hidden state", kind, t)?;
                h_all.push(state.h);
            }
        }
    }
    Ok(Unrolled {
        h_last: state.h,
        h_all,
        traces,
    })
}

/// Unrolls a single `[T x d_f]` sequence without keeping the tape.
/// Returns `(h_all [T x d_h], h_T [d_h])`.
pub fn unroll_sequence<T: Scalar>(
    params: &CellParams<T>,
    kind: CellKind,
    f_seq: &Tensor<T>,
    content: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (steps, d_f) = f_seq.dims2();
    if steps == 0 {
        return Err(Error::Argument("unroll over an empty sequence".into()));
    }
    let mut graph = Graph::new();
    let cell = params.bind(&mut graph);
    let f: Vec<Var> = (0..steps)
        .map(|t| graph.constant(Tensor::vector(f_seq.row(t)[..d_f].to_vec())))
        .collect();
    let content = content.map(|c| graph.constant(c.clone()));
    let out = unroll(&mut graph, &cell, kind, &f, content, None)?;
    let d_h = params.d_h();
    let all = out
        .h_all
        .iter()
        .flat_map(|v| graph.value(*v).data().to_vec())
        .collect();
    let last = Tensor::vector(graph.value(out.h_last).data().to_vec());
    Ok((Tensor::new(vec![steps, d_h], all)?, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kind_names_round_trip() {
        for k in CellKind::ALL {
            assert_eq!(k.as_str().parse::<CellKind>().unwrap(), k);
            assert_eq!(CellKind::from_code(k.code()), Some(k));
        }
        assert!("transformer".parse::<CellKind>().is_err());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = CellParams::<f64>::init(&mut rng, CellKind::Gru, 3, 0, 4);
        let empty = Tensor::zeros(&[0, 3]);
        assert!(matches!(
            unroll_sequence(&p, CellKind::Gru, &empty, None),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn single_step_unroll_equals_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = CellParams::<f64>::init(&mut rng, CellKind::Mcu, 3, 2, 4);
        let f = Tensor::from_f64(&[1, 3], &[0.3, -0.2, 0.9]).unwrap();
        let content = Tensor::from_f64(&[2], &[0.5, -0.4]).unwrap();
        let (_, h_t) = unroll_sequence(&p, CellKind::Mcu, &f, Some(&content)).unwrap();

        let CellParams::Mcu(mp) = &p else { unreachable!() };
        let mut g = Graph::new();
        let v = mp.bind(&mut g);
        let ft = g.constant(Tensor::vector(f.data().to_vec()));
        let ct = g.constant(content.clone());
        let h0 = g.constant(Tensor::zeros(&[4]));
        let tr = mcu_step(&mut g, &v, ft, ct, h0, CellKind::Mcu).unwrap();
        assert_eq!(h_t.data(), g.value(tr.h).data());
    }

    #[test]
    fn non_finite_input_reports_timestep() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = CellParams::<f64>::init(&mut rng, CellKind::Mcu, 2, 2, 3);
        let f = Tensor::from_f64(&[2, 2], &[0.1, 0.2, f64::NAN, 0.0]).unwrap();
        let content = Tensor::zeros(&[2]);
        let err = unroll_sequence(&p, CellKind::Mcu, &f, Some(&content)).unwrap_err();
        assert!(err.to_string().contains("timestep 1"), "{err}");
    }
}

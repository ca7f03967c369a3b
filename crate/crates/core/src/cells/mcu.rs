//! Cross-modality contextualization cell.
//!
//! Each step projects the frame feature and the (time-constant) content of the
//! other modalities into the hidden space, blends them with a learned
//! integration score, then runs GRU-style reset/update gating against the
//! previous hidden state. Layer norms sit in front of every nonlinearity and
//! no projection carries a bias.

use rand::Rng;

use super::CellKind;
use crate::error::{Error, Result};
use crate::params::{expect_shape, param_set, uniform_fan_in};
use crate::scalar::Scalar;
use crate::tensor::{ln_eps, Graph, Tensor, Var};

param_set! {
    /// Weights of one modality's cell. Projections are `[out x in]`.
    McuParams => McuVars {
        w_f, w_g, w_s, w_r, w_z, w_h,
        ln_f_gain, ln_f_bias,
        ln_g_gain, ln_g_bias,
        ln_s_gain, ln_s_bias,
        ln_r_gain, ln_r_bias,
        ln_z_gain, ln_z_bias,
        ln_h_gain, ln_h_bias,
    }
}

impl<T: Scalar> McuParams<T> {
    /// `d_content` is the width of the content vector fed to the cell:
    /// `(N-1) * d_c` normally, `d_c` for the self-content variant.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_f: usize, d_content: usize, d_h: usize) -> Self {
        let ones = || Tensor::full(&[d_h], T::one());
        let zeros = || Tensor::zeros(&[d_h]);
        McuParams {
            w_f: uniform_fan_in(rng, &[d_h, d_f], d_f),
            w_g: uniform_fan_in(rng, &[d_h, d_content], d_content),
            w_s: uniform_fan_in(rng, &[d_h, 2 * d_h], 2 * d_h),
            w_r: uniform_fan_in(rng, &[d_h, d_h], d_h),
            w_z: uniform_fan_in(rng, &[d_h, d_h], d_h),
            w_h: uniform_fan_in(rng, &[d_h, d_h], d_h),
            ln_f_gain: ones(),
            ln_f_bias: zeros(),
            ln_g_gain: ones(),
            ln_g_bias: zeros(),
            ln_s_gain: ones(),
            ln_s_bias: zeros(),
            ln_r_gain: ones(),
            ln_r_bias: zeros(),
            ln_z_gain: ones(),
            ln_z_bias: zeros(),
            ln_h_gain: ones(),
            ln_h_bias: zeros(),
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_f.rows()
    }

    pub fn d_f(&self) -> usize {
        self.w_f.cols()
    }

    pub fn d_content(&self) -> usize {
        self.w_g.cols()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d_h = self.d_h();
        expect_shape("w_g", &self.w_g, &[d_h, self.d_content()])?;
        expect_shape("w_s", &self.w_s, &[d_h, 2 * d_h])?;
        for (name, w) in [("w_r", &self.w_r), ("w_z", &self.w_z), ("w_h", &self.w_h)] {
            expect_shape(name, w, &[d_h, d_h])?;
        }
        for (name, t) in self.named_params().into_iter().skip(6) {
            expect_shape(name, t, &[d_h])?;
        }
        Ok(())
    }
}

/// Intermediate values of one step, kept for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct McuTrace {
    pub f_bar: Var,
    /// Integration score; absent for the concatenation variant.
    pub s: Option<Var>,
    pub f_tilde: Var,
    pub r: Var,
    pub z: Var,
    pub h_tilde: Var,
    pub h: Var,
}

fn norm<T: Scalar>(
    graph: &mut Graph<T>,
    x: Var,
    gain: Var,
    bias: Var,
    use_ln: bool,
) -> Result<Var> {
    if use_ln {
        graph.layer_norm(x, gain, bias, ln_eps())
    } else {
        Ok(x)
    }
}

/// `tanh(LN(W_g g))`. Constant across the timesteps of one sequence.
pub fn project_content<T: Scalar>(
    graph: &mut Graph<T>,
    p: &McuVars,
    content: Var,
    use_ln: bool,
) -> Result<Var> {
    let x = graph.linear(content, p.w_g)?;
    let x = norm(graph, x, p.ln_g_gain, p.ln_g_bias, use_ln)?;
    Ok(graph.tanh(x))
}

/// Blends the projected frame with projected content.
///
/// Returns `(f_bar, s, f_tilde)`. The concatenation variant replaces the
/// gated sum with `tanh(W_s [f_bar || g_bar])` and has no score.
pub(crate) fn mix_projected<T: Scalar>(
    graph: &mut Graph<T>,
    p: &McuVars,
    f_t: Var,
    g_bar: Var,
    kind: CellKind,
) -> Result<(Var, Option<Var>, Var)> {
    let use_ln = kind.uses_layer_norm();
    let x = graph.linear(f_t, p.w_f)?;
    let x = norm(graph, x, p.ln_f_gain, p.ln_f_bias, use_ln)?;
    let f_bar = graph.tanh(x);
    let joined = graph.concat(&[f_bar, g_bar])?;
    let pre = graph.linear(joined, p.w_s)?;
    if kind == CellKind::McuConcatMix {
        let f_tilde = graph.tanh(pre);
        return Ok((f_bar, None, f_tilde));
    }
    let pre = norm(graph, pre, p.ln_s_gain, p.ln_s_bias, use_ln)?;
    let s = graph.sigmoid(pre);
    let f_tilde = blend(graph, s, f_bar, g_bar)?;
    Ok((f_bar, Some(s), f_tilde))
}

/// `gate * a + (1 - gate) * b`
pub(crate) fn blend<T: Scalar>(graph: &mut Graph<T>, gate: Var, a: Var, b: Var) -> Result<Var> {
    let ga = graph.mul(gate, a)?;
    let rest = graph.one_minus(gate);
    let rb = graph.mul(rest, b)?;
    graph.add(ga, rb)
}

/// Cross-modality mix module on raw content. Returns the supplemented feature.
pub fn mix_module<T: Scalar>(
    graph: &mut Graph<T>,
    p: &McuVars,
    f_t: Var,
    content: Var,
    use_ln: bool,
) -> Result<Var> {
    let kind = if use_ln { CellKind::Mcu } else { CellKind::McuNoLn };
    let g_bar = project_content(graph, p, content, use_ln)?;
    Ok(mix_projected(graph, p, f_t, g_bar, kind)?.2)
}

/// One recurrence given an already projected content vector.
pub(crate) fn step_projected<T: Scalar>(
    graph: &mut Graph<T>,
    p: &McuVars,
    f_t: Var,
    g_bar: Var,
    h_prev: Var,
    kind: CellKind,
) -> Result<McuTrace> {
    let use_ln = kind.uses_layer_norm();
    let (f_bar, s, f_tilde) = mix_projected(graph, p, f_t, g_bar, kind)?;

    let u = graph.add(f_tilde, h_prev)?;
    let r = graph.linear(u, p.w_r)?;
    let r = norm(graph, r, p.ln_r_gain, p.ln_r_bias, use_ln)?;
    let r = graph.sigmoid(r);
    let z = graph.linear(u, p.w_z)?;
    let z = norm(graph, z, p.ln_z_gain, p.ln_z_bias, use_ln)?;
    let z = graph.sigmoid(z);

    let rh = graph.mul(r, h_prev)?;
    let cand = graph.add(rh, f_tilde)?;
    let cand = graph.linear(cand, p.w_h)?;
    let cand = norm(graph, cand, p.ln_h_gain, p.ln_h_bias, use_ln)?;
    let h_tilde = graph.tanh(cand);

    let h = blend(graph, z, h_tilde, h_prev)?;
    Ok(McuTrace {
        f_bar,
        s,
        f_tilde,
        r,
        z,
        h_tilde,
        h,
    })
}

/// One recurrence on raw content.
pub fn mcu_step<T: Scalar>(
    graph: &mut Graph<T>,
    p: &McuVars,
    f_t: Var,
    content: Var,
    h_prev: Var,
    kind: CellKind,
) -> Result<McuTrace> {
    if !kind.is_mcu() {
        return Err(Error::Config(format!("{kind} is not a contextualization cell")));
    }
    let g_bar = project_content(graph, p, content, kind.uses_layer_norm())?;
    step_projected(graph, p, f_t, g_bar, h_prev, kind)
}

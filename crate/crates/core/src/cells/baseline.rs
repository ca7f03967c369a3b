//! Conventional GRU and LSTM cells used as drop-in replacements for the
//! contextualization cell. They carry biases, no layer norm, and never see
//! cross-modality content.

use rand::Rng;

use super::mcu::blend;
use crate::error::Result;
use crate::params::{param_set, uniform_fan_in};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

param_set! {
    /// `h' = z * n + (1 - z) * h` with `n = tanh(W_n x + U_n (r * h) + b_n)`.
    GruParams => GruVars {
        w_z, u_z, b_z,
        w_r, u_r, b_r,
        w_n, u_n, b_n,
    }
}

param_set! {
    /// Input, forget, candidate and output gates.
    LstmParams => LstmVars {
        w_i, u_i, b_i,
        w_f, u_f, b_f,
        w_g, u_g, b_g,
        w_o, u_o, b_o,
    }
}

impl<T: Scalar> GruParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_h: usize) -> Self {
        let mut w = || uniform_fan_in(rng, &[d_h, d_in], d_in);
        let (w_z, w_r, w_n) = (w(), w(), w());
        let mut u = || uniform_fan_in(rng, &[d_h, d_h], d_h);
        let (u_z, u_r, u_n) = (u(), u(), u());
        let mut b = || uniform_fan_in(rng, &[d_h], d_h);
        let (b_z, b_r, b_n) = (b(), b(), b());
        GruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_n,
            u_n,
            b_n,
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_z.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_z.cols()
    }
}

impl<T: Scalar> LstmParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_h: usize) -> Self {
        let mut w = || uniform_fan_in(rng, &[d_h, d_in], d_in);
        let (w_i, w_f, w_g, w_o) = (w(), w(), w(), w());
        let mut u = || uniform_fan_in(rng, &[d_h, d_h], d_h);
        let (u_i, u_f, u_g, u_o) = (u(), u(), u(), u());
        let mut b = || uniform_fan_in(rng, &[d_h], d_h);
        let (b_i, b_f, b_g, b_o) = (b(), b(), b(), b());
        LstmParams {
            w_i,
            u_i,
            b_i,
            w_f,
            u_f,
            b_f,
            w_g,
            u_g,
            b_g,
            w_o,
            u_o,
            b_o,
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_i.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_i.cols()
    }
}

fn affine2<T: Scalar>(
    graph: &mut Graph<T>,
    x: Var,
    w: Var,
    h: Var,
    u: Var,
    b: Var,
) -> Result<Var> {
    let a = graph.linear(x, w)?;
    let c = graph.linear(h, u)?;
    let s = graph.add(a, c)?;
    graph.add_row(s, b)
}

pub fn gru_step<T: Scalar>(graph: &mut Graph<T>, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let z = affine2(graph, x, p.w_z, h, p.u_z, p.b_z)?;
    let z = graph.sigmoid(z);
    let r = affine2(graph, x, p.w_r, h, p.u_r, p.b_r)?;
    let r = graph.sigmoid(r);
    let rh = graph.mul(r, h)?;
    let n = affine2(graph, x, p.w_n, rh, p.u_n, p.b_n)?;
    let n = graph.tanh(n);
    blend(graph, z, n, h)
}

/// Returns `(h', c')`.
pub fn lstm_step<T: Scalar>(
    graph: &mut Graph<T>,
    p: &LstmVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let i = affine2(graph, x, p.w_i, h, p.u_i, p.b_i)?;
    let i = graph.sigmoid(i);
    let f = affine2(graph, x, p.w_f, h, p.u_f, p.b_f)?;
    let f = graph.sigmoid(f);
    let g = affine2(graph, x, p.w_g, h, p.u_g, p.b_g)?;
    let g = graph.tanh(g);
    let o = affine2(graph, x, p.w_o, h, p.u_o, p.b_o)?;
    let o = graph.sigmoid(o);
    let fc = graph.mul(f, c)?;
    let ig = graph.mul(i, g)?;
    let c_next = graph.add(fc, ig)?;
    let tc = graph.tanh(c_next);
    let h_next = graph.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_of(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
        Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn gru_closed_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = GruParams::<f64>::init(&mut rng, 3, 5);
        p.w_z = Tensor::zeros(&[5, 3]);
        p.u_z = Tensor::zeros(&[5, 5]);
        p.b_z = Tensor::full(&[5], -1e3);
        let mut g = Graph::new();
        let v = p.bind(&mut g);
        let x = g.constant(vec_of(&mut rng, 3));
        let h = g.constant(vec_of(&mut rng, 5));
        let h1 = gru_step(&mut g, &v, x, h).unwrap();
        assert_eq!(g.value(h1).data(), g.value(h).data());
    }

    #[test]
    fn lstm_open_forget_closed_input_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = LstmParams::<f64>::init(&mut rng, 3, 5);
        p.w_f = Tensor::zeros(&[5, 3]);
        p.u_f = Tensor::zeros(&[5, 5]);
        p.b_f = Tensor::full(&[5], 1e3);
        p.w_i = Tensor::zeros(&[5, 3]);
        p.u_i = Tensor::zeros(&[5, 5]);
        p.b_i = Tensor::full(&[5], -1e3);
        let mut g = Graph::new();
        let v = p.bind(&mut g);
        let x = g.constant(vec_of(&mut rng, 3));
        let h = g.constant(vec_of(&mut rng, 5));
        let c = g.constant(vec_of(&mut rng, 5));
        let (_, c1) = lstm_step(&mut g, &v, x, h, c).unwrap();
        assert_eq!(g.value(c1).data(), g.value(c).data());
    }
}

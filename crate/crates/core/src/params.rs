//! Named parameter sets and their tape bindings.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Declares a parameter struct plus a mirror struct of tape handles.
///
/// Field order is the canonical order used by checkpoints, the optimizer and
/// gradient collection.
macro_rules! param_set {
    ($(#[$meta:meta])* $name:ident => $vars:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            $(pub $field: $crate::tensor::Tensor<T>,)+
        }

        /// Tape handles for every field, bound as trainable leaves.
        #[derive(Debug, Clone, Copy)]
        pub struct $vars {
            $(pub $field: $crate::tensor::Var,)+
        }

        impl<T: $crate::scalar::Scalar> $name<T> {
            pub fn named_params(&self) -> Vec<(&'static str, &$crate::tensor::Tensor<T>)> {
                vec![$((stringify!($field), &self.$field)),+]
            }

            pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut $crate::tensor::Tensor<T>)> {
                vec![$((stringify!($field), &mut self.$field)),+]
            }

            pub fn bind(&self, graph: &mut $crate::tensor::Graph<T>) -> $vars {
                $vars { $($field: graph.param(&self.$field)),+ }
            }
        }

        impl $vars {
            pub fn vars(&self) -> Vec<$crate::tensor::Var> {
                vec![$(self.$field),+]
            }
        }
    };
}

pub(crate) use param_set;

/// Uniform initialization in `+-1/sqrt(fan_in)`, sampled in f64 so f32 and
/// f64 models built from one seed agree up to rounding.
pub(crate) fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches sample count")
}

pub(crate) fn expect_shape<T: Scalar>(
    name: &str,
    t: &Tensor<T>,
    shape: &[usize],
) -> crate::error::Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(crate::error::Error::Config(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape()
        )))
    }
}

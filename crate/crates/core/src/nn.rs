//! Parameterized layers built on the compute tape.

use rand::Rng;

use crate::compute::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::Scalar;

fn uniform<S: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Affine map on column vectors: `W·x + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: store.add(
                format!("{name}.weight"),
                uniform(&[d_out, d_in], bound, rng),
            ),
            bias: store.add(format!("{name}.bias"), uniform(&[d_out], bound, rng)),
        }
    }

    /// `x: [in, 1] → [out, 1]`.
    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        p.get(self.weight)
            .matmul(x)?
            .add_channel_bias(&p.get(self.bias))
    }
}

/// Square-kernel convolution with "same" padding and a per-channel bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub size: usize,
}

impl Conv {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((c_in * size * size) as f64).sqrt();
        Self {
            kernel: store.add(
                format!("{name}.kernel"),
                uniform(&[c_out, c_in, size, size], bound, rng),
            ),
            bias: store.add(format!("{name}.bias"), uniform(&[c_out], bound, rng)),
            size,
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.conv2d(&p.get(self.kernel), 1, self.size / 2)?
            .add_channel_bias(&p.get(self.bias))
    }
}

/// Group normalization with learned per-channel scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], S::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.group_norm(self.groups, &p.get(self.gamma), &p.get(self.beta))
    }
}

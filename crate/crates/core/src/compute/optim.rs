use super::{Gradients, Tape, Tensor, Var};
use crate::error::{dim_err, Result};
use crate::Scalar;

/// Trainable tensor with Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<S> {
    pub tensor: Tensor<S>,
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub step_count: u64,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(tensor: Tensor<S>) -> Self {
        let shape = tensor.shape().to_vec();
        Self {
            tensor: tensor.with_grad(true),
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over `params`, aligned with `grads` by index.
pub fn adam_step<S: Scalar>(
    params: &mut [Parameter<S>],
    grads: &[Tensor<S>],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return dim_err(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.tensor.shape() != g.shape() {
            return dim_err(format!(
                "parameter {i}: shape {:?} but gradient {:?}",
                p.tensor.shape(),
                g.shape()
            ));
        }
    }
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let (lr, eps) = (S::lit(cfg.lr), S::lit(cfg.eps));
    for (p, g) in params.iter_mut().zip(grads) {
        p.step_count += 1;
        let step = p.step_count as i32;
        let bc1 = S::one() - b1.powi(step);
        let bc2 = S::one() - b2.powi(step);
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        let theta = p.tensor.data_mut();
        for (((th, m), v), &g) in theta.iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameters of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    params: Vec<Parameter<S>>,
}

/// Parameters recorded as leaves on one tape.
#[derive(Debug)]
pub struct Bound<'t, S> {
    vars: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    /// Binding from caller-made vars, in store order. Lets a gradient check
    /// perturb parameters as ordinary inputs.
    pub fn from_vars(vars: Vec<Var<'t, S>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, S> {
        self.vars[id.0]
    }

    /// Gradients in store order, ready for [`adam_step`].
    pub fn grads(&self, g: &Gradients<S>) -> Vec<Tensor<S>> {
        self.vars.iter().map(|&v| g.wrt(v)).collect()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, init: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.params.push(Parameter::new(init));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter().map(|p| &p.tensor))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<S>] {
        &mut self.params
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.tensor.shape() != value.shape() {
            return dim_err(format!(
                "parameter {}: expected shape {:?}, got {:?}",
                self.names[id.0],
                p.tensor.shape(),
                value.shape()
            ));
        }
        p.tensor = value.with_grad(true);
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.tensor.clone()))
                .collect(),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.tensor.clone()))
                .collect(),
        }
    }

    pub fn adam_step(&mut self, grads: &[Tensor<S>], cfg: &AdamConfig) -> Result<()> {
        adam_step(&mut self.params, grads, cfg)
    }
}

//! Central finite-difference gradient checking.
//!
//! Independent of the backward pass: the numeric side only ever evaluates the
//! forward function.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Denominator floor for relative error, so entries with vanishing
    /// gradient are judged by absolute error.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled), `None` = all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences for every input tensor.
pub fn check_gradients<S, F>(
    inputs: &[Tensor<S>],
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    let eval = |xs: &[Tensor<S>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value().data()[0];
        Ok(v.to_f64().unwrap_or(f64::NAN))
    };

    let analytic: Vec<Tensor<S>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .map(|x| tape.leaf(x.clone().with_grad(true)))
            .collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let h = S::lit(opts.h);
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(n) if n < input.len() => sample(&mut rng, input.len(), n).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for idx in coords {
            let orig = input.data()[idx];
            work[which].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            // Divide by the step actually taken after rounding.
            let step = ((orig + h) - (orig - h)).to_f64().unwrap_or(2.0 * opts.h);
            let numeric = (plus - minus) / step;
            let a = analytic[which].data()[idx].to_f64().unwrap_or(f64::NAN);
            let err = relative_error(a, numeric, opts.floor);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, idx, a, numeric));
            }
        }
    }
    Ok(report)
}

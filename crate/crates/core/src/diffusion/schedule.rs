use serde::{Deserialize, Serialize};

use crate::compute::{Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::Scalar;

/// Per-step variance tables, indexed by `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// `(1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    #[default]
    Posterior,
    /// `β_t`.
    Beta,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(SigmaMode::Posterior),
            "beta" => Ok(SigmaMode::Beta),
            other => Err(Error::Configuration(format!(
                "unknown sigma mode {other:?}"
            ))),
        }
    }
}

/// β rising linearly from `beta1` at t = 1 to `beta_t` at t = T.
pub fn linear_schedule(steps: usize, beta1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps < 2 || !(0.0 < beta1 && beta1 < beta_t && beta_t < 1.0) {
        return Err(Error::Configuration(format!(
            "schedule needs T >= 2 and 0 < beta1 < betaT < 1, got T={steps}, [{beta1}, {beta_t}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta1 + i as f64 / (steps - 1) as f64 * (beta_t - beta1))
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar: Vec<f64> = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    let sigma2 = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma2,
    })
}

impl NoiseSchedule {
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Step { t, max: self.steps });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn first_beta(&self) -> f64 {
        self.beta[0]
    }

    pub fn last_beta(&self) -> f64 {
        self.beta[self.steps - 1]
    }
}

/// Sampling variances for every step under `mode`.
pub fn sigma_variant(sched: &NoiseSchedule, mode: SigmaMode) -> Vec<f64> {
    match mode {
        SigmaMode::Posterior => sched.sigma2.clone(),
        SigmaMode::Beta => sched.beta.clone(),
    }
}

/// Closed-form `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·eps`.
pub fn forward_sample<S: Scalar>(
    x0: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
    sched: &NoiseSchedule,
) -> Result<Tensor<S>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return dim_err(format!(
            "noise shape {:?} differs from {:?}",
            eps.shape(),
            x0.shape()
        ));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()));
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| a * x + b * e)
        .collect();
    Tensor::new(x0.shape(), data)
}

/// One forward transition `x_t = √α_t·x_{t−1} + √β_t·z`.
pub fn forward_step<S: Scalar>(
    x_prev: &Tensor<S>,
    t: usize,
    z: &Tensor<S>,
    sched: &NoiseSchedule,
) -> Result<Tensor<S>> {
    sched.check_step(t)?;
    if x_prev.shape() != z.shape() {
        return dim_err(format!(
            "noise shape {:?} differs from {:?}",
            z.shape(),
            x_prev.shape()
        ));
    }
    let (a, b) = (S::lit(sched.alpha(t).sqrt()), S::lit(sched.beta(t).sqrt()));
    let data = x_prev
        .data()
        .iter()
        .zip(z.data())
        .map(|(&x, &e)| a * x + b * e)
        .collect();
    Tensor::new(x_prev.shape(), data)
}

/// Mean squared difference between predicted and true noise.
pub fn noise_loss<'t, S: Scalar>(predicted: &Var<'t, S>, noise: &Var<'t, S>) -> Result<Var<'t, S>> {
    Ok(predicted.sub(noise)?.square().mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tape;

    #[test]
    fn endpoints_and_first_product() {
        let s = linear_schedule(400, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(400), 0.02);
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
        assert_eq!(s.sigma2[0], 0.0);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(linear_schedule(1, 1e-4, 0.02).is_err());
        assert!(linear_schedule(10, 0.02, 1e-4).is_err());
        assert!(linear_schedule(10, 0.0, 0.5).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn posterior_variance_bounded_by_beta() {
        let s = linear_schedule(400, 1e-4, 0.02).unwrap();
        let post = sigma_variant(&s, SigmaMode::Posterior);
        let beta = sigma_variant(&s, SigmaMode::Beta);
        assert!(post.iter().zip(&beta).all(|(p, b)| p <= b));
        let rel: Vec<f64> = post.iter().zip(&beta).map(|(p, b)| (b - p) / b).collect();
        assert!(rel[0] > rel[10] && rel[10] > rel[399]);
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = linear_schedule(100, 1e-4, 0.02).unwrap();
        let x0 = Tensor::<f64>::from_f64(&[2], &[0.5, -1.0]).unwrap();
        let xt = forward_sample(&x0, 50, &Tensor::zeros(&[2]), &s).unwrap();
        let a = s.alpha_bar(50).sqrt();
        assert_eq!(xt.data(), &[a * 0.5, -a]);
        assert!(matches!(
            forward_sample(&x0, 0, &Tensor::zeros(&[2]), &s),
            Err(Error::Step { .. })
        ));
        assert!(forward_sample(&x0, 1, &Tensor::zeros(&[3]), &s).is_err());
    }

    #[test]
    fn oracle_denoiser_has_zero_loss() {
        let tape = Tape::new();
        let eps = Tensor::<f32>::from_f64(&[1, 2, 2], &[0.3, -1.2, 2.5, 0.0]).unwrap();
        let a = tape.constant(eps.clone());
        let b = tape.constant(eps);
        assert_eq!(noise_loss(&a, &b).unwrap().value().data(), &[0.0]);
    }
}

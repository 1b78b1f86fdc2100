//! Schedule tables against an independent running product, Monte Carlo checks
//! of the forward process, and the reverse update with exact noise.

use proptest::prelude::*;
use radiomap::compute::{Tape, Tensor};
use radiomap::diffusion::{
    forward_sample, forward_step, linear_schedule, noise_loss, reverse_step, sigma_variant,
    NoiseSchedule, SigmaMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Oracle {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
}

/// Plain loops, 1-indexed, written from the definitions.
fn oracle(steps: usize, b1: f64, bt: f64) -> Oracle {
    let mut beta = vec![0.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    let mut sigma2 = vec![0.0; steps + 1];
    let mut prod = 1.0f64;
    for t in 1..=steps {
        beta[t] = b1 + (bt - b1) * (t - 1) as f64 / (steps - 1) as f64;
        prod *= 1.0 - beta[t];
        alpha_bar[t] = prod;
        sigma2[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
    }
    Oracle {
        beta,
        alpha_bar,
        sigma2,
    }
}

#[test]
fn default_schedule_matches_running_product() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let o = oracle(400, 1e-4, 0.02);
    assert_eq!(s.first_beta(), 1e-4);
    assert_eq!(s.last_beta(), 0.02);
    for t in 1..=400 {
        assert!((s.beta(t) - o.beta[t]).abs() < 1e-12, "beta at {t}");
        assert!(
            (s.alpha(t) - (1.0 - o.beta[t])).abs() < 1e-12,
            "alpha at {t}"
        );
        assert!(
            (s.alpha_bar(t) - o.alpha_bar[t]).abs() < 1e-12,
            "alpha_bar at {t}"
        );
        assert!(
            (s.sigma2[t - 1] - o.sigma2[t]).abs() < 1e-12,
            "sigma2 at {t}"
        );
    }
    // Log-space cross-check of the last product.
    let log: f64 = (1..=400).map(|t| (1.0 - o.beta[t]).ln()).sum();
    assert!((s.alpha_bar(400) - log.exp()).abs() < 1e-12);
    assert!((s.alpha_bar(1) - (1.0 - 1e-4)).abs() < 1e-15);
    assert!(s.alpha_bar(400) > 1e-3 && s.alpha_bar(400) < 1e-1);
}

#[test]
fn sigma_tables() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let post = sigma_variant(&s, SigmaMode::Posterior);
    let beta = sigma_variant(&s, SigmaMode::Beta);
    assert_eq!(post[0], 0.0);
    assert_eq!(beta, s.beta);
    for t in 0..400 {
        assert!(post[t] <= beta[t]);
    }
    let rel = |t: usize| (beta[t] - post[t]) / beta[t];
    assert!(rel(0) > rel(10) && rel(10) > rel(100) && rel(100) > rel(399));
}

#[test]
fn bad_schedules_are_rejected() {
    assert!(linear_schedule(1, 1e-4, 0.02).is_err());
    assert!(linear_schedule(10, 0.0, 0.02).is_err());
    assert!(linear_schedule(10, 0.02, 0.02).is_err());
    assert!(linear_schedule(10, 1e-4, 1.0).is_err());
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Least-squares signal coefficient and residual variance of draws of `x_t`
/// around a fixed `x0`, pooled over cells.
struct Moments {
    coef: f64,
    var: f64,
}

fn pooled(x0: &[f64], draws: &[Vec<f64>], coef_true: f64) -> Moments {
    let n = draws.len() as f64;
    let mut mean = vec![0.0; x0.len()];
    for d in draws {
        mean.iter_mut().zip(d).for_each(|(m, v)| *m += v / n);
    }
    let coef = mean.iter().zip(x0).map(|(m, x)| m * x).sum::<f64>()
        / x0.iter().map(|x| x * x).sum::<f64>();
    let mut ss = 0.0;
    for d in draws {
        ss += d
            .iter()
            .zip(x0)
            .map(|(v, x)| (v - coef_true * x).powi(2))
            .sum::<f64>();
    }
    Moments {
        coef,
        var: ss / (n * x0.len() as f64),
    }
}

fn close(actual: f64, expected: f64, tol: f64) -> bool {
    ((actual - expected) / expected).abs() < tol
}

fn fixed_x0(cells: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..cells).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn forward_marginal_matches_closed_form() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = fixed_x0(256, &mut rng);
    let x0t = Tensor::<f64>::from_f64(&[256], &x0).unwrap();
    for t in [1usize, 200, 400] {
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let eps = Tensor::from_f64(&[256], &gaussian(256, &mut rng)).unwrap();
                forward_sample(&x0t, t, &eps, &s).unwrap().into_data()
            })
            .collect();
        let ab = s.alpha_bar(t);
        let m = pooled(&x0, &draws, ab.sqrt());
        assert!(
            close(m.coef, ab.sqrt(), 0.02),
            "t={t}: mean coefficient {} vs {}",
            m.coef,
            ab.sqrt()
        );
        assert!(
            close(m.var, 1.0 - ab, 0.02),
            "t={t}: variance {} vs {}",
            m.var,
            1.0 - ab
        );
    }
}

#[test]
fn iterated_kernel_matches_closed_form() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cells = 128;
    let x0 = fixed_x0(cells, &mut rng);
    let checkpoints = [1usize, 200, 400];
    let mut at: Vec<Vec<Vec<f64>>> = (0..3).map(|_| Vec::with_capacity(10_000)).collect();
    for _ in 0..10_000 {
        let mut x = Tensor::<f64>::from_f64(&[cells], &x0).unwrap();
        for t in 1..=400 {
            let z = Tensor::from_f64(&[cells], &gaussian(cells, &mut rng)).unwrap();
            x = forward_step(&x, t, &z, &s).unwrap();
            if let Some(i) = checkpoints.iter().position(|&c| c == t) {
                at[i].push(x.data().to_vec());
            }
        }
    }
    for (i, &t) in checkpoints.iter().enumerate() {
        let ab = s.alpha_bar(t);
        let m = pooled(&x0, &at[i], ab.sqrt());
        assert!(
            close(m.coef, ab.sqrt(), 0.03),
            "t={t}: mean coefficient {} vs {}",
            m.coef,
            ab.sqrt()
        );
        assert!(
            close(m.var, 1.0 - ab, 0.03),
            "t={t}: variance {} vs {}",
            m.var,
            1.0 - ab
        );
    }
}

#[test]
fn zero_noise_forward_is_scaled_signal() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let x0 = Tensor::<f64>::from_f64(&[4], &[-1.0, -0.2, 0.3, 1.0]).unwrap();
    let zero = Tensor::zeros(&[4]);
    let xt = forward_sample(&x0, 400, &zero, &s).unwrap();
    for (a, b) in xt.data().iter().zip(x0.data()) {
        assert_eq!(*a, s.alpha_bar(400).sqrt() * b);
    }
    assert!(forward_sample(&x0, 0, &zero, &s).is_err());
    assert!(forward_sample(&x0, 401, &zero, &s).is_err());
    assert!(forward_sample(&x0, 1, &Tensor::zeros(&[5]), &s).is_err());
}

#[test]
fn oracle_denoiser_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for scale in [1e-3, 1.0, 1e3] {
        let eps: Vec<f32> = gaussian(1024, &mut rng)
            .iter()
            .map(|v| (v * scale) as f32)
            .collect();
        let tape = Tape::new();
        let a = tape.constant(Tensor::new(&[1, 32, 32], eps.clone()).unwrap());
        let b = tape.constant(Tensor::new(&[1, 32, 32], eps).unwrap());
        assert_eq!(noise_loss(&a, &b).unwrap().value().data()[0], 0.0);
    }
}

/// With the exact noise of a point mass the whole chain collapses onto it.
fn run_exact_chain(s: &NoiseSchedule, c: &[f64], mode: SigmaMode, seed: u64) -> Vec<f64> {
    let sigma2 = sigma_variant(s, mode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(c.len(), &mut rng);
    for t in (1..=s.steps).rev() {
        let ab = s.alpha_bar(t);
        let eps: Vec<f64> = x
            .iter()
            .zip(c)
            .map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt())
            .collect();
        let z = (t > 1).then(|| gaussian(c.len(), &mut rng));
        reverse_step(&mut x, &eps, t, s, sigma2[t - 1], z.as_deref());
    }
    x
}

#[test]
fn exact_noise_chain_lands_on_data() {
    let s = linear_schedule(400, 1e-4, 0.02).unwrap();
    let c = [0.9, -0.4, 0.0, -1.0];
    let x = run_exact_chain(&s, &c, SigmaMode::Posterior, 5);
    for (a, b) in x.iter().zip(&c) {
        assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_invariants(steps in 2usize..600, b1 in 1e-6f64..0.01, span in 1e-4f64..0.5) {
        let bt = (b1 + span).min(0.999);
        let s = linear_schedule(steps, b1, bt).unwrap();
        for t in 1..steps {
            prop_assert!(s.beta(t) < s.beta(t + 1));
            prop_assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        for t in 1..=steps {
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            prop_assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            prop_assert!(s.sigma2[t - 1] <= s.beta(t));
        }
    }

    #[test]
    fn forward_is_affine_in_noise(seed in 0u64..1000, t in 1usize..=100) {
        let s = linear_schedule(100, 4e-4, 0.08).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::<f64>::from_f64(&[8], &fixed_x0(8, &mut rng)).unwrap();
        let e = Tensor::from_f64(&[8], &gaussian(8, &mut rng)).unwrap();
        let xt = forward_sample(&x0, t, &e, &s).unwrap();
        let ab = s.alpha_bar(t);
        for i in 0..8 {
            let want = ab.sqrt() * x0.data()[i] + (1.0 - ab).sqrt() * e.data()[i];
            prop_assert!((xt.data()[i] - want).abs() < 1e-12);
        }
    }
}

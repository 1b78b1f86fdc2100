use super::model::ModelCheckpoint;
use super::schedule::{sigma_variant, NoiseSchedule, SigmaMode};
use super::train::gaussian;
use crate::compute::{Tape, Tensor};
use crate::encoders::ConditionSet;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scenario::{RadioMap, TxLocation};
use crate::Scalar;

/// `x_{t−1} = (x_t − β_t/√(1 − ᾱ_t)·eps) / √α_t + σ_t·z`, in place; `z` is
/// omitted at the last step.
pub fn reverse_step(
    x: &mut [f64],
    eps: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    sigma2: f64,
    z: Option<&[f64]>,
) {
    let a = sched.alpha(t).sqrt();
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let sigma = sigma2.sqrt();
    for (i, (xi, e)) in x.iter_mut().zip(eps).enumerate() {
        let noise = z.map_or(0.0, |z| sigma * z[i]);
        *xi = (*xi - coef * e) / a + noise;
    }
}

/// Ancestral sampling with the default posterior variance.
pub fn sample<S: Scalar>(
    cond: &ConditionSet,
    model: &ModelCheckpoint<S>,
    seed: u64,
) -> Result<RadioMap> {
    sample_with(cond, model, seed, SigmaMode::Posterior)
}

/// Runs the reverse chain from `x_T ~ N(0, I)` and maps the clamped result
/// back to dBm.
pub fn sample_with<S: Scalar>(
    cond: &ConditionSet,
    model: &ModelCheckpoint<S>,
    seed: u64,
    mode: SigmaMode,
) -> Result<RadioMap> {
    if cond.kind() != model.kind() {
        return Err(Error::Condition(format!(
            "checkpoint was trained on {} but the condition is {}",
            model.kind(),
            cond.kind()
        )));
    }
    let n = model.grid_n();
    let sched = &model.schedule;
    let sigma2 = sigma_variant(sched, mode);
    let mut rng = substream(seed, "sampling");
    let embedding: Tensor<S> = {
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        let e = model.embed(&p, &tape, cond)?.to_tensor();
        e
    };
    let mut x: Vec<f64> = gaussian::<f64>(&[n * n], &mut rng).into_data();
    for t in (1..=sched.steps).rev() {
        let eps = {
            let tape = Tape::new();
            let p = model.store.bind_frozen(&tape);
            let xs: Vec<S> = x.iter().map(|&v| S::lit(v)).collect();
            let x_t = tape.constant(Tensor::new(&[1, n, n], xs)?);
            let emb = tape.constant(embedding.clone());
            let e = model.predict(&p, &tape, &x_t, t, &emb)?.to_tensor();
            e
        };
        let eps: Vec<f64> = eps
            .data()
            .iter()
            .map(|e| e.to_f64().unwrap_or(f64::NAN))
            .collect();
        let z: Option<Tensor<f64>> = (t > 1).then(|| gaussian(&[n * n], &mut rng));
        reverse_step(
            &mut x,
            &eps,
            t,
            sched,
            sigma2[t - 1],
            z.as_ref().map(Tensor::data),
        );
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("sampler produced non-finite values".into()));
    }
    let values = x
        .iter()
        .map(|&v| model.normalizer.denormalize(v.clamp(-1.0, 1.0)) as f32)
        .collect();
    let tx_list: Vec<TxLocation> = match cond {
        ConditionSet::TxLocations(t) => t.clone(),
        ConditionSet::Fragments(_) => Vec::new(),
    };
    RadioMap::new(n, values, 0, tx_list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::linear_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_noise_recovers_point_mass() {
        // For data concentrated at c, the exact noise is (x_t − √ᾱ_t·c)/√(1 − ᾱ_t)
        // and the chain must land on c.
        let sched = linear_schedule(50, 1e-4, 0.2).unwrap();
        let c = [0.25, -0.7, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = gaussian::<f64>(&[3], &mut rng).into_data();
        for t in (1..=sched.steps).rev() {
            let ab = sched.alpha_bar(t);
            let eps: Vec<f64> = x
                .iter()
                .zip(&c)
                .map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt())
                .collect();
            let z = (t > 1).then(|| gaussian::<f64>(&[3], &mut rng).into_data());
            reverse_step(&mut x, &eps, t, &sched, sched.sigma2[t - 1], z.as_deref());
        }
        for (a, b) in x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{ModelCheckpoint, ModelConfig};
use super::schedule::{forward_sample, noise_loss};
use crate::compute::{AdamConfig, Tape, Tensor};
use crate::conditions::ConditionSpec;
use crate::dataset::DatasetFile;
use crate::encoders::Normalizer;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub condition: ConditionSpec,
    /// Anneal the step size linearly to zero over the run instead of keeping
    /// it constant.
    pub lr_decay: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Configuration(format!(
                "need lr >= 0, epochs >= 1 and batch_size >= 1 (got {}, {}, {})",
                self.lr, self.epochs, self.batch_size
            )));
        }
        Ok(())
    }
}

pub(crate) fn gaussian<S: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data).expect("noise shape")
}

/// Fits a fresh model on the training split of `data`. `on_epoch` receives
/// the epoch index (from 1) and its mean batch loss.
pub fn train<S: Scalar>(
    data: &DatasetFile,
    cfg: &TrainConfig,
    arch: &ModelConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<ModelCheckpoint<S>> {
    cfg.validate()?;
    if arch.encoder.kind != cfg.condition.kind {
        return Err(Error::Configuration(format!(
            "architecture encodes {} but training builds {}",
            arch.encoder.kind, cfg.condition.kind
        )));
    }
    if arch.unet.grid_n != data.grid_n {
        return Err(Error::Configuration(format!(
            "model grid {} does not match dataset grid {}",
            arch.unet.grid_n, data.grid_n
        )));
    }
    cfg.condition.validate(data.grid_n, arch.encoder.capacity)?;
    let (records, _) = data.split();
    if records.is_empty() {
        return Err(Error::Training("no training records".into()));
    }
    let normalizer = Normalizer::new(data.min_dbm, data.max_dbm)?;
    let mut model = ModelCheckpoint::<S>::new(*arch, normalizer, cfg.seed)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order_rng = substream(cfg.seed, "order");
    let mut noise_rng = substream(cfg.seed, "noise");
    let mut selection_rng = substream(cfg.seed, "selection");
    let x0s = records
        .iter()
        .map(|r| model.normalize_map(&r.map.values_dbm))
        .collect::<Result<Vec<_>>>()?;
    let steps = model.schedule.steps;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let per_epoch = order.len().div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut sum: Option<Vec<Tensor<S>>> = None;
            let mut batch_loss = 0.0;
            let scale = S::lit(1.0 / batch.len() as f64);
            for &i in batch {
                let cond = cfg.condition.build(&records[i], selection_rng.random())?;
                let t = noise_rng.random_range(1..=steps);
                let eps = gaussian::<S>(x0s[i].shape(), &mut noise_rng);
                let x_t = forward_sample(&x0s[i], t, &eps, &model.schedule)?;
                let tape = Tape::new();
                let p = model.store.bind(&tape);
                let emb = model.embed(&p, &tape, &cond)?;
                let pred = model.predict(&p, &tape, &tape.constant(x_t), t, &emb)?;
                let loss = noise_loss(&pred, &tape.constant(eps))?;
                let value = loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {value} at epoch {epoch}, record {}, t={t}",
                        records[i].scenario.id
                    )));
                }
                batch_loss += value;
                let grads = p.grads(&tape.backward(loss.scale(scale))?);
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut()
                                .iter_mut()
                                .zip(g.data())
                                .for_each(|(a, &g)| *a += g);
                        }
                    }
                }
            }
            let grads = sum.expect("non-empty batch");
            let mut adam = adam;
            if cfg.lr_decay {
                let done = (epoch - 1) * per_epoch + batches;
                adam.lr *= 1.0 - done as f64 / (cfg.epochs * per_epoch) as f64;
            }
            model.store.adam_step(&grads, &adam)?;
            total += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let mean = total / batches as f64;
        model.loss_trace.push(mean as f32);
        on_epoch(epoch, mean);
    }
    Ok(model)
}

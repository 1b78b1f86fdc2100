use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{linear_schedule, NoiseSchedule};
use crate::binio::{Reader, Writer};
use crate::compute::{Bound, ParamStore, Tape, Tensor, Var};
use crate::denoiser::{UNet, UNetConfig};
use crate::encoders::{ConditionEncoder, ConditionKind, ConditionSet, EncoderConfig, Normalizer};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RMGC";

const MAX_DIM: usize = 1 << 24;

/// Architecture and schedule of a conditional diffusion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub encoder: EncoderConfig,
    pub steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
}

impl ModelConfig {
    /// Full-size architecture with the 400-step linear schedule.
    pub fn new(kind: ConditionKind, grid_n: usize) -> Self {
        Self {
            unet: UNetConfig {
                grid_n,
                ..UNetConfig::default()
            },
            encoder: EncoderConfig::new(kind, grid_n, 4),
            steps: 400,
            beta1: 1e-4,
            beta_t: 0.02,
        }
    }

    /// Narrow single-block network on a 100-step schedule whose β range is
    /// scaled so the final ᾱ is close to the 400-step one. Trains on one CPU
    /// core in a couple of minutes.
    pub fn desk(kind: ConditionKind, grid_n: usize) -> Self {
        let mut c = Self::new(kind, grid_n);
        c.unet.base_channels = 8;
        c.unet.blocks_per_level = 1;
        c.steps = 100;
        c.beta1 = 4e-4;
        c.beta_t = 0.08;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.encoder.validate()?;
        if self.unet.cond_dim != self.encoder.d_cond || self.unet.grid_n != self.encoder.grid_n {
            return Err(Error::Configuration(
                "encoder output and grid must match the denoiser's".into(),
            ));
        }
        linear_schedule(self.steps, self.beta1, self.beta_t).map(|_| ())
    }
}

/// Trained (or freshly initialized) parameters with everything needed to
/// sample: schedule, normalization bounds and the training loss trace.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint<S> {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub store: ParamStore<S>,
    pub encoder: ConditionEncoder,
    pub unet: UNet,
    pub loss_trace: Vec<f32>,
}

impl<S: Scalar> ModelCheckpoint<S> {
    pub fn new(config: ModelConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let mut store = ParamStore::new();
        let encoder = ConditionEncoder::new(&mut store, config.encoder, &mut rng)?;
        let unet = UNet::new(&mut store, config.unet, &mut rng)?;
        Ok(Self {
            config,
            schedule: linear_schedule(config.steps, config.beta1, config.beta_t)?,
            normalizer,
            store,
            encoder,
            unet,
            loss_trace: Vec::new(),
        })
    }

    pub fn kind(&self) -> ConditionKind {
        self.config.encoder.kind
    }

    pub fn grid_n(&self) -> usize {
        self.config.unet.grid_n
    }

    /// Condition embedding recorded on `tape`.
    pub fn embed<'t>(
        &self,
        p: &Bound<'t, S>,
        tape: &'t Tape<S>,
        cond: &ConditionSet,
    ) -> Result<Var<'t, S>> {
        self.encoder.encode(p, tape, cond, &self.normalizer)
    }

    pub fn predict<'t>(
        &self,
        p: &Bound<'t, S>,
        tape: &'t Tape<S>,
        x_t: &Var<'t, S>,
        t: usize,
        cond_embedding: &Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        self.unet
            .predict_noise(p, tape, x_t, t, self.schedule.steps, cond_embedding)
    }

    /// Normalized `[1, N, N]` tensor of a dBm grid.
    pub fn normalize_map(&self, values_dbm: &[f32]) -> Result<Tensor<S>> {
        let n = self.grid_n();
        let v: Vec<f64> = values_dbm
            .iter()
            .map(|&x| self.normalizer.normalize(x as f64))
            .collect();
        Tensor::from_f64(&[1, n, n], &v)
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let c = &self.config;
        let mut w = Writer(w);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(c.encoder.kind.code())?;
        w.count(c.unet.grid_n)?;
        w.count(c.steps)?;
        w.f64(c.beta1)?;
        w.f64(c.beta_t)?;
        w.f64(self.normalizer.min_dbm)?;
        w.f64(self.normalizer.max_dbm)?;
        w.count(c.encoder.d_cond)?;
        w.count(c.encoder.capacity)?;
        w.count(c.encoder.k)?;
        // Architecture fields needed to rebuild the parameter layout.
        for v in [
            c.unet.base_channels,
            c.unet.levels,
            c.unet.time_dim,
            c.unet.groups,
            c.unet.blocks_per_level,
            c.encoder.hidden,
            c.encoder.tx_dim,
        ] {
            w.count(v)?;
        }
        w.count(self.store.len())?;
        for (name, tensor) in self.store.iter() {
            w.count(name.len())?;
            w.bytes(name.as_bytes())?;
            w.count(tensor.shape().len())?;
            for &d in tensor.shape() {
                w.count(d)?;
            }
            for v in tensor.data() {
                w.f32(v.to_f32().unwrap_or(f32::NAN))?;
            }
        }
        w.count(self.loss_trace.len())?;
        for &l in &self.loss_trace {
            w.f32(l)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(CHECKPOINT_MAGIC)?;
        let kind = ConditionKind::from_code(r.u32()?)?;
        let grid_n = r.count(MAX_DIM)?;
        let steps = r.count(MAX_DIM)?;
        let beta1 = r.f64()?;
        let beta_t = r.f64()?;
        let normalizer =
            Normalizer::new(r.f64()?, r.f64()?).map_err(|e| Error::Format(e.to_string()))?;
        let d_cond = r.count(MAX_DIM)?;
        let capacity = r.count(MAX_DIM)?;
        let k = r.count(MAX_DIM)?;
        let mut arch = [0usize; 7];
        for a in &mut arch {
            *a = r.count(MAX_DIM)?;
        }
        let [base_channels, levels, time_dim, groups, blocks_per_level, hidden, tx_dim] = arch;
        let config = ModelConfig {
            unet: UNetConfig {
                base_channels,
                levels,
                time_dim,
                cond_dim: d_cond,
                grid_n,
                groups,
                blocks_per_level,
            },
            encoder: EncoderConfig {
                kind,
                grid_n,
                d_cond,
                hidden,
                capacity,
                k,
                tx_dim,
            },
            steps,
            beta1,
            beta_t,
        };
        let mut model =
            Self::new(config, normalizer, 0).map_err(|e| Error::Format(e.to_string()))?;
        let n_params = r.count(MAX_DIM)?;
        if n_params != model.store.len() {
            return Err(Error::Format(format!(
                "{n_params} parameter blocks, architecture has {}",
                model.store.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for _ in 0..n_params {
            let len = r.count(4096)?;
            let name = String::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = r.count(8)?;
            let shape = (0..rank)
                .map(|_| r.count(MAX_DIM))
                .collect::<Result<Vec<_>>>()?;
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("parameter {name} repeated")));
            }
            if model.store.get(id).shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {shape:?}"
                )));
            }
            let count: usize = shape.iter().product();
            let data = (0..count)
                .map(|_| Ok(S::lit(r.f32()? as f64)))
                .collect::<Result<Vec<_>>>()?;
            model.store.set(id, Tensor::new(&shape, data)?)?;
        }
        let epochs = r.count(MAX_DIM)?;
        model.loss_trace = (0..epochs).map(|_| r.f32()).collect::<Result<_>>()?;
        r.expect_eof()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

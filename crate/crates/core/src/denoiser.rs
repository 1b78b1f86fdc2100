//! Conditional U-Net noise predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{concat, Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, GroupNorm, Linear};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub grid_n: usize,
    pub groups: usize,
    pub blocks_per_level: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            levels: 2,
            time_dim: 64,
            cond_dim: 64,
            grid_n: 32,
            groups: 8,
            blocks_per_level: 2,
        }
    }
}

impl UNetConfig {
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.levels == 0 || !self.grid_n.is_multiple_of(1 << self.levels) {
            return bad(format!(
                "grid {} not divisible by 2^{}",
                self.grid_n, self.levels
            ));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) || self.cond_dim == 0 {
            return bad(format!(
                "time_dim {} must be even and positive",
                self.time_dim
            ));
        }
        if self.groups == 0
            || self.base_channels == 0
            || !self.base_channels.is_multiple_of(self.groups)
        {
            return bad(format!(
                "{} base channels not divisible into {} groups",
                self.base_channels, self.groups
            ));
        }
        if self.blocks_per_level == 0 {
            return bad("at least one residual block per level".into());
        }
        Ok(())
    }
}

/// Raw sinusoidal step features `[sin tω₀, cos tω₀, sin tω₁, …]` with
/// `ω_j = 10000^(−2j/dim)`.
pub fn step_features(t: usize, max_t: usize, dim: usize) -> Result<Vec<f64>> {
    if t == 0 || t > max_t {
        return Err(Error::Step { t, max: max_t });
    }
    let t = t as f64;
    Ok((0..dim / 2)
        .flat_map(|j| {
            let w = 10000f64.powf(-2.0 * j as f64 / dim as f64);
            [(t * w).sin(), (t * w).cos()]
        })
        .collect())
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv,
    emb: Linear,
    norm2: GroupNorm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        cfg: &UNetConfig,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), c_in, cfg.groups),
            conv1: Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 3, rng),
            emb: Linear::new(store, &format!("{name}.emb"), cfg.time_dim, c_out, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), c_out, cfg.groups),
            conv2: Conv::new(store, &format!("{name}.conv2"), c_out, c_out, 3, rng),
            skip: (c_in != c_out)
                .then(|| Conv::new(store, &format!("{name}.skip"), c_in, c_out, 1, rng)),
        }
    }

    fn forward<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        x: &Var<'t, S>,
        emb: &Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let h = self.conv1.forward(p, &self.norm1.forward(p, x)?.silu())?;
        let h = h.add_channel_bias(&self.emb.forward(p, emb)?)?;
        let h = self.conv2.forward(p, &self.norm2.forward(p, &h)?.silu())?;
        let shortcut = match &self.skip {
            Some(c) => c.forward(p, x)?,
            None => *x,
        };
        h.add(&shortcut)
    }
}

#[derive(Debug, Clone)]
struct UpStage {
    conv: Conv,
    blocks: Vec<ResBlock>,
}

/// Noise predictor `ε(x_t, t | cond)` on single-channel `N×N` maps.
#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    time: Linear,
    cond: Linear,
    input: Conv,
    down: Vec<Vec<ResBlock>>,
    mid: Vec<ResBlock>,
    up: Vec<UpStage>,
    output: Conv,
}

impl UNet {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        cfg: UNetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let time = Linear::new(store, "unet.time", cfg.time_dim, cfg.time_dim, rng);
        let cond = Linear::new(store, "unet.cond", cfg.cond_dim, cfg.time_dim, rng);
        let input = Conv::new(store, "unet.input", 1, cfg.channels(0), 3, rng);
        let mut c = cfg.channels(0);
        let mut down = Vec::new();
        for l in 0..cfg.levels {
            let blocks = (0..cfg.blocks_per_level)
                .map(|b| {
                    let c_in = std::mem::replace(&mut c, cfg.channels(l));
                    ResBlock::new(store, &format!("unet.down{l}.{b}"), c_in, c, &cfg, rng)
                })
                .collect();
            down.push(blocks);
        }
        let mid = (0..cfg.blocks_per_level)
            .map(|b| {
                let c_in = std::mem::replace(&mut c, cfg.channels(cfg.levels));
                ResBlock::new(store, &format!("unet.mid.{b}"), c_in, c, &cfg, rng)
            })
            .collect();
        let mut up = Vec::new();
        for l in (0..cfg.levels).rev() {
            let conv = Conv::new(store, &format!("unet.up{l}.resample"), c, c, 3, rng);
            c += cfg.channels(l);
            let blocks = (0..cfg.blocks_per_level)
                .map(|b| {
                    let c_in = std::mem::replace(&mut c, cfg.channels(l));
                    ResBlock::new(store, &format!("unet.up{l}.{b}"), c_in, c, &cfg, rng)
                })
                .collect();
            up.push(UpStage { conv, blocks });
        }
        let output = Conv::new(store, "unet.output", c, 1, 3, rng);
        Ok(Self {
            cfg,
            time,
            cond,
            input,
            down,
            mid,
            up,
            output,
        })
    }

    /// Learned step embedding `[time_dim, 1]`.
    pub fn time_embed<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        tape: &'t Tape<S>,
        t: usize,
        max_t: usize,
    ) -> Result<Var<'t, S>> {
        let raw = step_features(t, max_t, self.cfg.time_dim)?;
        let raw = tape.constant(Tensor::from_f64(&[raw.len(), 1], &raw)?);
        Ok(self.time.forward(p, &raw)?.silu())
    }

    /// Predicted noise for `x_t: [1, N, N]` at step `t` given a condition
    /// embedding `[cond_dim, 1]`.
    pub fn predict_noise<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        tape: &'t Tape<S>,
        x_t: &Var<'t, S>,
        t: usize,
        max_t: usize,
        cond: &Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let n = self.cfg.grid_n;
        if x_t.shape() != [1, n, n] {
            return Err(Error::Dimension(format!(
                "expected input [1, {n}, {n}], got {:?}",
                x_t.shape()
            )));
        }
        if cond.shape() != [self.cfg.cond_dim, 1] {
            return Err(Error::Dimension(format!(
                "expected condition [{}, 1], got {:?}",
                self.cfg.cond_dim,
                cond.shape()
            )));
        }
        let emb = self
            .time_embed(p, tape, t, max_t)?
            .add(&self.cond.forward(p, cond)?)?
            .silu();
        let mut h = self.input.forward(p, x_t)?;
        let mut skips = Vec::with_capacity(self.cfg.levels);
        for blocks in &self.down {
            for b in blocks {
                h = b.forward(p, &h, &emb)?;
            }
            skips.push(h);
            h = h.avgpool2x()?;
        }
        for b in &self.mid {
            h = b.forward(p, &h, &emb)?;
        }
        for stage in &self.up {
            h = stage.conv.forward(p, &h.upsample2x()?)?;
            let skip = skips.pop().expect("one skip per level");
            h = concat(&[h, skip])?;
            for b in &stage.blocks {
                h = b.forward(p, &h, &emb)?;
            }
        }
        // No norm before the head: the residual stream carries x_t linearly
        // and a final group norm would strip its per-map offset.
        self.output.forward(p, &h)
    }
}

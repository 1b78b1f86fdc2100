//! Sampling a model over dataset records.

use rand::Rng;

use crate::conditions::ConditionSpec;
use crate::dataset::Record;
use crate::diffusion::{sample_with, ModelCheckpoint, SigmaMode};
use crate::error::Result;
use crate::rng::substream;
use crate::scenario::RadioMap;
use crate::Scalar;

/// One generated map per record, each from its own condition and noise
/// stream derived from `seed`.
pub fn generate_for_records<S: Scalar>(
    model: &ModelCheckpoint<S>,
    records: &[Record],
    spec: &ConditionSpec,
    seed: u64,
    mode: SigmaMode,
) -> Result<Vec<RadioMap>> {
    let mut seeds = substream(seed, "eval");
    records
        .iter()
        .map(|r| {
            let (select_seed, noise_seed): (u64, u64) = (seeds.random(), seeds.random());
            let cond = spec.build(r, select_seed)?;
            let mut map = sample_with(&cond, model, noise_seed, mode)?;
            map.scenario_id = r.scenario.id;
            map.tx_list = r.scenario.tx_list.clone();
            Ok(map)
        })
        .collect()
}

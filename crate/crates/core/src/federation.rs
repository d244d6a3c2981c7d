//! Shared federated-learning setup: per-device shards, region test sets,
//! seeding and per-round metrics.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Shard};
use crate::error::NnError;
use crate::field::DeviceId;
use crate::nn::{evaluate, init_model, Evaluation, MlpShape, ModelParams, TrainConfig};

/// Everything a training run needs besides the algorithm itself.
#[derive(Debug, Clone)]
pub struct Federation {
    pub shards: BTreeMap<DeviceId, Shard>,
    /// Data region each device draws from.
    pub region_of: BTreeMap<DeviceId, usize>,
    /// Held-out data per region, partitioned like the training data.
    pub region_tests: Vec<Dataset>,
    pub pooled_test: Dataset,
    pub shape: MlpShape,
    /// Local training parameters; `seed` is the run seed.
    pub train: TrainConfig,
}

impl Federation {
    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.shards.keys().copied()
    }

    /// Common initial model, identical for every device.
    pub fn initial_model(&self) -> ModelParams {
        init_model(&self.shape, mix(self.train.seed, u64::MAX, 0))
    }

    /// Training config for one device in one round.
    pub fn train_config(&self, device: DeviceId, round: u64) -> TrainConfig {
        TrainConfig {
            seed: mix(self.train.seed, device.0 as u64, round),
            ..self.train
        }
    }

    pub fn bytes_per_model(&self) -> u64 {
        self.shape.param_count() as u64 * 8
    }
}

/// SplitMix64-style mixing of a run seed with two stream indices.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of per-round, per-device output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub round: u64,
    pub device: u32,
    pub region: usize,
    pub leader: Option<u32>,
    pub is_leader: bool,
    pub region_size: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub global_val_accuracy: f64,
    pub bytes_sent: u64,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "seed",
        "round",
        "device",
        "region",
        "leader",
        "is_leader",
        "region_size",
        "train_loss",
        "val_loss",
        "val_accuracy",
        "global_val_accuracy",
        "bytes_sent",
    ];
}

/// Coordination facts about a device for one round's record.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    pub leader: Option<DeviceId>,
    pub is_leader: bool,
    pub region_size: usize,
    pub bytes_sent: u64,
}

/// Evaluates models against region and pooled test sets, reusing results
/// for devices that share a model allocation within one round.
#[derive(Default)]
pub struct Evaluator {
    cache: HashMap<(usize, Option<usize>), Evaluation>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    fn cached(
        &mut self,
        model: &Arc<ModelParams>,
        region: Option<usize>,
        data: &Dataset,
    ) -> Result<Evaluation, NnError> {
        let key = (Arc::as_ptr(model) as usize, region);
        if let Some(e) = self.cache.get(&key) {
            return Ok(*e);
        }
        let e = evaluate(model, &data.samples)?;
        self.cache.insert(key, e);
        Ok(e)
    }

    /// Builds the record for `device` holding `model` at `round`.
    /// Call [`Evaluator::clear`] between rounds.
    pub fn record(
        &mut self,
        fed: &Federation,
        round: u64,
        device: DeviceId,
        model: &Arc<ModelParams>,
        placement: Placement,
    ) -> Result<MetricsRecord, NnError> {
        let region = fed.region_of.get(&device).copied().unwrap_or(0);
        let shard = &fed.shards[&device];
        let train = evaluate(model, &shard.samples)?;
        let val = self.cached(model, Some(region), &fed.region_tests[region])?;
        let global = self.cached(model, None, &fed.pooled_test)?;
        Ok(MetricsRecord {
            seed: fed.train.seed,
            round,
            device: device.0,
            region,
            leader: placement.leader.map(|l| l.0),
            is_leader: placement.is_leader,
            region_size: placement.region_size,
            train_loss: train.loss,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            global_val_accuracy: global.accuracy,
            bytes_sent: placement.bytes_sent,
        })
    }

    pub fn clear(&mut self) {
        self.cache.clear();
    }
}

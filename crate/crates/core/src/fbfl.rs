//! Field-based federated learning: SCR regions, model collection toward
//! leaders, weighted aggregation and dissemination.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{scr_step, Metric, ScrSlots};
pub use crate::blocks::leader_assignment;
use crate::error::{Error, FedError, FieldError, NetError};
use crate::fedcentral::fedavg_aggregate;
use crate::federation::{Evaluator, Federation, MetricsRecord, Placement};
use crate::field::{BundleEntry, DeviceId, FieldValue, ModelBundle, Program, RoundVm, SlotKey};
use crate::netsim::{inject_failure, Schedule, ScheduleConfig, World};
use crate::nn::{train_local, ModelParams};

/// Sensor carrying a device's latest trained contribution.
pub const CONTRIBUTION: &str = "contribution";
/// Leader a device is assigned to in the current field round.
pub const ASSIGNED: SlotKey = SlotKey::new("assigned_leader");

/// Data-size weighted mean over a bundle, summed in device-id order.
pub fn regional_aggregate(bundle: &ModelBundle) -> Result<ModelParams, FedError> {
    let entries: Vec<(&ModelParams, usize)> = bundle.iter().map(|(_, e)| (e.model.as_ref(), e.samples)).collect();
    fedavg_aggregate(&entries)
}

/// Per-field-round program. Training happens outside, at synchronization
/// points; the program only moves bundles.
#[derive(Debug, Clone, Copy)]
pub struct FbflProgram {
    pub radius: f64,
    pub metric: Metric,
    pub slots: ScrSlots,
}

impl FbflProgram {
    pub fn new(radius: f64, metric: Metric) -> Self {
        Self {
            radius,
            metric,
            slots: ScrSlots::DEFAULT,
        }
    }
}

fn merge_bundles(acc: FieldValue, other: &FieldValue) -> FieldValue {
    match (acc, other) {
        (FieldValue::Bundle(a), FieldValue::Bundle(b)) => FieldValue::Bundle(a.merge(b)),
        (acc, _) => acc,
    }
}

/// Leader decision: the aggregate as a one-entry bundle keyed by the leader.
fn decide(leader: DeviceId, collected: &FieldValue) -> FieldValue {
    let FieldValue::Bundle(bundle) = collected else {
        return FieldValue::Bundle(ModelBundle::new());
    };
    match regional_aggregate(bundle) {
        Ok(model) => {
            let samples = bundle.iter().map(|(_, e)| e.samples).sum();
            let round = bundle.iter().map(|(_, e)| e.round).max().unwrap_or(0);
            FieldValue::Bundle(ModelBundle::singleton(
                leader,
                BundleEntry {
                    model: Arc::new(model),
                    samples,
                    round,
                },
            ))
        }
        Err(_) => FieldValue::Bundle(ModelBundle::new()),
    }
}

impl Program for FbflProgram {
    fn slots(&self) -> Vec<SlotKey> {
        let mut k = self.slots.keys();
        k.push(ASSIGNED);
        k
    }

    fn run(&self, vm: &mut RoundVm<'_>) -> Result<(), FieldError> {
        let local = match vm.sensor(CONTRIBUTION) {
            Some(v @ FieldValue::Bundle(_)) => v.clone(),
            Some(other) => {
                return Err(FieldError::TypeMismatch {
                    slot: SlotKey::new(CONTRIBUTION),
                    expected: "bundle",
                    found: other.type_name(),
                })
            }
            None => FieldValue::Bundle(ModelBundle::new()),
        };
        let me = vm.device();
        let out = scr_step(
            vm,
            self.slots,
            self.radius,
            self.metric,
            local,
            merge_bundles,
            |c| decide(me, c),
            FieldValue::Bundle(ModelBundle::new()),
        )?;
        vm.share(ASSIGNED, FieldValue::Device(Some(out.election.leader)))
    }
}

/// Live devices whose last export marks them as leaders.
pub fn leaders(world: &World) -> BTreeSet<DeviceId> {
    world
        .topology
        .live_devices()
        .filter(|d| world.export(*d).and_then(assigned_leader) == Some(*d))
        .collect()
}

/// Leader a device was assigned to in its last export.
pub fn assigned_leader(export: &crate::field::Export) -> Option<DeviceId> {
    export.get(ASSIGNED).and_then(|v| v.device(ASSIGNED).ok()).flatten()
}

/// Regional model a device received in its last export, with the leader
/// that produced it.
fn received(world: &World, d: DeviceId, slot: SlotKey) -> Option<(DeviceId, Arc<ModelParams>)> {
    let v = world.export(d)?.get(slot)?;
    let FieldValue::Bundle(b) = v else { return None };
    b.iter().next().map(|(l, e)| (l, Arc::clone(&e.model)))
}

/// Leaders removed at the start of a federated round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailurePlan {
    pub round: usize,
    pub leaders: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbflConfig {
    pub radius: f64,
    pub metric: Metric,
    pub schedule: ScheduleConfig,
    pub failure: Option<FailurePlan>,
}

#[derive(Debug, Clone)]
pub struct FbflRun {
    pub records: Vec<MetricsRecord>,
    pub schedule: Schedule,
    /// Model held by each live device at the start of each round `0..=T`.
    pub models: Vec<BTreeMap<DeviceId, Arc<ModelParams>>>,
    /// Live leaders observed at each round's synchronization point.
    pub leaders: Vec<BTreeSet<DeviceId>>,
    /// Devices removed by the failure plan.
    pub killed: BTreeSet<DeviceId>,
    pub world: World,
}

/// Runs the protocol for `cfg.schedule.max_fl_rounds` federated rounds.
pub fn run_fbfl(world: World, fed: &Federation, cfg: &FbflConfig) -> Result<FbflRun, Error> {
    if !(cfg.radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {}", cfg.radius)));
    }
    if !world.topology.check_connected() {
        return Err(NetError::Disconnected.into());
    }
    for d in world.topology.devices() {
        if !fed.shards.contains_key(&d) {
            return Err(Error::Config(format!("device {d} has no data shard")));
        }
    }
    let schedule = Schedule::resolve(&cfg.schedule, &world.topology, cfg.metric);
    let program = FbflProgram::new(cfg.radius, cfg.metric);

    let w0 = Arc::new(fed.initial_model());
    let mut held: BTreeMap<DeviceId, Arc<ModelParams>> =
        world.topology.devices().map(|d| (d, Arc::clone(&w0))).collect();
    let mut trained = held.clone();

    let mut world = world;
    for d in world.topology.devices().collect::<Vec<_>>() {
        world.set_sensor(d, CONTRIBUTION, FieldValue::Bundle(ModelBundle::new()));
    }
    while world.field_round < schedule.sync_round(0) {
        world = world.step(&program)?;
    }

    let mut records = Vec::new();
    let mut models = Vec::with_capacity(schedule.fl_rounds + 1);
    let mut leader_log = Vec::with_capacity(schedule.fl_rounds + 1);
    let mut killed = BTreeSet::new();
    let mut bytes_mark: BTreeMap<DeviceId, u64> = BTreeMap::new();
    let mut eval = Evaluator::new();

    for t in 0..=schedule.fl_rounds {
        world.fl_round = t as u64;
        if let Some(plan) = cfg.failure.filter(|p| p.round == t && t > 0) {
            let mut current: Vec<DeviceId> = leaders(&world).into_iter().collect();
            current.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
            let victims: BTreeSet<DeviceId> = current.into_iter().take(plan.leaders).collect();
            world = inject_failure(&world, &victims)?;
            killed.extend(victims);
        }
        let live: Vec<DeviceId> = world.topology.live_devices().collect();

        // Adopt the regional model delivered during the previous round.
        let mut source: BTreeMap<DeviceId, Option<DeviceId>> = BTreeMap::new();
        for &d in &live {
            if t == 0 {
                source.insert(d, None);
                continue;
            }
            match received(&world, d, program.slots.broadcast) {
                Some((l, m)) => {
                    held.insert(d, m);
                    source.insert(d, Some(l));
                }
                None => {
                    held.insert(d, Arc::clone(&trained[&d]));
                    source.insert(d, Some(d));
                }
            }
        }

        let current_leaders = leaders(&world);
        let mut sizes: BTreeMap<DeviceId, usize> = BTreeMap::new();
        for &d in &live {
            let l = world.export(d).and_then(assigned_leader).unwrap_or(d);
            *sizes.entry(l).or_default() += 1;
        }
        eval.clear();
        for &d in &live {
            let assigned = world.export(d).and_then(assigned_leader).unwrap_or(d);
            let leader = source[&d].unwrap_or(assigned);
            let total = world.bytes_sent(d);
            let mark = bytes_mark.insert(d, total).unwrap_or(0);
            let placement = Placement {
                leader: Some(leader),
                is_leader: current_leaders.contains(&d),
                region_size: sizes.get(&assigned).copied().unwrap_or(1),
                bytes_sent: total - mark,
            };
            records.push(eval.record(fed, t as u64, d, &held[&d], placement)?);
        }
        models.push(live.iter().map(|d| (*d, Arc::clone(&held[d]))).collect());
        leader_log.push(current_leaders);
        if t == schedule.fl_rounds {
            break;
        }

        for &d in &live {
            let shard = &fed.shards[&d];
            let cfg_d = fed.train_config(d, t as u64);
            let model = Arc::new(train_local(&held[&d], &shard.samples, &cfg_d)?);
            trained.insert(d, Arc::clone(&model));
            world.set_sensor(
                d,
                CONTRIBUTION,
                FieldValue::Bundle(ModelBundle::singleton(
                    d,
                    BundleEntry {
                        model,
                        samples: shard.len(),
                        round: t as u64,
                    },
                )),
            );
        }
        for _ in 0..schedule.ratio {
            world = world.step(&program)?;
        }
    }

    Ok(FbflRun {
        records,
        schedule,
        models,
        leaders: leader_log,
        killed,
        world,
    })
}

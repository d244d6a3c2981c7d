//! Self-stabilizing coordination blocks built on the field kernel:
//! distance gradient, gradient-cast (G), collect-cast (C), sparse-choice
//! leader election (S) and their SCR composition.
//!
//! Distances are tracked per source together with a freshness stamp. A
//! device keeps a source's entry only while the best stamp offered by its
//! neighbors keeps advancing, so the distances of a source that disappears
//! expire after a number of rounds bounded by its hop distance instead of
//! slowly counting up.

use std::collections::BTreeMap;

use crate::error::FieldError;
use crate::field::{DeviceId, FieldValue, RoundVm, SlotKey, SourceEntry, SourceTable};

/// Distance used between neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Hops,
}

impl Metric {
    pub fn range(self, vm: &RoundVm<'_>, other: DeviceId) -> Result<f64, FieldError> {
        match self {
            Metric::Euclidean => vm.neighbor_range(other),
            Metric::Hops => vm.neighbor_range(other).map(|_| 1.0),
        }
    }
}

/// Distance estimate to the nearest source; `INFINITY` when none is known.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Potential(f64);

impl Potential {
    pub const ZERO: Potential = Potential(0.0);
    pub const INFINITY: Potential = Potential(f64::MAX);

    pub fn new(v: f64) -> Self {
        if v >= f64::MAX || v.is_nan() {
            Self::INFINITY
        } else {
            Potential(v.max(0.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0 < f64::MAX
    }

    pub fn saturating_add(self, d: f64) -> Potential {
        if self.is_finite() {
            Potential::new(self.0 + d)
        } else {
            Self::INFINITY
        }
    }
}

/// Collects every neighbor-offered source entry (excluding this device),
/// applying the freshness rule against this device's previous table.
fn gather_sources(
    vm: &RoundVm<'_>,
    key: SlotKey,
    metric: Metric,
    limit: Option<f64>,
) -> Result<SourceTable, FieldError> {
    let me = vm.device();
    let mut offers: BTreeMap<DeviceId, (f64, u64)> = BTreeMap::new();
    for (nbr, value) in vm.neighbor_values(key)? {
        let range = metric.range(vm, nbr)?;
        for (src, e) in value.table(key)?.live() {
            if src == me {
                continue;
            }
            let d = e.distance + range;
            if limit.is_some_and(|l| d > l) {
                continue;
            }
            let slot = offers.entry(src).or_insert((f64::INFINITY, 0));
            slot.0 = slot.0.min(d);
            slot.1 = slot.1.max(e.stamp);
        }
    }
    let prev = match vm.prev(key)? {
        Some(v) => v.table(key)?.clone(),
        None => SourceTable::new(),
    };
    let mut table = SourceTable::new();
    for (src, old) in prev.iter() {
        if src != me {
            table.insert(
                src,
                SourceEntry {
                    distance: f64::INFINITY,
                    stamp: old.stamp,
                    alive: false,
                },
            );
        }
    }
    for (src, (distance, stamp)) in offers {
        let fresh = prev.get(src).is_none_or(|old| stamp > old.stamp);
        if fresh {
            table.insert(
                src,
                SourceEntry {
                    distance,
                    stamp,
                    alive: true,
                },
            );
        }
    }
    Ok(table)
}

fn add_self(vm: &RoundVm<'_>, table: &mut SourceTable) {
    table.insert(
        vm.device(),
        SourceEntry {
            distance: 0.0,
            stamp: vm.round(),
            alive: true,
        },
    );
}

/// Slots used by one gradient instance.
#[derive(Debug, Clone, Copy)]
pub struct GradientSlots {
    pub sources: SlotKey,
    pub potential: SlotKey,
}

impl GradientSlots {
    pub fn keys(&self) -> [SlotKey; 2] {
        [self.sources, self.potential]
    }
}

/// Self-healing distance to the nearest source.
pub fn gradient(
    vm: &mut RoundVm<'_>,
    slots: GradientSlots,
    is_source: bool,
    metric: Metric,
) -> Result<Potential, FieldError> {
    let mut table = gather_sources(vm, slots.sources, metric, None)?;
    let potential = if is_source {
        add_self(vm, &mut table);
        Potential::ZERO
    } else {
        table
            .live()
            .map(|(_, e)| Potential::new(e.distance))
            .fold(Potential::INFINITY, |a, b| if b < a { b } else { a })
    };
    vm.share(slots.sources, FieldValue::Table(table))?;
    vm.share(slots.potential, FieldValue::Scalar(potential.value()))?;
    Ok(potential)
}

/// The neighbor this device descends to: minimal `potential + range` among
/// neighbors whose potential is strictly below `own`; ties by smallest id.
pub fn descend_parent(
    vm: &RoundVm<'_>,
    potential_key: SlotKey,
    own: Potential,
    metric: Metric,
) -> Result<Option<DeviceId>, FieldError> {
    let mut best: Option<(Potential, DeviceId)> = None;
    for (nbr, v) in vm.neighbor_values(potential_key)? {
        let p = Potential::new(v.scalar(potential_key)?);
        if !p.is_finite() || p >= own {
            continue;
        }
        let via = p.saturating_add(metric.range(vm, nbr)?);
        if best.is_none_or(|(b, _)| via < b) {
            best = Some((via, nbr));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Gradient-cast with identity accumulation: sources publish `value`, every
/// other device repeats its parent's previous value, or `null` without one.
pub fn broadcast(
    vm: &mut RoundVm<'_>,
    key: SlotKey,
    potential_key: SlotKey,
    potential: Potential,
    is_source: bool,
    value: FieldValue,
    null: FieldValue,
    metric: Metric,
) -> Result<FieldValue, FieldError> {
    let out = if is_source {
        value
    } else {
        match descend_parent(vm, potential_key, potential, metric)? {
            Some(parent) => vm
                .neighbor_values(key)?
                .find(|(id, _)| *id == parent)
                .map(|(_, v)| v.clone())
                .unwrap_or(null),
            None => null,
        }
    };
    vm.share(key, out.clone())?;
    Ok(out)
}

/// Slots used by one collect instance.
#[derive(Debug, Clone, Copy)]
pub struct CollectSlots {
    pub value: SlotKey,
    pub parent: SlotKey,
}

impl CollectSlots {
    pub fn keys(&self) -> [SlotKey; 2] {
        [self.value, self.parent]
    }
}

/// Collect-cast: merges `local` with the previous values of every neighbor
/// whose parent is this device.
pub fn collect<F>(
    vm: &mut RoundVm<'_>,
    slots: CollectSlots,
    potential_key: SlotKey,
    potential: Potential,
    local: FieldValue,
    mut merge: F,
    null: FieldValue,
    metric: Metric,
) -> Result<FieldValue, FieldError>
where
    F: FnMut(FieldValue, &FieldValue) -> FieldValue,
{
    let me = vm.device();
    let parent = descend_parent(vm, potential_key, potential, metric)?;
    let children: Vec<DeviceId> = vm
        .neighbor_values(slots.parent)?
        .filter_map(|(id, v)| match v {
            FieldValue::Device(Some(p)) if *p == me => Some(id),
            _ => None,
        })
        .collect();
    let mut from_children = null;
    for (id, v) in vm.neighbor_values(slots.value)? {
        if children.contains(&id) {
            from_children = merge(from_children, v);
        }
    }
    let acc = merge(local, &from_children);
    vm.share(slots.parent, FieldValue::Device(parent))?;
    vm.share(slots.value, acc.clone())?;
    Ok(acc)
}

/// Assignment rule: nearest leader within `radius`, ties by smallest id;
/// the device itself when none qualifies.
pub fn leader_assignment(
    device: DeviceId,
    leaders: impl IntoIterator<Item = (DeviceId, f64)>,
    radius: f64,
) -> DeviceId {
    leaders
        .into_iter()
        .filter(|(_, d)| *d <= radius)
        .fold(None::<(f64, DeviceId)>, |best, (id, d)| match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < id) => Some((bd, bid)),
            _ => Some((d, id)),
        })
        .map_or(device, |(_, id)| id)
}

/// Outcome of leader election at one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Election {
    pub is_leader: bool,
    pub leader: DeviceId,
    pub distance: f64,
}

/// Sparse choice. Every device is a candidate; a device yields while it
/// knows a live leader with a smaller id within `radius`. Leader distances
/// come from per-leader gradients truncated at `radius`.
pub fn elect(vm: &mut RoundVm<'_>, key: SlotKey, radius: f64, metric: Metric) -> Result<Election, FieldError> {
    if !(radius > 0.0) {
        return Err(FieldError::Config(format!("radius must be positive, got {radius}")));
    }
    let me = vm.device();
    let mut table = gather_sources(vm, key, metric, Some(radius))?;
    let is_leader = !table.live().any(|(id, e)| id < me && e.distance <= radius);
    let election = if is_leader {
        add_self(vm, &mut table);
        Election {
            is_leader,
            leader: me,
            distance: 0.0,
        }
    } else {
        let leader = leader_assignment(me, table.live().map(|(id, e)| (id, e.distance)), radius);
        Election {
            is_leader,
            leader,
            distance: table.get(leader).map_or(0.0, |e| e.distance),
        }
    };
    vm.share(key, FieldValue::Table(table))?;
    Ok(election)
}

/// Slot set for one SCR instance.
#[derive(Debug, Clone, Copy)]
pub struct ScrSlots {
    pub election: SlotKey,
    pub gradient: GradientSlots,
    pub collect: CollectSlots,
    pub broadcast: SlotKey,
}

impl ScrSlots {
    pub const DEFAULT: ScrSlots = ScrSlots {
        election: SlotKey::new("leaders"),
        gradient: GradientSlots {
            sources: SlotKey::new("potential_sources"),
            potential: SlotKey::new("potential"),
        },
        collect: CollectSlots {
            value: SlotKey::new("collect"),
            parent: SlotKey::new("collect_parent"),
        },
        broadcast: SlotKey::new("broadcast"),
    };

    pub fn keys(&self) -> Vec<SlotKey> {
        let mut k = vec![self.election, self.broadcast];
        k.extend(self.gradient.keys());
        k.extend(self.collect.keys());
        k
    }
}

/// Everything one SCR step produced at a device.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrOutput {
    pub election: Election,
    pub potential: Potential,
    pub collected: FieldValue,
    pub value: FieldValue,
}

/// Elect leaders, grow regions with a gradient, collect toward leaders,
/// decide at leaders and broadcast the decision back.
pub fn scr_step<M, D>(
    vm: &mut RoundVm<'_>,
    slots: ScrSlots,
    radius: f64,
    metric: Metric,
    local: FieldValue,
    merge: M,
    decide: D,
    null: FieldValue,
) -> Result<ScrOutput, FieldError>
where
    M: FnMut(FieldValue, &FieldValue) -> FieldValue,
    D: FnOnce(&FieldValue) -> FieldValue,
{
    let election = elect(vm, slots.election, radius, metric)?;
    let potential = gradient(vm, slots.gradient, election.is_leader, metric)?;
    let collected = collect(
        vm,
        slots.collect,
        slots.gradient.potential,
        potential,
        local,
        merge,
        null.clone(),
        metric,
    )?;
    let decision = if election.is_leader {
        decide(&collected)
    } else {
        null.clone()
    };
    let value = broadcast(
        vm,
        slots.broadcast,
        slots.gradient.potential,
        potential,
        election.is_leader,
        decision,
        null,
        metric,
    )?;
    Ok(ScrOutput {
        election,
        potential,
        collected,
        value,
    })
}

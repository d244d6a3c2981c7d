//! Round-based field execution kernel.
//!
//! Every device runs the same [`Program`] once per round. A program reads
//! its own previous-round values, the previous-round exports of its current
//! neighbors and local sensors, and writes one value per declared
//! [`SlotKey`]. The values written form the device's outgoing [`Export`],
//! which doubles as its persistent state for the next round.
//!
//! Construct instances are identified by static slot keys instead of
//! alignment trees: programs have a fixed shape and branch only at the value
//! level (see [`mux`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::FieldError;
use crate::nn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Names one construct instance inside a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotKey(&'static str);

impl SlotKey {
    pub const fn new(name: &'static str) -> Self {
        Self(name)
    }

    pub fn name(&self) -> &'static str {
        self.0
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A device's model contribution as carried inside a [`ModelBundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub model: Arc<ModelParams>,
    pub samples: usize,
    /// Federated round in which the model was produced.
    pub round: u64,
}

/// Set of `(device, model, sample count)` triples keyed by device.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBundle {
    entries: BTreeMap<DeviceId, BundleEntry>,
}

impl ModelBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(id: DeviceId, entry: BundleEntry) -> Self {
        let mut b = Self::new();
        b.entries.insert(id, entry);
        b
    }

    /// Inserts `entry`, keeping whichever of the old and new entries for
    /// `id` carries the larger round stamp.
    pub fn insert(&mut self, id: DeviceId, entry: BundleEntry) {
        match self.entries.get(&id) {
            Some(old) if old.round >= entry.round => {}
            _ => {
                self.entries.insert(id, entry);
            }
        }
    }

    /// Id-keyed union, latest round wins.
    pub fn merge(mut self, other: &ModelBundle) -> Self {
        for (id, e) in &other.entries {
            self.insert(*id, e.clone());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: DeviceId) -> Option<&BundleEntry> {
        self.entries.get(&id)
    }

    /// Entries in ascending device order.
    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, &BundleEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn ids(&self) -> BTreeSet<DeviceId> {
        self.entries.keys().copied().collect()
    }
}

/// Distance to one source as tracked by a device, plus a freshness stamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceEntry {
    pub distance: f64,
    /// Round in which the source emitted the information this entry derives from.
    pub stamp: u64,
    /// Dead entries are kept only to remember the highest stamp seen.
    pub alive: bool,
}

/// Per-source distance estimates held by one device.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceTable {
    entries: BTreeMap<DeviceId, SourceEntry>,
}

impl SourceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: DeviceId) -> Option<&SourceEntry> {
        self.entries.get(&id)
    }

    pub fn insert(&mut self, id: DeviceId, entry: SourceEntry) {
        self.entries.insert(id, entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, &SourceEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Live sources in ascending id order.
    pub fn live(&self) -> impl Iterator<Item = (DeviceId, &SourceEntry)> {
        self.iter().filter(|(_, e)| e.alive)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Scalar(f64),
    Bool(bool),
    Vector(Vec<f64>),
    Bundle(ModelBundle),
    Device(Option<DeviceId>),
    Table(SourceTable),
}

impl FieldValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            FieldValue::Scalar(_) => "scalar",
            FieldValue::Bool(_) => "bool",
            FieldValue::Vector(_) => "vector",
            FieldValue::Bundle(_) => "bundle",
            FieldValue::Device(_) => "device",
            FieldValue::Table(_) => "table",
        }
    }

    pub fn same_type(&self, other: &FieldValue) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    fn mismatch(&self, slot: SlotKey, expected: &'static str) -> FieldError {
        FieldError::TypeMismatch {
            slot,
            expected,
            found: self.type_name(),
        }
    }

    pub fn scalar(&self, slot: SlotKey) -> Result<f64, FieldError> {
        match self {
            FieldValue::Scalar(v) => Ok(*v),
            other => Err(other.mismatch(slot, "scalar")),
        }
    }

    pub fn boolean(&self, slot: SlotKey) -> Result<bool, FieldError> {
        match self {
            FieldValue::Bool(v) => Ok(*v),
            other => Err(other.mismatch(slot, "bool")),
        }
    }

    pub fn device(&self, slot: SlotKey) -> Result<Option<DeviceId>, FieldError> {
        match self {
            FieldValue::Device(v) => Ok(*v),
            other => Err(other.mismatch(slot, "device")),
        }
    }

    pub fn bundle(&self, slot: SlotKey) -> Result<&ModelBundle, FieldError> {
        match self {
            FieldValue::Bundle(v) => Ok(v),
            other => Err(other.mismatch(slot, "bundle")),
        }
    }

    pub fn table(&self, slot: SlotKey) -> Result<&SourceTable, FieldError> {
        match self {
            FieldValue::Table(v) => Ok(v),
            other => Err(other.mismatch(slot, "table")),
        }
    }

    /// Number of model payloads carried by this value.
    pub fn model_count(&self) -> usize {
        match self {
            FieldValue::Bundle(b) => b.len(),
            _ => 0,
        }
    }
}

/// One device's coordination message for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub sender: DeviceId,
    pub round: u64,
    pub slots: BTreeMap<SlotKey, FieldValue>,
}

impl Export {
    pub fn get(&self, key: SlotKey) -> Option<&FieldValue> {
        self.slots.get(&key)
    }

    pub fn model_count(&self) -> usize {
        self.slots.values().map(FieldValue::model_count).sum()
    }
}

/// Everything a device sees when it starts a round.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub device: DeviceId,
    pub round: u64,
    pub position: Point,
    /// Positions of the current neighbors.
    pub neighbor_positions: BTreeMap<DeviceId, Point>,
    /// Most recent export from each current neighbor that has produced one.
    pub neighbor_exports: BTreeMap<DeviceId, Arc<Export>>,
    /// This device's own previous export; `None` before its first round.
    pub prev: Option<Arc<Export>>,
    pub sensors: BTreeMap<String, FieldValue>,
}

impl NodeContext {
    pub fn new(device: DeviceId, round: u64, position: Point) -> Self {
        Self {
            device,
            round,
            position,
            neighbor_positions: BTreeMap::new(),
            neighbor_exports: BTreeMap::new(),
            prev: None,
            sensors: BTreeMap::new(),
        }
    }

    pub fn with_neighbor(mut self, id: DeviceId, position: Point, export: Option<Export>) -> Self {
        self.neighbor_positions.insert(id, position);
        if let Some(e) = export {
            self.neighbor_exports.insert(id, Arc::new(e));
        }
        self
    }

    pub fn with_prev(mut self, prev: Export) -> Self {
        self.prev = Some(Arc::new(prev));
        self
    }

    pub fn with_sensor(mut self, name: &str, value: FieldValue) -> Self {
        self.sensors.insert(name.to_string(), value);
        self
    }
}

/// A field program: a fixed set of slots and a per-round body.
pub trait Program {
    fn slots(&self) -> Vec<SlotKey>;
    fn run(&self, vm: &mut RoundVm<'_>) -> Result<(), FieldError>;
}

/// Eager value-level branch.
pub fn mux<T>(cond: bool, then: T, otherwise: T) -> T {
    if cond {
        then
    } else {
        otherwise
    }
}

/// Execution state of one device for one round.
pub struct RoundVm<'a> {
    ctx: &'a NodeContext,
    declared: BTreeSet<SlotKey>,
    out: BTreeMap<SlotKey, FieldValue>,
}

impl<'a> RoundVm<'a> {
    pub fn new(ctx: &'a NodeContext, declared: impl IntoIterator<Item = SlotKey>) -> Self {
        Self {
            ctx,
            declared: declared.into_iter().collect(),
            out: BTreeMap::new(),
        }
    }

    pub fn context(&self) -> &'a NodeContext {
        self.ctx
    }

    pub fn device(&self) -> DeviceId {
        self.ctx.device
    }

    pub fn round(&self) -> u64 {
        self.ctx.round
    }

    pub fn sensor(&self, name: &str) -> Option<&'a FieldValue> {
        self.ctx.sensors.get(name)
    }

    fn check(&self, key: SlotKey) -> Result<(), FieldError> {
        if self.declared.contains(&key) {
            Ok(())
        } else {
            Err(FieldError::UndeclaredSlot(key))
        }
    }

    /// This device's value for `key` from the previous round.
    pub fn prev(&self, key: SlotKey) -> Result<Option<&'a FieldValue>, FieldError> {
        self.check(key)?;
        Ok(self.ctx.prev.as_deref().and_then(|e| e.get(key)))
    }

    /// Value already written this round, if any.
    pub fn current(&self, key: SlotKey) -> Option<&FieldValue> {
        self.out.get(&key)
    }

    /// Writes `value` under `key` into this round's export.
    pub fn share(&mut self, key: SlotKey, value: FieldValue) -> Result<(), FieldError> {
        self.check(key)?;
        if self.out.contains_key(&key) {
            return Err(FieldError::DuplicateSlot(key));
        }
        self.out.insert(key, value);
        Ok(())
    }

    /// `rep`: evolves the previous value (or `init` on the first round) and
    /// records the result as this round's value for `key`.
    pub fn rep_evolve<F>(&mut self, key: SlotKey, init: FieldValue, evolve: F) -> Result<FieldValue, FieldError>
    where
        F: FnOnce(FieldValue) -> FieldValue,
    {
        let prev = self.prev(key)?.cloned().unwrap_or(init);
        let next = evolve(prev);
        self.share(key, next.clone())?;
        Ok(next)
    }

    /// Ids of the current neighbors, ascending.
    pub fn neighbors(&self) -> impl Iterator<Item = DeviceId> + 'a {
        self.ctx.neighbor_positions.keys().copied()
    }

    /// Neighbors' previous-round values for `key`, ascending by id.
    /// Neighbors without an export (or without the slot) are skipped.
    pub fn neighbor_values(
        &self,
        key: SlotKey,
    ) -> Result<impl Iterator<Item = (DeviceId, &'a FieldValue)> + 'a, FieldError> {
        self.check(key)?;
        let ctx = self.ctx;
        Ok(ctx
            .neighbor_exports
            .iter()
            .filter(move |(id, _)| ctx.neighbor_positions.contains_key(id))
            .filter_map(move |(id, e)| e.get(key).map(|v| (*id, v))))
    }

    /// `foldhood` over `nbr(local)`: shares `local` under `key` and folds
    /// `combine` over the neighbors' previous-round values, starting from
    /// `init`. The device's own value is not part of the fold.
    pub fn nbr_fold<F>(
        &mut self,
        key: SlotKey,
        init: FieldValue,
        mut combine: F,
        local: FieldValue,
    ) -> Result<FieldValue, FieldError>
    where
        F: FnMut(FieldValue, &FieldValue) -> FieldValue,
    {
        let mut acc = init;
        for (_, v) in self.neighbor_values(key)? {
            if !v.same_type(&local) {
                return Err(FieldError::TypeMismatch {
                    slot: key,
                    expected: local.type_name(),
                    found: v.type_name(),
                });
            }
            acc = combine(acc, v);
        }
        self.share(key, local)?;
        Ok(acc)
    }

    /// Euclidean distance to a current neighbor.
    pub fn neighbor_range(&self, other: DeviceId) -> Result<f64, FieldError> {
        self.ctx
            .neighbor_positions
            .get(&other)
            .map(|p| self.ctx.position.distance(p))
            .ok_or(FieldError::NotNeighbor {
                this: self.ctx.device,
                other,
            })
    }

    /// Closes the round, checking that every declared slot was written.
    pub fn finish(self) -> Result<Export, FieldError> {
        if let Some(missing) = self.declared.iter().find(|k| !self.out.contains_key(k)) {
            return Err(FieldError::IncompleteExport { slot: *missing });
        }
        Ok(Export {
            sender: self.ctx.device,
            round: self.ctx.round,
            slots: self.out,
        })
    }
}

/// Runs `program` for one device and returns its export.
pub fn run_device<P: Program + ?Sized>(program: &P, ctx: &NodeContext) -> Result<Export, FieldError> {
    let mut vm = RoundVm::new(ctx, program.slots());
    program.run(&mut vm)?;
    vm.finish()
}

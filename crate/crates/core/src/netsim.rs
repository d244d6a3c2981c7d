//! Deterministic synchronous-round network simulator over a unit-disk graph.
//!
//! A [`World`] is an immutable snapshot; [`step_field_round`] evaluates a
//! program on every live device against the previous snapshot's exports and
//! returns the next snapshot. Information therefore travels at most one hop
//! per round.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::Metric;
use crate::error::NetError;
use crate::field::{run_device, DeviceId, Export, FieldValue, NodeContext, Point, Program};

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: BTreeMap<DeviceId, Point>,
    comm_range: f64,
    severed: BTreeSet<DeviceId>,
    adjacency: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
}

impl Topology {
    /// Unit-disk graph: `a ~ b` iff `a != b` and `|a - b| <= comm_range`.
    pub fn build_unit_disk(
        positions: impl IntoIterator<Item = (DeviceId, Point)>,
        comm_range: f64,
    ) -> Result<Self, NetError> {
        if !(comm_range > 0.0) {
            return Err(NetError::InvalidRange(comm_range));
        }
        let positions: BTreeMap<DeviceId, Point> = positions.into_iter().collect();
        let ids: Vec<DeviceId> = positions.keys().copied().collect();
        let mut adjacency: BTreeMap<DeviceId, BTreeSet<DeviceId>> =
            ids.iter().map(|&id| (id, BTreeSet::new())).collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let d = positions[&a].distance(&positions[&b]);
                if d == 0.0 {
                    return Err(NetError::DuplicatePosition(a, b));
                }
                if d <= comm_range {
                    adjacency.get_mut(&a).unwrap().insert(b);
                    adjacency.get_mut(&b).unwrap().insert(a);
                }
            }
        }
        Ok(Self {
            positions,
            comm_range,
            severed: BTreeSet::new(),
            adjacency,
        })
    }

    /// Devices numbered `0..points.len()` in order.
    pub fn from_points(points: &[Point], comm_range: f64) -> Result<Self, NetError> {
        Self::build_unit_disk(
            points.iter().enumerate().map(|(i, p)| (DeviceId(i as u32), *p)),
            comm_range,
        )
    }

    pub fn comm_range(&self) -> f64 {
        self.comm_range
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.positions.keys().copied()
    }

    pub fn live_devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices().filter(|d| !self.severed.contains(d))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, id: DeviceId) -> Option<Point> {
        self.positions.get(&id).copied()
    }

    pub fn severed(&self) -> &BTreeSet<DeviceId> {
        &self.severed
    }

    pub fn is_severed(&self, id: DeviceId) -> bool {
        self.severed.contains(&id)
    }

    /// Live neighbors of a device (empty for severed devices).
    pub fn neighbors(&self, id: DeviceId) -> impl Iterator<Item = DeviceId> + '_ {
        let alive = !self.severed.contains(&id);
        self.adjacency
            .get(&id)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |n| alive && !self.severed.contains(n))
    }

    pub fn has_edge(&self, a: DeviceId, b: DeviceId) -> bool {
        self.neighbors(a).any(|n| n == b)
    }

    pub fn edge_weight(&self, a: DeviceId, b: DeviceId, metric: Metric) -> f64 {
        match metric {
            Metric::Euclidean => self.positions[&a].distance(&self.positions[&b]),
            Metric::Hops => 1.0,
        }
    }

    fn sever(&mut self, victims: &BTreeSet<DeviceId>) -> Result<(), NetError> {
        if let Some(v) = victims.iter().find(|v| !self.positions.contains_key(v)) {
            return Err(NetError::UnknownDevice(*v));
        }
        self.severed.extend(victims.iter().copied());
        Ok(())
    }

    /// BFS hop counts from `from` over live devices.
    pub fn hop_distances(&self, from: DeviceId) -> BTreeMap<DeviceId, usize> {
        let mut dist = BTreeMap::new();
        if self.is_severed(from) || !self.positions.contains_key(&from) {
            return dist;
        }
        dist.insert(from, 0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// True iff the live devices form a single connected component.
    pub fn check_connected(&self) -> bool {
        match self.live_devices().next() {
            None => true,
            Some(first) => self.hop_distances(first).len() == self.live_devices().count(),
        }
    }

    /// Largest hop distance between live devices; `None` when disconnected.
    pub fn hop_diameter(&self) -> Option<usize> {
        if !self.check_connected() {
            return None;
        }
        Some(
            self.live_devices()
                .flat_map(|d| self.hop_distances(d).into_values())
                .max()
                .unwrap_or(0),
        )
    }

    /// Shortest-path distances from `from` under `metric`, paired with the
    /// fewest hops achieving each distance.
    pub fn shortest_paths(&self, from: DeviceId, metric: Metric) -> BTreeMap<DeviceId, (f64, usize)> {
        #[derive(PartialEq)]
        struct Item(f64, usize, DeviceId);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .0
                    .total_cmp(&self.0)
                    .then(other.1.cmp(&self.1))
                    .then(other.2.cmp(&self.2))
            }
        }
        let mut best: BTreeMap<DeviceId, (f64, usize)> = BTreeMap::new();
        if self.is_severed(from) {
            return best;
        }
        let mut heap = BinaryHeap::from([Item(0.0, 0, from)]);
        best.insert(from, (0.0, 0));
        while let Some(Item(d, h, u)) = heap.pop() {
            if best[&u] != (d, h) {
                continue;
            }
            for v in self.neighbors(u) {
                let cand = (d + self.edge_weight(u, v, metric), h + 1);
                let better = best
                    .get(&v)
                    .is_none_or(|&(bd, bh)| cand.0 < bd || (cand.0 == bd && cand.1 < bh));
                if better {
                    best.insert(v, cand);
                    heap.push(Item(cand.0, cand.1, v));
                }
            }
        }
        best
    }

    /// Weighted diameter and the largest hop count along shortest paths.
    pub fn path_profile(&self, metric: Metric) -> PathProfile {
        let mut profile = PathProfile::default();
        for d in self.live_devices() {
            for (_, (dist, hops)) in self.shortest_paths(d, metric) {
                profile.weighted_diameter = profile.weighted_diameter.max(dist);
                profile.path_hops = profile.path_hops.max(hops);
            }
        }
        profile
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathProfile {
    pub weighted_diameter: f64,
    /// Max hops of any shortest path; bounds gradient stabilization time.
    pub path_hops: usize,
}

/// Spatial clusters of devices on a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub centers: Vec<Point>,
    pub devices: usize,
    /// Devices are placed uniformly in a disk of this radius around their center.
    pub jitter: f64,
    pub comm_range: f64,
}

/// A generated deployment: topology plus each device's cluster.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub cluster_of: BTreeMap<DeviceId, usize>,
}

impl Scenario {
    pub fn members(&self, cluster: usize) -> BTreeSet<DeviceId> {
        self.cluster_of
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn clusters(&self) -> usize {
        self.cluster_of.values().max().map_or(0, |m| m + 1)
    }
}

const LAYOUT_ATTEMPTS: usize = 200;

impl ClusterLayout {
    /// `clusters` centers on a square grid with the given spacing.
    pub fn grid(clusters: usize, devices: usize, spacing: f64, jitter: f64, comm_range: f64) -> Self {
        let cols = (clusters as f64).sqrt().ceil().max(1.0) as usize;
        let centers = (0..clusters)
            .map(|c| Point::new((c % cols) as f64 * spacing, (c / cols) as f64 * spacing))
            .collect();
        Self {
            centers,
            devices,
            jitter,
            comm_range,
        }
    }

    /// Device `i` joins cluster `i % clusters`. Placement is redrawn until
    /// the graph is connected.
    pub fn generate(&self, seed: u64) -> Result<Scenario, NetError> {
        let k = self.centers.len().max(1);
        let cluster_of: BTreeMap<DeviceId, usize> =
            (0..self.devices).map(|i| (DeviceId(i as u32), i % k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..LAYOUT_ATTEMPTS {
            let points = cluster_of.iter().map(|(&id, &c)| {
                let center = self.centers.get(c).copied().unwrap_or(Point::new(0.0, 0.0));
                let r = self.jitter * rng.random::<f64>().sqrt();
                let theta = TAU * rng.random::<f64>();
                (id, Point::new(center.x + r * theta.cos(), center.y + r * theta.sin()))
            });
            match Topology::build_unit_disk(points.collect::<Vec<_>>(), self.comm_range) {
                Ok(topology) if topology.check_connected() => {
                    return Ok(Scenario {
                        topology,
                        cluster_of,
                    })
                }
                Ok(_) | Err(NetError::DuplicatePosition(..)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(NetError::LayoutExhausted(LAYOUT_ATTEMPTS))
    }
}

/// How many field rounds make up one federated round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRatio {
    /// Round trip along the deepest shortest path: `2 * (path_hops + 1)`.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub field_ratio: FieldRatio,
    /// Field rounds run before the first federated round; `None` = twice the ratio.
    pub warmup: Option<usize>,
    pub max_fl_rounds: usize,
}

/// A [`ScheduleConfig`] resolved against a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub ratio: usize,
    pub warmup: usize,
    pub fl_rounds: usize,
}

impl Schedule {
    pub fn resolve(cfg: &ScheduleConfig, topology: &Topology, metric: Metric) -> Self {
        let ratio = match cfg.field_ratio {
            FieldRatio::Fixed(n) => n.max(1),
            FieldRatio::Auto => 2 * (topology.path_profile(metric).path_hops + 1),
        };
        Self {
            ratio,
            warmup: cfg.warmup.unwrap_or(2 * ratio),
            fl_rounds: cfg.max_fl_rounds,
        }
    }

    /// Field round at which federated round `t` synchronizes.
    pub fn sync_round(&self, t: usize) -> u64 {
        (self.warmup + t * self.ratio) as u64
    }
}

/// Snapshot of the whole network between two field rounds.
#[derive(Debug, Clone)]
pub struct World {
    pub topology: Topology,
    pub field_round: u64,
    pub fl_round: u64,
    exports: BTreeMap<DeviceId, Arc<Export>>,
    sensors: BTreeMap<DeviceId, BTreeMap<String, FieldValue>>,
    bytes_sent: BTreeMap<DeviceId, u64>,
}

impl World {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            field_round: 0,
            fl_round: 0,
            exports: BTreeMap::new(),
            sensors: BTreeMap::new(),
            bytes_sent: BTreeMap::new(),
        }
    }

    pub fn export(&self, id: DeviceId) -> Option<&Export> {
        self.exports.get(&id).map(Arc::as_ref)
    }

    pub fn exports(&self) -> impl Iterator<Item = (DeviceId, &Export)> {
        self.exports.iter().map(|(k, v)| (*k, v.as_ref()))
    }

    pub fn set_sensor(&mut self, id: DeviceId, name: &str, value: FieldValue) {
        self.sensors.entry(id).or_default().insert(name.to_string(), value);
    }

    pub fn sensor(&self, id: DeviceId, name: &str) -> Option<&FieldValue> {
        self.sensors.get(&id).and_then(|s| s.get(name))
    }

    /// Cumulative model payload bytes sent by a device.
    pub fn bytes_sent(&self, id: DeviceId) -> u64 {
        self.bytes_sent.get(&id).copied().unwrap_or(0)
    }

    /// Context a live device would see in the next round.
    pub fn context(&self, id: DeviceId) -> Result<NodeContext, NetError> {
        let position = self.topology.position(id).ok_or(NetError::UnknownDevice(id))?;
        let mut ctx = NodeContext::new(id, self.field_round, position);
        for n in self.topology.neighbors(id) {
            ctx.neighbor_positions.insert(n, self.topology.position(n).unwrap());
            if let Some(e) = self.exports.get(&n) {
                ctx.neighbor_exports.insert(n, Arc::clone(e));
            }
        }
        ctx.prev = self.exports.get(&id).cloned();
        if let Some(s) = self.sensors.get(&id) {
            ctx.sensors = s.clone();
        }
        Ok(ctx)
    }

    pub fn step<P: Program + ?Sized>(&self, program: &P) -> Result<World, NetError> {
        step_field_round(self, program)
    }
}

/// Evaluates `program` on every live device against `world`'s exports and
/// installs the results atomically. Severed devices keep their frozen state
/// but nothing is delivered to or from them.
pub fn step_field_round<P: Program + ?Sized>(world: &World, program: &P) -> Result<World, NetError> {
    let mut next = world.clone();
    for id in world.topology.live_devices() {
        let ctx = world.context(id)?;
        let export = run_device(program, &ctx)?;
        let payload: u64 = export
            .slots
            .values()
            .filter_map(|v| match v {
                FieldValue::Bundle(b) => Some(b.iter().map(|(_, e)| e.model.len() as u64 * 8).sum::<u64>()),
                _ => None,
            })
            .sum();
        let fanout = world.topology.neighbors(id).count() as u64;
        *next.bytes_sent.entry(id).or_default() += payload * fanout;
        next.exports.insert(id, Arc::new(export));
    }
    next.field_round += 1;
    Ok(next)
}

/// Isolates `victims`: their links are cut and their state frozen.
pub fn inject_failure(world: &World, victims: &BTreeSet<DeviceId>) -> Result<World, NetError> {
    let mut next = world.clone();
    next.topology.sever(victims)?;
    Ok(next)
}

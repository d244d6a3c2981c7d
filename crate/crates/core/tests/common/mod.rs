#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fbfl_core::blocks::{elect, gradient, GradientSlots, Metric};
use fbfl_core::FieldError;
use fbfl_core::field::{DeviceId, FieldValue, Point, Program, RoundVm, SlotKey};
use fbfl_core::netsim::{Topology, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD: GradientSlots = GradientSlots {
    sources: SlotKey::new("g_sources"),
    potential: SlotKey::new("g_potential"),
};

/// Gradient from a fixed source set.
pub struct GradientProgram {
    pub sources: BTreeSet<DeviceId>,
    pub metric: Metric,
}

impl Program for GradientProgram {
    fn slots(&self) -> Vec<SlotKey> {
        GRAD.keys().to_vec()
    }

    fn run(&self, vm: &mut RoundVm<'_>) -> Result<(), FieldError> {
        let is_source = self.sources.contains(&vm.device());
        gradient(vm, GRAD, is_source, self.metric)?;
        Ok(())
    }
}

pub const LEADERS: SlotKey = SlotKey::new("e_leaders");
pub const LEADER: SlotKey = SlotKey::new("e_leader");

/// Election only; exports the chosen leader.
pub struct ElectProgram {
    pub radius: f64,
    pub metric: Metric,
}

impl Program for ElectProgram {
    fn slots(&self) -> Vec<SlotKey> {
        vec![LEADERS, LEADER]
    }

    fn run(&self, vm: &mut RoundVm<'_>) -> Result<(), FieldError> {
        let e = elect(vm, LEADERS, self.radius, self.metric)?;
        vm.share(LEADER, FieldValue::Device(Some(e.leader)))
    }
}

pub fn scalar(world: &World, d: DeviceId, key: SlotKey) -> f64 {
    world.export(d).unwrap().get(key).unwrap().scalar(key).unwrap()
}

pub fn device(world: &World, d: DeviceId, key: SlotKey) -> Option<DeviceId> {
    world.export(d).unwrap().get(key).unwrap().device(key).unwrap()
}

pub fn run_rounds<P: Program>(mut world: World, program: &P, rounds: usize) -> World {
    for _ in 0..rounds {
        world = world.step(program).unwrap();
    }
    world
}

/// Uniform points in a square, redrawn until the unit-disk graph is connected.
pub fn random_points(seed: u64, n: usize, side: f64, range: f64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect();
        if connected(&pts, range) {
            return pts;
        }
    }
}

fn linked(a: &Point, b: &Point, range: f64) -> bool {
    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    d <= range
}

fn connected(pts: &[Point], range: f64) -> bool {
    let mut seen = vec![false; pts.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..pts.len() {
            if !seen[j] && j != i && linked(&pts[i], &pts[j], range) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn weight(pts: &[Point], i: usize, j: usize, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => (pts[i].x - pts[j].x).hypot(pts[i].y - pts[j].y),
        Metric::Hops => 1.0,
    }
}

/// Plain O(n^2) Dijkstra from a source set over the unit-disk graph of
/// `pts`, skipping `dead` nodes. Returns `(distance, hops)` per node, hops
/// being the fewest edges among shortest paths.
pub fn dijkstra(
    pts: &[Point],
    range: f64,
    sources: &BTreeSet<usize>,
    dead: &BTreeSet<usize>,
    metric: Metric,
) -> Vec<(f64, usize)> {
    let n = pts.len();
    let mut dist = vec![(f64::INFINITY, usize::MAX); n];
    let mut done = vec![false; n];
    for &s in sources {
        dist[s] = (0.0, 0);
    }
    loop {
        let next = (0..n)
            .filter(|&i| !done[i] && !dead.contains(&i) && dist[i].0.is_finite())
            .min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap());
        let Some(u) = next else { break };
        done[u] = true;
        for v in 0..n {
            if v == u || done[v] || dead.contains(&v) || !linked(&pts[u], &pts[v], range) {
                continue;
            }
            let cand = (dist[u].0 + weight(pts, u, v, metric), dist[u].1 + 1);
            if cand < dist[v] {
                dist[v] = cand;
            }
        }
    }
    dist
}

/// Hop diameter by BFS from every node.
pub fn hop_diameter(pts: &[Point], range: f64) -> usize {
    let all: BTreeSet<usize> = BTreeSet::new();
    (0..pts.len())
        .map(|s| {
            dijkstra(pts, range, &[s].into_iter().collect(), &all, Metric::Hops)
                .into_iter()
                .map(|(_, h)| h)
                .max()
                .unwrap()
        })
        .max()
        .unwrap()
}

/// Reference sparse-choice fixpoint: ids in ascending order become leaders
/// unless an earlier leader lies within `radius`.
pub fn greedy_leaders(pts: &[Point], range: f64, radius: f64, metric: Metric) -> BTreeMap<usize, usize> {
    let none = BTreeSet::new();
    let mut leaders: Vec<(usize, Vec<(f64, usize)>)> = Vec::new();
    for d in 0..pts.len() {
        let dominated = leaders.iter().any(|(_, dist)| dist[d].0 <= radius);
        if !dominated {
            let dist = dijkstra(pts, range, &[d].into_iter().collect(), &none, metric);
            leaders.push((d, dist));
        }
    }
    (0..pts.len())
        .map(|d| {
            let best = leaders
                .iter()
                .filter(|(_, dist)| dist[d].0 <= radius)
                .min_by(|a, b| a.1[d].0.partial_cmp(&b.1[d].0).unwrap().then(a.0.cmp(&b.0)))
                .map_or(d, |(l, _)| *l);
            (d, best)
        })
        .collect()
}

pub fn topology(pts: &[Point], range: f64) -> Topology {
    Topology::from_points(pts, range).unwrap()
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fbfl_core::blocks::Metric;
use fbfl_core::data::{label_marginal, label_tv_distance, partition_dirichlet, partition_hard, partition_iid, Dataset};
use fbfl_core::experiment::{build_scenario, run_seed, AlgorithmKind, ExperimentConfig, FailureSection, PartitionKind};
use fbfl_core::fbfl::{assigned_leader, leaders, run_fbfl, FbflConfig, FbflProgram};
use fbfl_core::federation::MetricsRecord;
use fbfl_core::fedcentral::{
    run_centralized, scaffold_client_control_update, scaffold_server_update, scaffold_step, weighted_average,
    Algorithm, ScaffoldResult,
};
use fbfl_core::netsim::{inject_failure, ClusterLayout, FieldRatio, ScheduleConfig, World};
use fbfl_core::nn::{evaluate, grad_batch, init_model, MlpShape, ModelParams};
use fbfl_core::{DeviceId, Sample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ids(set: &BTreeSet<usize>) -> BTreeSet<DeviceId> {
    set.iter().map(|&i| DeviceId(i as u32)).collect()
}

/// 1. FBFL with a single region reproduces centralized FedAvg.
fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut cfg = ExperimentConfig::default();
        cfg.topology.devices = 10;
        cfg.data.regions = 1;
        cfg.data.classes = 3;
        cfg.data.features = 8;
        cfg.data.samples_per_device = 30;
        cfg.data.train_per_class = 150;
        cfg.train.epochs = 1;
        let (_, fed) = build_scenario(&cfg, seed).map_err(|e| e.to_string())?;
        let pts = random_points(seed, 10, 6.0, 2.5);
        let topo = topology(&pts, 2.5);
        let radius = topo.path_profile(Metric::Euclidean).weighted_diameter + 0.5;
        let fcfg = FbflConfig {
            radius,
            metric: Metric::Euclidean,
            schedule: ScheduleConfig {
                field_ratio: FieldRatio::Auto,
                warmup: None,
                max_fl_rounds: 10,
            },
            failure: None,
        };
        let run = run_fbfl(World::new(topo), &fed, &fcfg).map_err(|e| e.to_string())?;
        let central = run_centralized(Algorithm::FedAvg, &fed, 10).map_err(|e| e.to_string())?;
        for (t, models) in run.models.iter().enumerate() {
            if models.len() != 10 {
                return Err(format!("seed {seed} round {t}: {} devices", models.len()));
            }
            for m in models.values() {
                for (a, b) in m.as_slice().iter().zip(central.models[t].as_slice()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(worst <= 1e-6, format!("max |w_fbfl - w_fedavg| = {worst:e} over 5 seeds x 11 rounds x 10 devices"))
}

/// 2. Gradient equals Dijkstra after diameter + 1 rounds.
fn gradient_stabilization() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for g in 0..20u64 {
        let n = 10 + (g as usize * 7) % 21;
        let range = 3.0;
        let pts = random_points(1000 + g, n, 10.0, range);
        let diameter = hop_diameter(&pts, range);
        let srcs: BTreeSet<usize> = (0..1 + g as usize % 3).map(|i| (g as usize * 5 + i * 7) % n).collect();
        for metric in [Metric::Euclidean, Metric::Hops] {
            let oracle = dijkstra(&pts, range, &srcs, &BTreeSet::new(), metric);
            let program = GradientProgram {
                sources: ids(&srcs),
                metric,
            };
            let world = run_rounds(World::new(topology(&pts, range)), &program, diameter + 1);
            for (i, (d, _)) in oracle.iter().enumerate() {
                let got = scalar(&world, DeviceId(i as u32), GRAD.potential);
                let err = (got - d).abs();
                if err.is_nan() || err > 1e-12 {
                    let hops = oracle.iter().map(|(_, h)| *h).max().unwrap();
                    notes.push(format!("graph {g} {metric:?} node {i}: path hops {hops} > diameter {diameter}"));
                }
                worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
            }
        }
    }
    notes.dedup();
    check(
        worst <= 1e-12,
        format!("20 graphs, both metrics, max error {worst:e}{}", if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }),
    )
}

/// 3. Sparse choice on the four-cluster layout.
fn election_fixpoint() -> Outcome {
    let radius = 4.5;
    for seed in SEEDS {
        let scenario = ClusterLayout::grid(4, 50, 8.0, 1.5, 6.0).generate(seed).map_err(|e| e.to_string())?;
        let pts: Vec<_> = scenario.topology.devices().map(|d| scenario.topology.position(d).unwrap()).collect();
        let program = ElectProgram {
            radius,
            metric: Metric::Euclidean,
        };
        let mut world = run_rounds(World::new(scenario.topology.clone()), &program, 30);
        let snapshot = |w: &World| -> BTreeMap<DeviceId, DeviceId> {
            w.topology.devices().map(|d| (d, device(w, d, LEADER).unwrap())).collect()
        };
        let fix = snapshot(&world);
        let leader_set: BTreeSet<DeviceId> = fix.values().copied().collect();
        for c in 0..4 {
            let members = scenario.members(c);
            let in_cluster: BTreeSet<_> = leader_set.iter().filter(|l| members.contains(l)).collect();
            if in_cluster.len() != 1 {
                return Err(format!("seed {seed}: cluster {c} has {} leaders", in_cluster.len()));
            }
        }
        if leader_set.len() != 4 {
            return Err(format!("seed {seed}: {} leaders", leader_set.len()));
        }
        for (d, l) in &fix {
            let dist = dijkstra(&pts, 6.0, &[l.0 as usize].into_iter().collect(), &BTreeSet::new(), Metric::Euclidean);
            if dist[d.0 as usize].0 > radius {
                return Err(format!("seed {seed}: device {d} at {} from leader {l}", dist[d.0 as usize].0));
            }
        }
        for r in 0..50 {
            world = world.step(&program).map_err(|e| e.to_string())?;
            if snapshot(&world) != fix {
                return Err(format!("seed {seed}: assignment changed {r} rounds after fixpoint"));
            }
        }
    }
    Ok("5 layouts: 4 leaders, one per cluster, all devices within R, stable 50 rounds".into())
}

fn final_round(records: &[MetricsRecord]) -> u64 {
    records.iter().map(|r| r.round).max().unwrap_or(0)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn runs(cfg: &ExperimentConfig) -> Result<Vec<Vec<MetricsRecord>>, String> {
    SEEDS.iter().map(|&s| run_seed(cfg, s).map_err(|e| e.to_string())).collect()
}

fn mean_final_accuracy(runs: &[Vec<MetricsRecord>], region: Option<usize>) -> f64 {
    mean(runs.iter().map(|recs| {
        let last = final_round(recs);
        mean(
            recs.iter()
                .filter(|r| r.round == last && region.is_none_or(|g| r.region == g))
                .map(|r| r.val_accuracy),
        )
    }))
}

/// 4. IID parity between FBFL and FedAvg.
fn iid_parity() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.devices = 30;
    cfg.data.regions = 3;
    cfg.data.partition = PartitionKind::Iid;
    cfg.data.train_per_class = 300;
    cfg.data.samples_per_device = 100;
    cfg.rounds = 20;
    let fbfl = mean_final_accuracy(&runs(&cfg)?, None);
    cfg.algorithm = AlgorithmKind::Fedavg;
    let fedavg = mean_final_accuracy(&runs(&cfg)?, None);
    let gap = (fbfl - fedavg).abs();
    check(gap <= 0.05, format!("FBFL {fbfl:.4} vs FedAvg {fedavg:.4}, |gap| {gap:.4}"))
}

/// 5. Hard partition: regional models beat every global baseline.
fn non_iid_superiority() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.devices = 30;
    cfg.data.regions = 3;
    cfg.data.partition = PartitionKind::Hard;
    cfg.data.samples_per_device = 80;
    cfg.rounds = 20;
    let fbfl = runs(&cfg)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for alg in [AlgorithmKind::Fedavg, AlgorithmKind::Fedprox, AlgorithmKind::Scaffold] {
        cfg.algorithm = alg;
        let base = runs(&cfg)?;
        for region in 0..3 {
            let a = mean_final_accuracy(&fbfl, Some(region));
            let b = mean_final_accuracy(&base, Some(region));
            ok &= a - b >= 0.10;
            lines.push(format!("r{region} {}:{:.3}-{:.3}", alg.name(), a, b));
        }
    }
    check(ok, lines.join(" "))
}

/// 6. Killing two of four leaders.
fn resilience() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.devices = 50;
    cfg.data.regions = 4;
    cfg.data.partition = PartitionKind::Hard;
    cfg.data.samples_per_device = 40;
    cfg.rounds = 20;

    // (a) re-election on the field alone
    let mut max_rounds = 0;
    for seed in SEEDS {
        let (scenario, _) = build_scenario(&cfg, seed).map_err(|e| e.to_string())?;
        let program = FbflProgram::new(cfg.fbfl.radius, Metric::Euclidean);
        let world = run_rounds(World::new(scenario.topology.clone()), &program, 40);
        let mut current: Vec<DeviceId> = leaders(&world).into_iter().collect();
        if current.len() != 4 {
            return Err(format!("(a) seed {seed}: {} leaders before failure", current.len()));
        }
        current.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let victims: BTreeSet<DeviceId> = current.into_iter().take(2).collect();
        let mut world = inject_failure(&world, &victims).map_err(|e| e.to_string())?;
        let diameter = world.topology.hop_diameter().ok_or("(a) survivors disconnected")?;
        let mut settled = None;
        for r in 1..=diameter + 1 {
            world = world.step(&program).map_err(|e| e.to_string())?;
            let good = (0..4).all(|c| {
                let live: Vec<DeviceId> =
                    scenario.members(c).into_iter().filter(|d| !world.topology.is_severed(*d)).collect();
                let assigned: BTreeSet<Option<DeviceId>> =
                    live.iter().map(|d| world.export(*d).and_then(assigned_leader)).collect();
                match assigned.iter().next() {
                    Some(Some(l)) if assigned.len() == 1 => live.contains(l),
                    _ => false,
                }
            }) && leaders(&world).len() == 4;
            if good && settled.is_none() {
                settled = Some(r);
            } else if !good {
                settled = None;
            }
        }
        match settled {
            Some(r) => max_rounds = max_rounds.max(r),
            None => return Err(format!("(a) seed {seed}: not one leader per subregion within {} rounds", diameter + 1)),
        }
    }

    // (b), (c) on full runs
    let control = runs(&cfg)?;
    cfg.failure = Some(FailureSection { round: 10, leaders: 2 });
    let failed = runs(&cfg)?;
    let at = |rs: &[Vec<MetricsRecord>], round: u64, f: fn(&MetricsRecord) -> f64| {
        mean(rs.iter().map(|recs| mean(recs.iter().filter(|r| r.round == round).map(f))))
    };
    let leaders_at_10 = mean(failed.iter().map(|recs| recs.iter().filter(|r| r.round == 10 && r.is_leader).count() as f64));
    let leaders_at_11 = mean(failed.iter().map(|recs| recs.iter().filter(|r| r.round == 11 && r.is_leader).count() as f64));
    let acc_fail = at(&failed, 20, |r| r.val_accuracy);
    let acc_ctl = at(&control, 20, |r| r.val_accuracy);
    let l9 = at(&failed, 9, |r| r.train_loss);
    let l15 = at(&failed, 15, |r| r.train_loss);
    let l20 = at(&failed, 20, |r| r.train_loss);
    let b = (acc_fail - acc_ctl).abs() <= 0.05;
    let c = l15 < l9 && l20 <= l15;
    check(
        b && c,
        format!(
            "(a) settled within {max_rounds} rounds; leaders {leaders_at_10:.1} at round 10, {leaders_at_11:.1} at 11; \
             (b) acc {acc_fail:.4} vs control {acc_ctl:.4}; (c) loss r9 {l9:.4} r15 {l15:.4} r20 {l20:.4}"
        ),
    )
}

/// 7. Optimizer oracles.
fn optimizer_oracles() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.devices = 8;
    cfg.data.regions = 2;
    cfg.data.samples_per_device = 50;
    let (_, fed) = build_scenario(&cfg, 3).map_err(|e| e.to_string())?;
    let a = run_centralized(Algorithm::FedAvg, &fed, 5).map_err(|e| e.to_string())?;
    let p = run_centralized(Algorithm::FedProx { mu: 0.0 }, &fed, 5).map_err(|e| e.to_string())?;
    let prox_equal = a.models == p.models;

    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-12);
    let step = close(&scaffold_step(&[1.0], &[1.0], &[0.5], &[0.2], 0.1), &[0.87]);
    let quad = close(&scaffold_step(&[1.0], &[1.0], &[0.0], &[0.0], 0.1), &[0.9]);
    let ctl = close(&scaffold_client_control_update(&[0.0], &[1.0], &[0.0], 10, 0.1), &[-1.0]);
    let r = |y: f64| ScaffoldResult {
        model: vec![y],
        control_new: vec![0.0],
        control_old: vec![0.0],
    };
    let server = scaffold_server_update(&[0.0], &[0.0], &[r(0.0), r(2.0)], 1.0, 2)
        .map(|(x, _)| close(&x, &[1.0]))
        .unwrap_or(false);
    let avg1 = weighted_average(&[(&[0.0], 1), (&[4.0], 3)]).map(|w| w == [3.0]).unwrap_or(false);
    let avg2 = weighted_average(&[(&[1.0, 2.0], 2), (&[3.0, 4.0], 2)]).map(|w| w == [2.0, 3.0]).unwrap_or(false);
    check(
        prox_equal && step && quad && ctl && server && avg1 && avg2,
        format!(
            "fedprox(mu=0)==fedavg {prox_equal}; scaffold step {step}, quadratic {quad}, control {ctl}, server {server}; fedavg [3.0] {avg1}, [2,3] {avg2}"
        ),
    )
}

fn tagged_1000() -> Dataset {
    let samples = (0..1000)
        .map(|i| Sample {
            features: vec![i as f64],
            label: (i * 7 + i / 13) % 10,
        })
        .collect();
    Dataset::new(samples, 10)
}

fn exact(input: &Dataset, parts: &[Dataset]) -> bool {
    let mut seen = vec![0usize; input.len()];
    for p in parts {
        for s in &p.samples {
            let i = s.features[0] as usize;
            if input.samples[i].label != s.label {
                return false;
            }
            seen[i] += 1;
        }
    }
    seen.iter().all(|&c| c == 1)
}

/// 8. Partitioner properties.
fn partitioner_properties() -> Outcome {
    let ds = tagged_1000();
    let global = label_marginal(&ds.samples, 10);
    let mut worst_uniform: f64 = 0.0;
    let mut min_skew_tv = f64::INFINITY;
    for seed in SEEDS {
        let iid = partition_iid(&ds, 3, seed).map_err(|e| e.to_string())?;
        let hard = partition_hard(&ds, 3, seed).map_err(|e| e.to_string())?;
        let flat = partition_dirichlet(&ds, 3, 1e6, seed).map_err(|e| e.to_string())?;
        let skew = partition_dirichlet(&ds, 3, 0.1, seed).map_err(|e| e.to_string())?;
        for (name, parts) in [("iid", &iid), ("hard", &hard), ("dirichlet", &flat), ("dirichlet", &skew)] {
            if !exact(&ds, parts) {
                return Err(format!("seed {seed}: {name} is not an exact partition"));
            }
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let tv = label_tv_distance(&hard[a].samples, &hard[b].samples).map_err(|e| e.to_string())?;
                if (tv - 1.0).abs() > 1e-12 {
                    return Err(format!("seed {seed}: hard TV({a},{b}) = {tv}"));
                }
            }
        }
        for part in &flat {
            let m = label_marginal(&part.samples, 10);
            for (p, q) in m.iter().zip(&global) {
                worst_uniform = worst_uniform.max((p - q).abs() / q);
            }
        }
        let mut tvs = Vec::new();
        for a in 0..3 {
            for b in a + 1..3 {
                tvs.push(label_tv_distance(&skew[a].samples, &skew[b].samples).map_err(|e| e.to_string())?);
            }
        }
        min_skew_tv = min_skew_tv.min(mean(tvs));
    }
    check(
        worst_uniform <= 0.05 && min_skew_tv >= 0.4,
        format!(
            "exact partitions; hard TV = 1; alpha=1e6 max relative marginal deviation {worst_uniform:.4}; alpha=0.1 min mean pairwise TV {min_skew_tv:.4}"
        ),
    )
}

/// 9. Backprop against central finite differences.
fn gradient_correctness() -> Outcome {
    let shape = MlpShape::new(vec![6, 5, 3]).map_err(|e| e.to_string())?;
    let model = init_model(&shape, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch: Vec<Sample> = (0..8)
        .map(|_| Sample {
            features: (0..6).map(|_| rng.random_range(-1.5..1.5)).collect(),
            label: rng.random_range(0..3),
        })
        .collect();
    let analytic = grad_batch(&model, &batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.len() {
        let mut plus = model.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let loss = |w: Vec<f64>| evaluate(&ModelParams::from_vec(shape.clone(), w).unwrap(), &batch).unwrap().loss;
        let numeric = (loss(plus) - loss(minus)) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    check(worst <= 1e-4, format!("{} parameters, max relative error {worst:.2e}", model.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        (2, "gradient stabilization", Duration::from_secs(10), gradient_stabilization),
        (3, "election fixpoint", Duration::from_secs(10), election_fixpoint),
        (4, "IID parity", Duration::from_secs(300), iid_parity),
        (5, "non-IID superiority", Duration::from_secs(600), non_iid_superiority),
        (6, "resilience", Duration::from_secs(600), resilience),
        (7, "optimizer oracles", Duration::from_secs(60), optimizer_oracles),
        (8, "partitioner properties", Duration::from_secs(60), partitioner_properties),
        (9, "gradient correctness", Duration::from_secs(60), gradient_correctness),
    ];
    let mut failed = 0;
    for (n, name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {n} ({name}): {detail} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

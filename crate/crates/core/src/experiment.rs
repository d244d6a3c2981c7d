//! Experiment configuration, scenario construction, runs over seeds and
//! CSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::Metric;
use crate::data::{assign_devices, load_idx, Dataset, PartitionPlan, RegionSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::fbfl::{run_fbfl, FailurePlan, FbflConfig};
use crate::fedcentral::{run_centralized, Algorithm, ControlUpdate};
use crate::federation::{mix, Federation, MetricsRecord};
use crate::field::DeviceId;
use crate::netsim::{ClusterLayout, FieldRatio, Scenario, ScheduleConfig, World};
use crate::nn::{MlpShape, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fedavg,
    Fedprox,
    Scaffold,
    Fbfl,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Fedavg => "fedavg",
            AlgorithmKind::Fedprox => "fedprox",
            AlgorithmKind::Scaffold => "scaffold",
            AlgorithmKind::Fbfl => "fbfl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Emnist,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    Hops,
}

impl From<MetricKind> for Metric {
    fn from(m: MetricKind) -> Self {
        match m {
            MetricKind::Euclidean => Metric::Euclidean,
            MetricKind::Hops => Metric::Hops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Directory holding IDX files for the image datasets.
    pub dir: Option<PathBuf>,
    pub partition: PartitionKind,
    /// Dirichlet concentration.
    pub alpha: f64,
    pub regions: usize,
    pub samples_per_device: usize,
    /// Optional cap on the training pool (image datasets).
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Synthetic only.
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            dir: None,
            partition: PartitionKind::Iid,
            alpha: 0.5,
            regions: 3,
            samples_per_device: 100,
            train_subset: None,
            test_subset: None,
            classes: 10,
            features: 20,
            train_per_class: 300,
            test_per_class: 100,
            separation: 3.0,
            noise: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub devices: usize,
    /// Defaults to the number of data regions.
    pub clusters: Option<usize>,
    pub spacing: f64,
    pub jitter: f64,
    pub comm_range: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            devices: 30,
            clusters: None,
            spacing: 8.0,
            jitter: 1.5,
            comm_range: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 10,
            learning_rate: 0.1,
            hidden: vec![32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbflSection {
    pub radius: f64,
    pub metric: MetricKind,
    /// Field rounds per federated round; omitted means automatic.
    pub field_ratio: Option<usize>,
    pub warmup: Option<usize>,
}

impl Default for FbflSection {
    fn default() -> Self {
        Self {
            radius: 4.5,
            metric: MetricKind::Euclidean,
            field_ratio: None,
            warmup: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub mu: f64,
    pub global_lr: f64,
    pub control: ControlUpdate,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            mu: 0.1,
            global_lr: 1.0,
            control: ControlUpdate::OptionTwo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSection {
    pub round: usize,
    pub leaders: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmKind,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    pub train: TrainSection,
    pub fbfl: FbflSection,
    pub baselines: BaselineSection,
    pub failure: Option<FailureSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmKind::Fbfl,
            seeds: vec![1, 2, 3, 4, 5],
            rounds: 20,
            data: DataConfig::default(),
            topology: TopologyConfig::default(),
            train: TrainSection::default(),
            fbfl: FbflSection::default(),
            baselines: BaselineSection::default(),
            failure: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        let d = &self.data;
        if d.regions == 0 {
            return bad("data.regions must be at least 1".into());
        }
        if d.samples_per_device == 0 {
            return bad("data.samples_per_device must be at least 1".into());
        }
        if d.dataset == DatasetKind::Synthetic {
            if d.classes < 2 || d.features == 0 {
                return bad("data.classes must be >= 2 and data.features >= 1".into());
            }
            if d.partition == PartitionKind::Hard && d.regions > d.classes {
                return bad(format!(
                    "data.regions = {} exceeds data.classes = {} for a hard split",
                    d.regions, d.classes
                ));
            }
            if !(d.noise >= 0.0) || !d.separation.is_finite() {
                return bad("data.noise and data.separation must be finite, noise >= 0".into());
            }
        } else if d.dir.is_none() {
            return bad("data.dir is required for image datasets".into());
        }
        if d.partition == PartitionKind::Dirichlet && !(d.alpha > 0.0) {
            return bad(format!("data.alpha must be positive, got {}", d.alpha));
        }
        let t = &self.topology;
        if t.devices < d.regions {
            return bad(format!("topology.devices = {} is below data.regions = {}", t.devices, d.regions));
        }
        if t.clusters == Some(0) {
            return bad("topology.clusters must be at least 1".into());
        }
        if !(t.comm_range > 0.0) || !(t.jitter >= 0.0) || !(t.spacing >= 0.0) {
            return bad("topology: comm_range must be positive, jitter and spacing non-negative".into());
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return bad("train.batch_size and train.learning_rate must be positive".into());
        }
        if self.train.hidden.contains(&0) {
            return bad("train.hidden widths must be positive".into());
        }
        if !(self.fbfl.radius > 0.0) {
            return bad(format!("fbfl.radius must be positive, got {}", self.fbfl.radius));
        }
        if self.fbfl.field_ratio == Some(0) {
            return bad("fbfl.field_ratio must be at least 1".into());
        }
        if !(self.baselines.mu >= 0.0) || !(self.baselines.global_lr > 0.0) {
            return bad("baselines.mu must be >= 0 and baselines.global_lr > 0".into());
        }
        if let Some(f) = &self.failure {
            if f.round == 0 || f.round > self.rounds {
                return bad(format!("failure.round must lie in 1..={}", self.rounds));
            }
        }
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        self.topology.clusters.unwrap_or(self.data.regions)
    }

    fn algorithm(&self) -> Option<Algorithm> {
        match self.algorithm {
            AlgorithmKind::Fedavg => Some(Algorithm::FedAvg),
            AlgorithmKind::Fedprox => Some(Algorithm::FedProx { mu: self.baselines.mu }),
            AlgorithmKind::Scaffold => Some(Algorithm::Scaffold {
                global_lr: self.baselines.global_lr,
                control: self.baselines.control,
            }),
            AlgorithmKind::Fbfl => None,
        }
    }
}

fn idx_file(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

fn load_pools(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let spec = SynthSpec {
                classes: cfg.classes,
                per_class: cfg.train_per_class,
                features: cfg.features,
                separation: cfg.separation,
                noise: cfg.noise,
            };
            let means = spec.means(mix(seed, 10, 0));
            let train = spec.generate_with_means(&means, mix(seed, 11, 0));
            let test = SynthSpec {
                per_class: cfg.test_per_class,
                ..spec
            }
            .generate_with_means(&means, mix(seed, 12, 0));
            Ok((train, test))
        }
        _ => {
            let dir = cfg.dir.as_deref().expect("validated");
            let train = load_idx(
                &idx_file(dir, "train-images-idx3-ubyte"),
                &idx_file(dir, "train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(
                &idx_file(dir, "t10k-images-idx3-ubyte"),
                &idx_file(dir, "t10k-labels-idx1-ubyte"),
            )?;
            let train = match cfg.train_subset {
                Some(n) => train.subset(n, mix(seed, 13, 0)),
                None => train,
            };
            let test = match cfg.test_subset {
                Some(n) => test.subset(n, mix(seed, 14, 0)),
                None => test,
            };
            let classes = train.classes.max(test.classes);
            if cfg.partition == PartitionKind::Hard && cfg.regions > classes {
                return Err(Error::Config(format!(
                    "data.regions = {} exceeds the {classes} classes of the dataset",
                    cfg.regions
                )));
            }
            Ok((
                Dataset::new(train.samples, classes),
                Dataset::new(test.samples, classes),
            ))
        }
    }
}

/// Builds the deployment and the data federation for one seed.
pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<(Scenario, Federation)> {
    let t = &cfg.topology;
    let layout = ClusterLayout::grid(cfg.clusters(), t.devices, t.spacing, t.jitter, t.comm_range);
    let scenario = layout.generate(mix(seed, 20, 0))?;

    let d = &cfg.data;
    let (train, test) = load_pools(d, seed)?;
    let plan = match d.partition {
        PartitionKind::Iid => PartitionPlan::iid(d.regions)?,
        PartitionKind::Dirichlet => PartitionPlan::dirichlet(train.classes, d.regions, d.alpha, mix(seed, 21, 0))?,
        PartitionKind::Hard => PartitionPlan::hard(train.classes, d.regions)?,
    };
    let region_train = plan.apply(&train, mix(seed, 22, 0));
    let region_tests = plan.apply(&test, mix(seed, 23, 0));

    let region_of: BTreeMap<DeviceId, usize> = scenario
        .cluster_of
        .iter()
        .map(|(dev, c)| (*dev, c % d.regions))
        .collect();
    let specs: Vec<RegionSpec> = (0..d.regions)
        .map(|r| RegionSpec {
            region_id: r,
            members: region_of
                .iter()
                .filter(|(_, &x)| x == r)
                .map(|(dev, _)| *dev)
                .collect::<BTreeSet<_>>(),
        })
        .collect();
    let shards = assign_devices(&region_train, &specs, d.samples_per_device, mix(seed, 24, 0))?;

    let mut layers = vec![train.features()];
    layers.extend(&cfg.train.hidden);
    layers.push(train.classes);
    let fed = Federation {
        shards,
        region_of,
        region_tests,
        pooled_test: test,
        shape: MlpShape::new(layers)?,
        train: TrainConfig {
            epochs: cfg.train.epochs,
            batch_size: cfg.train.batch_size,
            learning_rate: cfg.train.learning_rate,
            seed,
        },
    };
    Ok((scenario, fed))
}

/// Runs the configured algorithm for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricsRecord>> {
    let (scenario, fed) = build_scenario(cfg, seed)?;
    match cfg.algorithm() {
        Some(alg) => Ok(run_centralized(alg, &fed, cfg.rounds)?.records),
        None => {
            let fcfg = FbflConfig {
                radius: cfg.fbfl.radius,
                metric: cfg.fbfl.metric.into(),
                schedule: ScheduleConfig {
                    field_ratio: cfg.fbfl.field_ratio.map_or(FieldRatio::Auto, FieldRatio::Fixed),
                    warmup: cfg.fbfl.warmup,
                    max_fl_rounds: cfg.rounds,
                },
                failure: cfg.failure.as_ref().map(|f| FailurePlan {
                    round: f.round,
                    leaders: f.leaders,
                    seed: mix(seed, 30, 0),
                }),
            };
            Ok(run_fbfl(World::new(scenario.topology), &fed, &fcfg)?.records)
        }
    }
}

pub fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(MetricsRecord::COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(MetricsRecord::COLUMNS.iter().copied()) {
        return Err(Error::Config(format!(
            "{}: unexpected columns {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub raw: Vec<PathBuf>,
    pub summary: Summary,
}

/// Runs every seed, writes `<algorithm>_seed<k>.csv` per seed, then
/// summarizes the directory.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut raw = Vec::new();
    for &seed in &cfg.seeds {
        let records = run_seed(cfg, seed)?;
        let path = out.join(format!("{}_seed{seed}.csv", cfg.algorithm.name()));
        write_records(&path, &records)?;
        raw.push(path);
    }
    let summary = summarize(out)?;
    Ok(ExperimentOutput { raw, summary })
}

/// Mean and sample standard deviation; the deviation is zero for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Metrics summarized per round.
pub const SUMMARY_METRICS: [&str; 6] = [
    "train_loss",
    "val_loss",
    "val_accuracy",
    "global_val_accuracy",
    "bytes_sent",
    "leaders",
];

/// Per-seed, per-round device means (leader count for `leaders`).
fn per_seed_round(records: &[MetricsRecord]) -> BTreeMap<(u64, u64), [f64; 6]> {
    let mut groups: BTreeMap<(u64, u64), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.seed, r.round)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let n = rs.len() as f64;
            let avg = |f: fn(&MetricsRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            (
                k,
                [
                    avg(|r| r.train_loss),
                    avg(|r| r.val_loss),
                    avg(|r| r.val_accuracy),
                    avg(|r| r.global_val_accuracy),
                    avg(|r| r.bytes_sent as f64),
                    rs.iter().filter(|r| r.is_leader).count() as f64,
                ],
            )
        })
        .collect()
}

/// Across-seed statistics for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: usize,
    /// `rows[round][metric] = (mean, std)` in [`SUMMARY_METRICS`] order.
    pub rows: BTreeMap<u64, Vec<(f64, f64)>>,
}

impl AlgorithmSummary {
    pub fn series(&self, metric: &str) -> Vec<f64> {
        let i = SUMMARY_METRICS.iter().position(|m| *m == metric).expect("known metric");
        self.rows.values().map(|r| r[i].0).collect()
    }
}

pub fn summarize_records(algorithm: &str, records: &[MetricsRecord]) -> AlgorithmSummary {
    let cells = per_seed_round(records);
    let seeds: BTreeSet<u64> = cells.keys().map(|(s, _)| *s).collect();
    let rounds: BTreeSet<u64> = cells.keys().map(|(_, r)| *r).collect();
    let rows = rounds
        .into_iter()
        .map(|round| {
            let stats = (0..SUMMARY_METRICS.len())
                .map(|m| {
                    let xs: Vec<f64> = seeds
                        .iter()
                        .filter_map(|s| cells.get(&(*s, round)).map(|c| c[m]))
                        .collect();
                    mean_std(&xs)
                })
                .collect();
            (round, stats)
        })
        .collect();
    AlgorithmSummary {
        algorithm: algorithm.to_string(),
        seeds: seeds.len(),
        rows,
    }
}

/// Direction check on a per-round mean series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trend {
    pub algorithm: String,
    pub metric: String,
    pub first: f64,
    pub last: f64,
    /// Largest single-round decrease.
    pub max_drop: f64,
    pub non_decreasing: bool,
    /// Last value better than the first: lower for losses, higher otherwise.
    pub improved: bool,
}

pub fn trend(algorithm: &str, metric: &str, series: &[f64]) -> Trend {
    let first = series.first().copied().unwrap_or(f64::NAN);
    let last = series.last().copied().unwrap_or(f64::NAN);
    let max_drop = series.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    Trend {
        algorithm: algorithm.to_string(),
        metric: metric.to_string(),
        first,
        last,
        max_drop,
        non_decreasing: max_drop == 0.0,
        improved: if metric.ends_with("loss") { last < first } else { last > first },
    }
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub algorithms: Vec<AlgorithmSummary>,
    pub trends: Vec<Trend>,
    pub files: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every `<algorithm>_seed<k>.csv` in `dir` and writes
/// `<algorithm>_aggregate.csv`, `plot_data.csv` and `trend.csv`.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let mut by_alg: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix(".csv") else { continue };
        if let Some((alg, seed)) = stem.rsplit_once("_seed") {
            if !seed.is_empty() && seed.chars().all(|c| c.is_ascii_digit()) {
                by_alg.entry(alg.to_string()).or_default().push(path);
            }
        }
    }
    if by_alg.is_empty() {
        return Err(Error::Config(format!("{}: no raw `*_seed<k>.csv` files", dir.display())));
    }

    let mut algorithms = Vec::new();
    let mut trends = Vec::new();
    let mut files = Vec::new();
    let plot_path = dir.join("plot_data.csv");
    let mut plot = csv::Writer::from_path(&plot_path)?;
    plot.write_record(["round", "metric", "mean", "std", "algorithm"])?;
    for (alg, mut paths) in by_alg {
        paths.sort();
        let mut records = Vec::new();
        for p in &paths {
            records.extend(read_records(p)?);
        }
        let summary = summarize_records(&alg, &records);

        let agg_path = dir.join(format!("{alg}_aggregate.csv"));
        let mut w = csv::Writer::from_path(&agg_path)?;
        let mut header = vec!["round".to_string(), "seeds".to_string()];
        for m in SUMMARY_METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for (round, stats) in &summary.rows {
            let mut row = vec![round.to_string(), summary.seeds.to_string()];
            for (i, (mean, std)) in stats.iter().enumerate() {
                row.push(mean.to_string());
                row.push(std.to_string());
                plot.write_record([
                    round.to_string(),
                    SUMMARY_METRICS[i].to_string(),
                    mean.to_string(),
                    std.to_string(),
                    alg.clone(),
                ])?;
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(&agg_path))?;
        files.push(agg_path);

        for metric in ["val_accuracy", "train_loss"] {
            trends.push(trend(&alg, metric, &summary.series(metric)));
        }
        algorithms.push(summary);
    }
    plot.flush().map_err(io_err(&plot_path))?;
    files.push(plot_path);

    let trend_path = dir.join("trend.csv");
    let mut w = csv::Writer::from_path(&trend_path)?;
    w.write_record(["algorithm", "metric", "first", "last", "max_drop", "non_decreasing", "improved"])?;
    for t in &trends {
        w.write_record([
            t.algorithm.clone(),
            t.metric.clone(),
            t.first.to_string(),
            t.last.to_string(),
            t.max_drop.to_string(),
            t.non_decreasing.to_string(),
            t.improved.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&trend_path))?;
    files.push(trend_path);

    Ok(Summary {
        algorithms,
        trends,
        files,
    })
}

//! Datasets, label-skew partitioning and shard assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::DataError;
use crate::field::DeviceId;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Samples plus the size of the label space they are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Self {
        Self { samples, classes }
    }

    /// Infers the label space as `max label + 1`.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        Self { samples, classes }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.samples, self.classes)
    }

    /// First `n` samples after a seeded shuffle.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        Dataset::new(idx.into_iter().map(|i| self.samples[i].clone()).collect(), self.classes)
    }
}

fn class_counts(samples: &[Sample], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for s in samples {
        if s.label >= counts.len() {
            counts.resize(s.label + 1, 0);
        }
        counts[s.label] += 1;
    }
    counts
}

/// One device's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub owner: DeviceId,
    pub samples: Vec<Sample>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    pub region_id: usize,
    pub members: BTreeSet<DeviceId>,
}

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl IdxReader<'_> {
    fn fail(&self, message: impl Into<String>) -> DataError {
        DataError::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.fail("truncated header"))?;
        let v = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        self.pos += 4;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<(), DataError> {
        let m = self.u32()?;
        if m != expected {
            self.pos -= 4;
            return Err(self.fail(format!("bad magic {m}, expected {expected}")));
        }
        Ok(())
    }

    fn body(&mut self, len: usize) -> Result<&[u8], DataError> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            self.pos = self.bytes.len();
            return Err(self.fail(format!("truncated data, {len} bytes expected")));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Parses a pair of big-endian IDX files (optionally gzip-compressed).
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = read_maybe_gz(images_path)?;
    let mut images = IdxReader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    images.magic(IMAGE_MAGIC)?;
    let n_images = images.u32()? as usize;
    let rows = images.u32()? as usize;
    let cols = images.u32()? as usize;
    let m = rows * cols;
    let pixels = images.body(n_images * m)?;

    let label_bytes = read_maybe_gz(labels_path)?;
    let mut labels = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    labels.magic(LABEL_MAGIC)?;
    let n_labels = labels.u32()? as usize;
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let label_data = labels.body(n_labels)?;

    let samples = pixels
        .chunks(m.max(1))
        .take(n_images)
        .zip(label_data)
        .map(|(px, &label)| Sample {
            features: px.iter().map(|&p| p as f64 / 255.0).collect(),
            label: label as usize,
        })
        .collect();
    Ok(Dataset::from_samples(samples))
}

/// Gaussian-blob classification data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub features: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    /// Per-feature noise standard deviation.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, features: usize) -> Self {
        Self {
            classes,
            per_class,
            features,
            separation: 3.0,
            noise: 1.0,
        }
    }

    /// Class means: scaled basis vectors when there are enough features,
    /// otherwise random directions. Means depend on `means_seed` only so that
    /// train and test draws can share them.
    pub fn means(&self, means_seed: u64) -> Vec<Vec<f64>> {
        if self.features >= self.classes {
            return (0..self.classes)
                .map(|c| {
                    let mut v = vec![0.0; self.features];
                    v[c] = self.separation;
                    v
                })
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(means_seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.features).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * self.separation / norm).collect()
            })
            .collect()
    }

    pub fn generate_with_means(&self, means: &[Vec<f64>], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise.max(0.0)).unwrap();
        let mut samples = Vec::with_capacity(self.classes * self.per_class);
        for _ in 0..self.per_class {
            for (label, mean) in means.iter().enumerate() {
                let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
                samples.push(Sample { features, label });
            }
        }
        Dataset::new(samples, self.classes)
    }

    pub fn generate(&self, seed: u64) -> Dataset {
        self.generate_with_means(&self.means(seed), seed)
    }
}

pub fn synth_dataset(classes: usize, per_class: usize, features: usize, seed: u64) -> Dataset {
    SynthSpec::new(classes, per_class, features).generate(seed)
}

/// How a dataset is split into regions; reusable on held-out data.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionPlan {
    Iid { regions: usize },
    /// `proportions[c][a]`: share of class `c` that goes to region `a`.
    Dirichlet { proportions: Vec<Vec<f64>> },
    /// Label pool of each region.
    Hard { pools: Vec<Vec<usize>> },
}

impl PartitionPlan {
    pub fn regions(&self) -> usize {
        match self {
            PartitionPlan::Iid { regions } => *regions,
            PartitionPlan::Dirichlet { proportions } => proportions.first().map_or(0, Vec::len),
            PartitionPlan::Hard { pools } => pools.len(),
        }
    }

    pub fn iid(regions: usize) -> Result<Self, DataError> {
        if regions == 0 {
            return Err(DataError::InvalidPartition("need at least one region".into()));
        }
        Ok(PartitionPlan::Iid { regions })
    }

    /// Per-class Dirichlet(alpha) proportions over `regions`.
    pub fn dirichlet(classes: usize, regions: usize, alpha: f64, seed: u64) -> Result<Self, DataError> {
        if regions == 0 || !(alpha > 0.0) {
            return Err(DataError::InvalidPartition(format!(
                "dirichlet needs regions >= 1 and alpha > 0 (regions={regions}, alpha={alpha})"
            )));
        }
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| DataError::InvalidPartition(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proportions = (0..classes)
            .map(|_| loop {
                let draws: Vec<f64> = (0..regions).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                if total > 0.0 && total.is_finite() {
                    break draws.into_iter().map(|g| g / total).collect();
                }
            })
            .collect();
        Ok(PartitionPlan::Dirichlet { proportions })
    }

    /// Classes split into `regions` contiguous groups, sizes differing by at most one.
    pub fn hard(classes: usize, regions: usize) -> Result<Self, DataError> {
        if regions == 0 || regions > classes {
            return Err(DataError::InvalidPartition(format!(
                "hard split needs 1 <= regions <= classes (regions={regions}, classes={classes})"
            )));
        }
        let base = classes / regions;
        let extra = classes % regions;
        let mut next = 0;
        let pools = (0..regions)
            .map(|a| {
                let size = base + usize::from(a < extra);
                let pool: Vec<usize> = (next..next + size).collect();
                next += size;
                pool
            })
            .collect();
        Ok(PartitionPlan::Hard { pools })
    }

    /// Splits `dataset` into one dataset per region. The output is an exact
    /// partition of the input.
    pub fn apply(&self, dataset: &Dataset, seed: u64) -> Vec<Dataset> {
        let regions = self.regions();
        let mut buckets: Vec<Vec<Sample>> = vec![Vec::new(); regions];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            PartitionPlan::Iid { .. } => {
                let mut idx: Vec<usize> = (0..dataset.len()).collect();
                idx.shuffle(&mut rng);
                let counts = largest_remainder(&vec![1.0 / regions as f64; regions], dataset.len());
                let mut it = idx.into_iter();
                for (bucket, n) in buckets.iter_mut().zip(counts) {
                    bucket.extend(it.by_ref().take(n).map(|i| dataset.samples[i].clone()));
                }
            }
            PartitionPlan::Dirichlet { proportions } => {
                for (class, props) in proportions.iter().enumerate() {
                    let mut idx: Vec<usize> = dataset
                        .samples
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.label == class)
                        .map(|(i, _)| i)
                        .collect();
                    idx.shuffle(&mut rng);
                    let counts = largest_remainder(props, idx.len());
                    let mut it = idx.into_iter();
                    for (bucket, n) in buckets.iter_mut().zip(counts) {
                        bucket.extend(it.by_ref().take(n).map(|i| dataset.samples[i].clone()));
                    }
                }
                // labels outside the planned class range go to region 0
                buckets[0].extend(
                    dataset
                        .samples
                        .iter()
                        .filter(|s| s.label >= proportions.len())
                        .cloned(),
                );
            }
            PartitionPlan::Hard { pools } => {
                let region_of: BTreeMap<usize, usize> = pools
                    .iter()
                    .enumerate()
                    .flat_map(|(a, pool)| pool.iter().map(move |&c| (c, a)))
                    .collect();
                for s in &dataset.samples {
                    let a = region_of.get(&s.label).copied().unwrap_or(regions - 1);
                    buckets[a].push(s.clone());
                }
            }
        }
        buckets
            .into_iter()
            .map(|samples| Dataset::new(samples, dataset.classes))
            .collect()
    }
}

/// Integer counts summing to `total`, proportional to `shares`: floors
/// first, then the remaining units to the largest fractional parts (ties
/// to the lower index).
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn partition_iid(dataset: &Dataset, regions: usize, seed: u64) -> Result<Vec<Dataset>, DataError> {
    Ok(PartitionPlan::iid(regions)?.apply(dataset, seed))
}

pub fn partition_dirichlet(
    dataset: &Dataset,
    regions: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset>, DataError> {
    Ok(PartitionPlan::dirichlet(dataset.classes, regions, alpha, seed)?.apply(dataset, seed.wrapping_add(1)))
}

pub fn partition_hard(dataset: &Dataset, regions: usize, seed: u64) -> Result<Vec<Dataset>, DataError> {
    Ok(PartitionPlan::hard(dataset.classes, regions)?.apply(dataset, seed))
}

/// Draws `samples_per_device` samples without replacement from each
/// device's region dataset.
pub fn assign_devices(
    region_datasets: &[Dataset],
    regions: &[RegionSpec],
    samples_per_device: usize,
    seed: u64,
) -> Result<BTreeMap<DeviceId, Shard>, DataError> {
    let mut shards = BTreeMap::new();
    for spec in regions {
        let data = region_datasets.get(spec.region_id).ok_or_else(|| {
            DataError::InvalidPartition(format!("no dataset for region {}", spec.region_id))
        })?;
        let needed = samples_per_device * spec.members.len();
        if data.len() < needed {
            return Err(DataError::Insufficient {
                region: spec.region_id,
                available: data.len(),
                needed,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (spec.region_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        for (k, &owner) in spec.members.iter().enumerate() {
            let samples = idx[k * samples_per_device..(k + 1) * samples_per_device]
                .iter()
                .map(|&i| data.samples[i].clone())
                .collect();
            shards.insert(owner, Shard { owner, samples });
        }
    }
    Ok(shards)
}

/// Empirical label distribution.
pub fn label_marginal(samples: &[Sample], classes: usize) -> Vec<f64> {
    let counts = class_counts(samples, classes);
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Total variation distance between the empirical label marginals of two
/// sample sets.
pub fn label_tv_distance(a: &[Sample], b: &[Sample]) -> Result<f64, DataError> {
    if a.is_empty() || b.is_empty() {
        return Err(DataError::Empty);
    }
    let classes = a.iter().chain(b).map(|s| s.label + 1).max().unwrap_or(0);
    let pa = label_marginal(a, classes);
    let pb = label_marginal(b, classes);
    Ok(0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(labels: &[usize]) -> Vec<Sample> {
        labels
            .iter()
            .map(|&label| Sample {
                features: vec![label as f64],
                label,
            })
            .collect()
    }

    #[test]
    fn tv_distance_cases() {
        let a = labelled(&[0, 1, 2, 0]);
        assert_eq!(label_tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(label_tv_distance(&labelled(&[0, 1]), &labelled(&[2, 3])).unwrap(), 1.0);
        let tv = label_tv_distance(&labelled(&[0, 1]), &labelled(&[1, 2])).unwrap();
        assert!((tv - 0.5).abs() < 1e-15);
        assert!(label_tv_distance(&[], &a).is_err());
    }

    #[test]
    fn hard_pools() {
        let PartitionPlan::Hard { pools } = PartitionPlan::hard(10, 5).unwrap() else {
            unreachable!()
        };
        assert_eq!(pools, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        let PartitionPlan::Hard { pools } = PartitionPlan::hard(27, 6).unwrap() else {
            unreachable!()
        };
        let sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4, 4]);
        let PartitionPlan::Hard { pools } = PartitionPlan::hard(4, 1).unwrap() else {
            unreachable!()
        };
        assert_eq!(pools, vec![vec![0, 1, 2, 3]]);
        assert!(PartitionPlan::hard(10, 12).is_err());
    }

    #[test]
    fn single_region_is_whole_dataset() {
        let d = synth_dataset(3, 10, 4, 1);
        let mut got = partition_dirichlet(&d, 1, 0.5, 2).unwrap().remove(0).samples;
        let key = |s: &Sample| (s.label, s.features.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        got.sort_by_key(key);
        let mut want = d.samples.clone();
        want.sort_by_key(key);
        assert_eq!(got, want);
        assert_eq!(partition_hard(&d, 1, 0).unwrap()[0].len(), 30);
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 2).iter().sum::<usize>(), 2);
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let d = synth_dataset(3, 100, 5, 4);
        assert_eq!(d.len(), 300);
        assert_eq!(d.class_counts(), vec![100, 100, 100]);
        assert_eq!(d, synth_dataset(3, 100, 5, 4));
        assert_ne!(d, synth_dataset(3, 100, 5, 5));
    }

    #[test]
    fn assignment_disjoint_and_exhaustive() {
        let d = Dataset::from_samples(labelled(&(0..20).map(|i| i % 4).collect::<Vec<_>>()));
        let spec = RegionSpec {
            region_id: 0,
            members: BTreeSet::from([DeviceId(0), DeviceId(1)]),
        };
        let shards = assign_devices(std::slice::from_ref(&d), std::slice::from_ref(&spec), 10, 3).unwrap();
        let mut all: Vec<f64> = shards.values().flat_map(|s| s.samples.iter().map(|x| x.features[0])).collect();
        all.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = d.samples.iter().map(|s| s.features[0]).collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(all, want);
        let err = assign_devices(&[d], &[spec], 11, 3).unwrap_err();
        assert!(matches!(err, DataError::Insufficient { region: 0, .. }));
    }

    #[test]
    fn same_hard_region_shares_label_pool() {
        let d = synth_dataset(10, 40, 10, 1);
        let regions = partition_hard(&d, 5, 2).unwrap();
        let specs: Vec<RegionSpec> = (0..5)
            .map(|a| RegionSpec {
                region_id: a,
                members: BTreeSet::from([DeviceId(2 * a as u32), DeviceId(2 * a as u32 + 1)]),
            })
            .collect();
        let shards = assign_devices(&regions, &specs, 30, 4).unwrap();
        for a in 0..5u32 {
            let pool = BTreeSet::from([2 * a as usize, 2 * a as usize + 1]);
            for d in [2 * a, 2 * a + 1] {
                let labels: BTreeSet<usize> = shards[&DeviceId(d)].samples.iter().map(|s| s.label).collect();
                assert_eq!(labels, pool);
            }
        }
    }
}

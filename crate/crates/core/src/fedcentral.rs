//! Centralized baselines: FedAvg, FedProx and Scaffold with full
//! participation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{FedError, NnError};
use crate::federation::{Evaluator, Federation, MetricsRecord, Placement};
use crate::field::DeviceId;
use crate::nn::{grad_batch, sgd_epochs, ModelParams};

/// Weighted average of raw parameter vectors with weights `n_k / sum n`,
/// summed in the given order.
pub fn weighted_average(entries: &[(&[f64], usize)]) -> Result<Vec<f64>, FedError> {
    let (first, _) = entries.first().ok_or(FedError::Empty)?;
    let p = first.len();
    if entries.iter().any(|(w, _)| w.len() != p) {
        return Err(FedError::ShapeMismatch);
    }
    let total: usize = entries.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FedError::Config("total sample count is zero".into()));
    }
    let total = total as f64;
    let mut acc = vec![0.0; p];
    for (w, n) in entries {
        let alpha = *n as f64 / total;
        for (a, x) in acc.iter_mut().zip(w.iter()) {
            *a += alpha * x;
        }
    }
    Ok(acc)
}

/// Data-size weighted model average.
pub fn fedavg_aggregate(entries: &[(&ModelParams, usize)]) -> Result<ModelParams, FedError> {
    let (first, _) = entries.first().ok_or(FedError::Empty)?;
    if entries.iter().any(|(m, _)| m.shape() != first.shape()) {
        return Err(FedError::ShapeMismatch);
    }
    let raw: Vec<(&[f64], usize)> = entries.iter().map(|(m, n)| (m.as_slice(), *n)).collect();
    let w = weighted_average(&raw)?;
    Ok(ModelParams::from_vec(first.shape().clone(), w)?)
}

/// Adds the proximal term `mu * (w - w0)` to `grad` in place.
pub fn add_proximal(grad: &mut [f64], w: &[f64], w0: &[f64], mu: f64) {
    if mu == 0.0 {
        return;
    }
    for ((g, a), b) in grad.iter_mut().zip(w).zip(w0) {
        *g += mu * (a - b);
    }
}

/// Gradient of the FedProx local objective on one batch.
pub fn fedprox_grad(
    w: &ModelParams,
    w_round_start: &ModelParams,
    batch: &[Sample],
    mu: f64,
) -> Result<Vec<f64>, FedError> {
    if mu < 0.0 {
        return Err(FedError::Config(format!("mu must be non-negative, got {mu}")));
    }
    let mut g = grad_batch(w, batch)?;
    add_proximal(&mut g, w.as_slice(), w_round_start.as_slice(), mu);
    Ok(g)
}

/// `y - eta * (g + c - c_i)`.
pub fn scaffold_step(y: &[f64], g: &[f64], c: &[f64], c_i: &[f64], eta: f64) -> Vec<f64> {
    y.iter()
        .zip(g)
        .zip(c.iter().zip(c_i))
        .map(|((y, g), (c, ci))| y - eta * (g + c - ci))
        .collect()
}

/// One corrected SGD step on a batch.
pub fn scaffold_local_step(
    y: &ModelParams,
    batch: &[Sample],
    c: &[f64],
    c_i: &[f64],
    eta: f64,
) -> Result<ModelParams, FedError> {
    if c.len() != y.len() || c_i.len() != y.len() {
        return Err(FedError::ShapeMismatch);
    }
    let g = grad_batch(y, batch)?;
    let next = scaffold_step(y.as_slice(), &g, c, c_i, eta);
    Ok(ModelParams::from_vec(y.shape().clone(), next)?)
}

/// Option II control update: `c_i - (x - y_i) / (K * eta)`.
pub fn scaffold_client_control_update(c_i: &[f64], x: &[f64], y_i: &[f64], steps: usize, eta: f64) -> Vec<f64> {
    let scale = 1.0 / (steps as f64 * eta);
    c_i.iter()
        .zip(x.iter().zip(y_i))
        .map(|(c, (x, y))| c - scale * (x - y))
        .collect()
}

/// Drift-tracking control update `c_i - c + (x - y_i) / (K * eta)`. Unlike
/// [`scaffold_client_control_update`] its sign agrees with `c_i+ = g_i(x)`:
/// on a constant gradient `g` with `c = c_i = 0` it returns `g`.
pub fn scaffold_drift_control(c_i: &[f64], c: &[f64], x: &[f64], y_i: &[f64], steps: usize, eta: f64) -> Vec<f64> {
    let scale = 1.0 / (steps as f64 * eta);
    c_i.iter()
        .zip(c)
        .zip(x.iter().zip(y_i))
        .map(|((ci, c), (x, y))| ci - c + scale * (x - y))
        .collect()
}

/// One client's contribution to the Scaffold server step.
#[derive(Debug, Clone)]
pub struct ScaffoldResult {
    pub model: Vec<f64>,
    pub control_new: Vec<f64>,
    pub control_old: Vec<f64>,
}

/// Server update: `x + eta_g * mean(y_i - x)` and `c + sum(c_i+ - c_i) / N`.
pub fn scaffold_server_update(
    x: &[f64],
    c: &[f64],
    results: &[ScaffoldResult],
    eta_g: f64,
    total_clients: usize,
) -> Result<(Vec<f64>, Vec<f64>), FedError> {
    if results.is_empty() {
        return Err(FedError::Empty);
    }
    if total_clients == 0 {
        return Err(FedError::Config("client count is zero".into()));
    }
    let p = x.len();
    if c.len() != p
        || results
            .iter()
            .any(|r| r.model.len() != p || r.control_new.len() != p || r.control_old.len() != p)
    {
        return Err(FedError::ShapeMismatch);
    }
    let s = results.len() as f64;
    let n = total_clients as f64;
    let mut dx = vec![0.0; p];
    let mut dc = vec![0.0; p];
    for r in results {
        for j in 0..p {
            dx[j] += r.model[j] - x[j];
            dc[j] += r.control_new[j] - r.control_old[j];
        }
    }
    let x_new = x.iter().zip(&dx).map(|(x, d)| x + eta_g * d / s).collect();
    let c_new = c.iter().zip(&dc).map(|(c, d)| c + d / n).collect();
    Ok((x_new, c_new))
}

/// Which client control update Scaffold uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUpdate {
    /// `c_i+ = g_i(x)`, a full-shard gradient at the server model.
    OptionOne,
    /// `c_i+ = c_i - c + (x - y_i) / (K * eta)`.
    #[default]
    OptionTwo,
    /// `c_i+ = c_i - (x - y_i) / (K * eta)`, the sign-flipped variant.
    OptionTwoFlipped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    Scaffold { global_lr: f64, control: ControlUpdate },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::Scaffold { .. } => "scaffold",
        }
    }

    /// Parameter vectors exchanged per client per round (down plus up).
    fn vectors_per_round(&self) -> u64 {
        match self {
            Algorithm::Scaffold { .. } => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: ModelParams,
    /// Server control variate; empty unless running Scaffold.
    pub control: Vec<f64>,
    pub round: u64,
    pub global_lr: f64,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub device: DeviceId,
    pub control: Vec<f64>,
}

/// Result of a centralized run.
#[derive(Debug, Clone)]
pub struct CentralRun {
    pub records: Vec<MetricsRecord>,
    /// Global model at the start of each round, `0..=rounds`.
    pub models: Vec<Arc<ModelParams>>,
}

/// Runs `rounds` rounds of distribute, train locally, aggregate.
pub fn run_centralized(algorithm: Algorithm, fed: &Federation, rounds: usize) -> Result<CentralRun, FedError> {
    if fed.shards.is_empty() {
        return Err(FedError::Empty);
    }
    match algorithm {
        Algorithm::FedProx { mu } if mu < 0.0 => {
            return Err(FedError::Config(format!("mu must be non-negative, got {mu}")));
        }
        Algorithm::Scaffold { global_lr, .. } if !(global_lr > 0.0) => {
            return Err(FedError::Config(format!("global_lr must be positive, got {global_lr}")));
        }
        _ => {}
    }
    let x0 = fed.initial_model();
    let p = x0.len();
    let mut server = ServerState {
        model: x0,
        control: match algorithm {
            Algorithm::Scaffold { .. } => vec![0.0; p],
            _ => Vec::new(),
        },
        round: 0,
        global_lr: match algorithm {
            Algorithm::Scaffold { global_lr, .. } => global_lr,
            _ => 1.0,
        },
    };
    let mut clients: BTreeMap<DeviceId, ClientState> = fed
        .devices()
        .map(|d| {
            (
                d,
                ClientState {
                    device: d,
                    control: vec![0.0; p],
                },
            )
        })
        .collect();
    let n_clients = clients.len();
    let round_bytes = algorithm.vectors_per_round() * fed.bytes_per_model();

    let mut records = Vec::new();
    let mut models = Vec::with_capacity(rounds + 1);
    let mut eval = Evaluator::new();
    for t in 0..=rounds as u64 {
        let global = Arc::new(server.model.clone());
        eval.clear();
        for d in fed.devices() {
            let placement = Placement {
                leader: None,
                is_leader: false,
                region_size: n_clients,
                bytes_sent: if t == 0 { 0 } else { round_bytes },
            };
            records.push(eval.record(fed, t, d, &global, placement)?);
        }
        models.push(global);
        if t == rounds as u64 {
            break;
        }

        let x = server.model.clone();
        match algorithm {
            Algorithm::FedAvg | Algorithm::FedProx { .. } => {
                let mu = match algorithm {
                    Algorithm::FedProx { mu } => mu,
                    _ => 0.0,
                };
                let mut trained = Vec::with_capacity(n_clients);
                for (d, shard) in &fed.shards {
                    let cfg = fed.train_config(*d, t);
                    let (y, _) = sgd_epochs(&x, &shard.samples, &cfg, |w, g| add_proximal(g, w, x.as_slice(), mu))?;
                    trained.push((y, shard.len()));
                }
                let refs: Vec<(&ModelParams, usize)> = trained.iter().map(|(m, n)| (m, *n)).collect();
                server.model = fedavg_aggregate(&refs)?;
            }
            Algorithm::Scaffold { global_lr, control } => {
                let c = server.control.clone();
                let mut results = Vec::with_capacity(n_clients);
                for (d, shard) in &fed.shards {
                    let client = clients.get_mut(d).expect("client per shard");
                    let cfg = fed.train_config(*d, t);
                    let c_i = client.control.clone();
                    let (y, steps) = sgd_epochs(&x, &shard.samples, &cfg, |_, g| {
                        for ((g, c), ci) in g.iter_mut().zip(&c).zip(&c_i) {
                            *g += c - ci;
                        }
                    })?;
                    let control_new = match control {
                        ControlUpdate::OptionTwo if steps > 0 => {
                            scaffold_drift_control(&c_i, &c, x.as_slice(), y.as_slice(), steps, cfg.learning_rate)
                        }
                        ControlUpdate::OptionTwoFlipped if steps > 0 => {
                            scaffold_client_control_update(&c_i, x.as_slice(), y.as_slice(), steps, cfg.learning_rate)
                        }
                        ControlUpdate::OptionTwo | ControlUpdate::OptionTwoFlipped => c_i.clone(),
                        ControlUpdate::OptionOne => grad_batch(&x, &shard.samples)?,
                    };
                    client.control = control_new.clone();
                    results.push(ScaffoldResult {
                        model: y.into_vec(),
                        control_new,
                        control_old: c_i,
                    });
                }
                let (x_new, c_new) = scaffold_server_update(x.as_slice(), &c, &results, global_lr, n_clients)?;
                server.model = ModelParams::from_vec(x.shape().clone(), x_new).map_err(|e| match e {
                    NnError::NonFinite(i) => FedError::Config(format!("Scaffold diverged at parameter {i}")),
                    other => FedError::Nn(other),
                })?;
                server.control = c_new;
            }
        }
        server.round += 1;
    }
    Ok(CentralRun { records, models })
}

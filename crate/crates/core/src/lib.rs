//! Field-based federated learning on a simulated device network.
//!
//! Devices run a field program each round ([`field`], [`blocks`]) on a
//! unit-disk network ([`netsim`]). [`fbfl`] builds self-organizing regions on
//! top of it and federates small MLPs ([`nn`]) within each region;
//! [`fedcentral`] holds the centralized baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod blocks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fbfl;
pub mod federation;
pub mod fedcentral;
pub mod field;
pub mod netsim;
pub mod nn;

pub use blocks::{Metric, Potential};
pub use data::{Dataset, Sample, Shard};
pub use error::{DataError, Error, FedError, FieldError, NetError, NnError, Result};
pub use experiment::ExperimentConfig;
pub use federation::{Federation, MetricsRecord};
pub use field::{DeviceId, Export, FieldValue, ModelBundle, Point, SlotKey};
pub use netsim::{Topology, World};
pub use nn::{MlpShape, ModelParams, TrainConfig};

//! Deterministic simulator for Byzantine-robust, personalization-capable
//! federated learning.
//!
//! The library provides:
//!
//! - flat-parameter softmax-regression / one-hidden-layer models with manual
//!   gradients ([`model`]);
//! - synthetic Gaussian-cluster datasets with pathological, dominant-mix,
//!   and IID client partitions ([`data`]);
//! - client-side training, including proximal personalized training
//!   ([`client`]);
//! - an untargeted poisoning attack suite: label flipping, sign flipping,
//!   model replacement, LIE, Min-Max, Min-Sum, and inner-product
//!   manipulation ([`attack`]);
//! - baseline robust aggregation rules and the bucketing/splitting wrappers
//!   ([`aggregation`]);
//! - the customized-aggregation server with recovery, calibration,
//!   norm-based detection, and a permanent blacklist ([`server`]);
//! - detection/utility metrics ([`metrics`]), an INI-style config layer
//!   ([`config`]), artifact formats ([`io`]), and the experiment runner
//!   ([`runner`]).
//!
//! Every run is a pure function of its configuration: all randomness is
//! derived from the single run seed through named sub-streams ([`seeds`]),
//! and artifacts are byte-identical across reruns.

pub mod aggregation;
pub mod attack;
pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod seeds;
pub mod server;

pub use aggregation::ClientUpdate;
pub use attack::{AttackContext, AttackKind, AttackSpec, BenignView, Knowledge};
pub use client::{ClientId, ClientRecord, LocalConfig};
pub use config::{ExperimentConfig, Method, Wrapper};
pub use data::{ClientShards, DatasetSpec, PartitionPlan, PartitionScheme};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, DetectionMetrics, ModelChoice};
pub use model::{Batch, ModelArch, ParamVector};
pub use runner::{RunArtifacts, RunSummary};
pub use server::{CustomizationParams, RoundReport, ServerState, Verdict};

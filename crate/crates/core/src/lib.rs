//! Graph foundation modeling over homogeneous and heterogeneous
//! text-attributed graphs.
//!
//! The pipeline: typed graphs are ingested ([`graph_store`]), node and
//! relation texts live in one embedding space ([`feature_space`]), every
//! target node gets a random-walk context graph ([`context_sampler`]) whose
//! meta-paths are encoded by harmonic weighting ([`context_encoding`]), a
//! sparse mixture of path-conditioned graph transformer experts
//! ([`cgt_layer`], [`moe_gating`]) embeds the target, and task heads
//! ([`task_heads`]) score node classes or links. [`trainer`] co-trains over
//! many (dataset, task) jobs.

pub mod autodiff;
pub mod cgt_layer;
pub mod config;
pub mod context_encoding;
pub mod context_sampler;
pub mod error;
pub mod exec;
pub mod feature_space;
pub mod graph_store;
pub mod metrics;
pub mod model;
pub mod moe_gating;
pub mod rng;
pub mod synthetic;
pub mod task_heads;
pub mod trainer;

pub use error::{Error, Result};

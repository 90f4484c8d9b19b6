//! Run configuration: every tunable with its default, validation, and the
//! content hashes stamped into output artifacts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Dtype;
use crate::context_encoding::PathPooling;
use crate::context_sampler::SamplerConfig;
use crate::error::{Error, Result};

/// Named configuration deltas used to isolate one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Only 1-hop neighbors: every path has length 1.
    NoContextGraph,
    /// FiLM and path projections frozen at zero, leaving a plain graph transformer.
    NoCgt,
    /// A single expert for everything.
    NoMoe,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoContextGraph, Ablation::NoCgt, Ablation::NoMoe];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoContextGraph => "no_context_graph",
            Ablation::NoCgt => "no_cgt",
            Ablation::NoMoe => "no_moe",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown ablation {name:?}")))
    }

    /// Applies the delta and records it in the config.
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::NoContextGraph => cfg.l_max = 1,
            Ablation::NoCgt => cfg.path_conditioning = false,
            Ablation::NoMoe => {
                cfg.n_experts = 1;
                cfg.k_active = 1;
            }
        }
        if !cfg.ablations.contains(&self) {
            cfg.ablations.push(self);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Text embedding dimension of every input table.
    pub dim: usize,
    /// Width of intermediate CGT layers.
    pub hidden: usize,
    /// Width of the final CGT layer.
    pub out: usize,
    pub layers: usize,
    pub n_walks: usize,
    pub l_max: usize,
    pub n_experts: usize,
    pub k_active: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub head_hidden: usize,
    pub leaky_slope: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub precision: Dtype,
    pub pooling: PathPooling,
    /// When false, path embeddings never reach the layer.
    pub path_conditioning: bool,
    /// Reuse the epoch-0 context sample in every epoch.
    pub frozen_sampling: bool,
    /// Draw gate noise during training.
    pub gate_noise: bool,
    pub ablations: Vec<Ablation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 384,
            hidden: 768,
            out: 384,
            layers: 1,
            n_walks: 50,
            l_max: 4,
            n_experts: 8,
            k_active: 4,
            lr: 0.001,
            dropout: 0.15,
            batch_size: 512,
            head_hidden: 384,
            leaky_slope: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 300,
            patience: 10,
            seed: 0,
            precision: Dtype::F32,
            pooling: PathPooling::Harmonic,
            path_conditioning: true,
            frozen_sampling: false,
            gate_noise: true,
            ablations: Vec::new(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("out", self.out),
            ("layers", self.layers),
            ("n_walks", self.n_walks),
            ("l_max", self.l_max),
            ("batch_size", self.batch_size),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.k_active == 0 || self.k_active > self.n_experts {
            return fail(format!(
                "k_active={} must lie in 1..=n_experts={}",
                self.k_active, self.n_experts
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return fail("leaky_slope must be finite and non-negative".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_walks: self.n_walks,
            l_max: self.l_max,
        }
    }

    /// Input and output width of CGT layer `layer` (0-based).
    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let d_in = if layer == 0 { self.dim } else { self.hidden };
        let d_out = if layer + 1 == self.layers { self.out } else { self.hidden };
        (d_in, d_out)
    }

    /// SHA-256 of the canonical JSON form of the whole config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// SHA-256 over the fields that determine parameter names and shapes.
    /// Checkpoints are matched on this hash so a model can be evaluated or
    /// fine-tuned under a config that differs only in optimization settings.
    pub fn architecture_hash(&self) -> String {
        let arch = serde_json::json!({
            "dim": self.dim,
            "hidden": self.hidden,
            "out": self.out,
            "layers": self.layers,
            "n_experts": self.n_experts,
            "k_active": self.k_active,
            "head_hidden": self.head_hidden,
            "precision": self.precision,
        });
        sha256_hex(&serde_json::to_vec(&arch).expect("json"))
    }
}

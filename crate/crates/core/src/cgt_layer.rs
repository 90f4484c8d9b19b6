//! Context-adaptive graph transformer layer.
//!
//! For a target `u` and each context neighbor `v` reached through a
//! meta-path `p`:
//!
//! * attention: `α = softmax_v(σ(W_a [W_q h_u ‖ W_k h_v ‖ W_p h_p]))`
//! * message:   `m_v = (γ_p + 1) ⊙ (W_v h_v) + η_p` with
//!   `γ_p = σ(W_γ h_p + b_γ)`, `η_p = σ(W_β h_p + b_β)`
//! * output:    `h_u' = σ(Σ_v α m_v + W_u h_u)`
//!
//! `σ` is LeakyReLU. All functions work on a batch of targets whose
//! neighbors are laid out contiguously and delimited by `offsets`.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lit, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgtDims {
    pub d_in: usize,
    pub d_out: usize,
    pub d_path: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgtParams {
    pub dims: CgtDims,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_p: ParamId,
    pub w_v: ParamId,
    pub w_u: ParamId,
    pub w_a: ParamId,
    pub w_gamma: ParamId,
    pub b_gamma: ParamId,
    pub w_beta: ParamId,
    pub b_beta: ParamId,
}

/// Glorot-uniform `rows x cols` matrix.
pub fn glorot<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| lit(rng.random_range(-limit..limit)))
}

impl CgtParams {
    /// Registers one layer's parameters under `prefix`. FiLM weights and all
    /// biases start at zero so the layer starts as plain path-aware attention.
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, dims: CgtDims, rng: &mut Rng) -> Self {
        let CgtDims { d_in, d_out, d_path } = dims;
        let mut add = |name: &str, value: Array2<T>| store.add(format!("{prefix}.{name}"), value);
        CgtParams {
            dims,
            w_q: add("w_q", glorot(d_out, d_in, rng)),
            w_k: add("w_k", glorot(d_out, d_in, rng)),
            w_p: add("w_p", glorot(d_out, d_path, rng)),
            w_v: add("w_v", glorot(d_out, d_in, rng)),
            w_u: add("w_u", glorot(d_out, d_in, rng)),
            w_a: add("w_a", glorot(1, 3 * d_out, rng)),
            w_gamma: add("w_gamma", Array2::zeros((d_out, d_path))),
            b_gamma: add("b_gamma", Array2::zeros((1, d_out))),
            w_beta: add("w_beta", Array2::zeros((d_out, d_path))),
            b_beta: add("b_beta", Array2::zeros((1, d_out))),
        }
    }

    pub fn ids(&self) -> [ParamId; 10] {
        [
            self.w_q, self.w_k, self.w_p, self.w_v, self.w_u, self.w_a, self.w_gamma, self.b_gamma,
            self.w_beta, self.b_beta,
        ]
    }

    /// Parameters through which meta-path embeddings enter the layer.
    pub fn path_ids(&self) -> [ParamId; 5] {
        [self.w_p, self.w_gamma, self.b_gamma, self.w_beta, self.b_beta]
    }
}

/// Runtime knobs shared by every layer call in one forward pass.
pub struct ForwardCtx<'r> {
    pub train: bool,
    pub dropout: f64,
    pub slope: f64,
    pub rng: &'r mut Rng,
    pub stats: ForwardStats,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval(rng: &'r mut Rng) -> Self {
        ForwardCtx {
            train: false,
            dropout: 0.0,
            slope: 0.01,
            rng,
            stats: ForwardStats::default(),
        }
    }
}

/// Work counters used to verify cost claims.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStats {
    /// Neighbor messages computed by CGT experts.
    pub messages: usize,
    /// (target, expert) pairs actually executed.
    pub expert_runs: usize,
    /// Targets routed through a mixture layer.
    pub routed_targets: usize,
}

/// Tape-resident inputs of one layer call.
#[derive(Debug, Clone)]
pub struct LayerInputs {
    /// `b x d_in` target embeddings.
    pub targets: Var,
    /// `m x d_in` neighbor embeddings.
    pub neighbors: Var,
    /// `m x d_path` meta-path embeddings.
    pub paths: Var,
    /// `b + 1` offsets delimiting each target's neighbors.
    pub offsets: Vec<usize>,
}

impl LayerInputs {
    pub fn segment_of_rows(&self) -> Vec<usize> {
        let mut seg = Vec::with_capacity(*self.offsets.last().unwrap_or(&0));
        for (i, w) in self.offsets.windows(2).enumerate() {
            seg.extend(std::iter::repeat_n(i, w[1] - w[0]));
        }
        seg
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `b x d_out`
    pub h: Var,
    /// `m x 1` attention weights before dropout.
    pub alpha: Var,
}

fn check_dims<T: Real>(tape: &Tape<'_, T>, p: &CgtParams, x: &LayerInputs) -> Result<()> {
    let [b, di] = tape.shape(x.targets);
    let [m, dn] = tape.shape(x.neighbors);
    let [mp, dp] = tape.shape(x.paths);
    let want = p.dims;
    if di != want.d_in || dn != want.d_in {
        return Err(Error::DimensionMismatch {
            expected: want.d_in,
            found: if di != want.d_in { di } else { dn },
        });
    }
    if dp != want.d_path {
        return Err(Error::DimensionMismatch {
            expected: want.d_path,
            found: dp,
        });
    }
    if mp != m || x.offsets.len() != b + 1 || x.offsets.last() != Some(&m) {
        return Err(Error::shape("cgt", "neighbor, path and offset counts disagree"));
    }
    Ok(())
}

/// Attention weights over each target's neighbors (`m x 1`).
pub fn attention_scores<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &CgtParams,
    x: &LayerInputs,
    slope: f64,
) -> Result<Var> {
    check_dims(tape, p, x)?;
    let w_q = tape.param(p.w_q);
    let w_k = tape.param(p.w_k);
    let w_p = tape.param(p.w_p);
    let w_a = tape.param(p.w_a);
    let q = tape.matmul_t(x.targets, w_q)?;
    let q = tape.gather_rows(q, &x.segment_of_rows())?;
    let k = tape.matmul_t(x.neighbors, w_k)?;
    let pp = tape.matmul_t(x.paths, w_p)?;
    let att = tape.concat(&[q, k, pp], 1)?;
    let e = tape.matmul_t(att, w_a)?;
    let e = tape.leaky_relu(e, lit(slope))?;
    tape.segment_softmax(e, &x.offsets)
}

/// FiLM-modulated neighbor messages (`m x d_out`).
pub fn film_message<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &CgtParams,
    neighbors: Var,
    paths: Var,
    slope: f64,
) -> Result<Var> {
    let w_v = tape.param(p.w_v);
    let w_g = tape.param(p.w_gamma);
    let b_g = tape.param(p.b_gamma);
    let w_b = tape.param(p.w_beta);
    let b_b = tape.param(p.b_beta);
    let v = tape.matmul_t(neighbors, w_v)?;
    let gamma = tape.matmul_t(paths, w_g)?;
    let gamma = tape.add_row(gamma, b_g)?;
    let gamma = tape.leaky_relu(gamma, lit(slope))?;
    let eta = tape.matmul_t(paths, w_b)?;
    let eta = tape.add_row(eta, b_b)?;
    let eta = tape.leaky_relu(eta, lit(slope))?;
    let scale = tape.add_scalar(gamma, T::one())?;
    let scaled = tape.mul(scale, v)?;
    tape.add(scaled, eta)
}

/// Full layer: attention, messages and residual aggregation.
pub fn aggregate<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &CgtParams,
    x: &LayerInputs,
    ctx: &mut ForwardCtx<'_>,
) -> Result<LayerOutput> {
    let alpha = attention_scores(tape, p, x, ctx.slope)?;
    let msg = film_message(tape, p, x.neighbors, x.paths, ctx.slope)?;
    ctx.stats.messages += tape.shape(x.neighbors)[0];
    let alpha_d = tape.dropout(alpha, ctx.dropout, ctx.train, ctx.rng)?;
    let weighted = tape.mul_col(msg, alpha_d)?;
    let agg = tape.segment_sum(weighted, &x.offsets)?;
    let w_u = tape.param(p.w_u);
    let own = tape.matmul_t(x.targets, w_u)?;
    let pre = tape.add(agg, own)?;
    let h = tape.leaky_relu(pre, lit(ctx.slope))?;
    let h = tape.dropout(h, ctx.dropout, ctx.train, ctx.rng)?;
    Ok(LayerOutput { h, alpha })
}

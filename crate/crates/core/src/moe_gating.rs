//! Sparse mixture of CGT experts with noisy top-k gating.
//!
//! Gate logits are `H = W_g h_u + ε ⊙ softplus(W_ε h_u)` with standard normal
//! `ε` drawn only during training. The top `k` logits of each row survive
//! (ties go to the lower expert index) and are renormalized by a softmax;
//! the selection mask itself carries no gradient. Only the selected experts
//! run on each target.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{lit, ParamId, ParamStore, Real, Tape, Var};
use crate::cgt_layer::{aggregate, glorot, CgtDims, CgtParams, ForwardCtx, LayerInputs};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateParams {
    pub n: usize,
    pub k: usize,
    pub w_g: ParamId,
    pub w_eps: ParamId,
}

impl GateParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        n: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("active experts k={k} must lie in 1..={n}")));
        }
        Ok(GateParams {
            n,
            k,
            w_g: store.add(format!("{prefix}.w_g"), glorot(n, d_in, rng)),
            w_eps: store.add(format!("{prefix}.w_eps"), glorot(n, d_in, rng)),
        })
    }
}

/// Gate decisions for a batch.
#[derive(Debug, Clone)]
pub struct GateOutput {
    /// Noisy logits `H` (`b x n`).
    pub logits: Var,
    /// Sparse weights `G` (`b x n`), exactly `k` positive entries per row.
    pub weights: Var,
    /// Selected expert indices per target, ascending.
    pub selected: Vec<Vec<usize>>,
}

/// Standard normal noise for `rows` gatings over `n` experts.
pub fn gate_noise<T: Real>(rows: usize, n: usize, rng: &mut Rng) -> Array2<T> {
    Array2::from_shape_fn((rows, n), |_| {
        let z: f64 = StandardNormal.sample(rng);
        lit(z)
    })
}

/// Indices of the `k` largest entries; equal values prefer the lower index.
pub fn top_k<T: Real>(row: impl IntoIterator<Item = T>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, T)> = row.into_iter().enumerate().collect();
    idx.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut out: Vec<usize> = idx.into_iter().take(k).map(|(i, _)| i).collect();
    out.sort_unstable();
    out
}

pub fn gate<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &GateParams,
    h_u: Var,
    noise: Option<&Array2<T>>,
) -> Result<GateOutput> {
    let [b, d] = tape.shape(h_u);
    let w_g = tape.param(p.w_g);
    let d_gate = tape.shape(w_g)[1];
    if d != d_gate {
        return Err(Error::DimensionMismatch {
            expected: d_gate,
            found: d,
        });
    }
    let clean = tape.matmul_t(h_u, w_g)?;
    let logits = match noise {
        Some(eps) => {
            if eps.dim() != (b, p.n) {
                return Err(Error::shape("gate", "noise shape differs from b x n"));
            }
            let w_e = tape.param(p.w_eps);
            let spread = tape.matmul_t(h_u, w_e)?;
            let spread = tape.softplus(spread)?;
            let jitter = tape.mul_const(spread, eps.clone())?;
            tape.add(clean, jitter)?
        }
        None => clean,
    };
    let mut mask = Array2::from_elem((b, p.n), false);
    let selected: Vec<Vec<usize>> = tape
        .value(logits)
        .rows()
        .into_iter()
        .map(|r| top_k(r.iter().copied(), p.k))
        .collect();
    for (t, sel) in selected.iter().enumerate() {
        for &i in sel {
            mask[[t, i]] = true;
        }
    }
    let weights = tape.masked_softmax(logits, &mask)?;
    Ok(GateOutput {
        logits,
        weights,
        selected,
    })
}

/// One mixture-of-experts layer: a gate and `n` identically shaped experts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoeLayer {
    pub gate: GateParams,
    pub experts: Vec<CgtParams>,
}

impl MoeLayer {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: CgtDims,
        n: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let gate = GateParams::register(store, &format!("{prefix}.gate"), dims.d_in, n, k, rng)?;
        let experts = (0..n)
            .map(|i| CgtParams::register(store, &format!("{prefix}.expert{i}"), dims, rng))
            .collect();
        Ok(MoeLayer { gate, experts })
    }

    pub fn dims(&self) -> CgtDims {
        self.experts[0].dims
    }
}

/// Attention weights of one expert over the targets routed to it.
#[derive(Debug, Clone)]
pub struct ExpertTrace {
    pub expert: usize,
    pub targets: Vec<usize>,
    /// Offsets of each routed target's neighbors within `alpha`.
    pub offsets: Vec<usize>,
    /// Neighbor indices (into the layer input) matching the rows of `alpha`.
    pub neighbors: Vec<usize>,
    pub alpha: Var,
}

#[derive(Debug, Clone)]
pub struct MixtureOutput {
    pub h: Var,
    pub gate: GateOutput,
    pub traces: Vec<ExpertTrace>,
}

/// `h_u = Σ_{i ∈ TopK} G_i(h_u) · CGT_i(h_u, context)`, running each expert
/// only on the targets routed to it.
pub fn mixture_forward<T: Real>(
    tape: &mut Tape<'_, T>,
    layer: &MoeLayer,
    x: &LayerInputs,
    noise: Option<&Array2<T>>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<MixtureOutput> {
    let g = gate(tape, &layer.gate, x.targets, noise)?;
    let b = x.offsets.len() - 1;
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); layer.gate.n];
    for (t, sel) in g.selected.iter().enumerate() {
        for &i in sel {
            routed[i].push(t);
        }
    }
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (i, targets) in routed.iter().enumerate() {
        if targets.is_empty() {
            continue;
        }
        let mut nb_idx = Vec::new();
        let mut offsets = vec![0];
        for &t in targets {
            nb_idx.extend(x.offsets[t]..x.offsets[t + 1]);
            offsets.push(nb_idx.len());
        }
        let sub = LayerInputs {
            targets: tape.gather_rows(x.targets, targets)?,
            neighbors: tape.gather_rows(x.neighbors, &nb_idx)?,
            paths: tape.gather_rows(x.paths, &nb_idx)?,
            offsets: offsets.clone(),
        };
        let out = aggregate(tape, &layer.experts[i], &sub, ctx)?;
        traces.push(ExpertTrace {
            expert: i,
            targets: targets.clone(),
            offsets,
            neighbors: nb_idx,
            alpha: out.alpha,
        });
        let at: Vec<(usize, usize)> = targets.iter().map(|&t| (t, i)).collect();
        let w = tape.pick(g.weights, &at)?;
        parts.push(tape.mul_col(out.h, w)?);
        rows.extend_from_slice(targets);
        ctx.stats.expert_runs += targets.len();
    }
    ctx.stats.routed_targets += b;
    let h = if parts.is_empty() {
        tape.constant(Array2::zeros((b, layer.dims().d_out)))
    } else {
        let stacked = tape.concat(&parts, 0)?;
        tape.scatter_rows(stacked, &rows, b)?
    };
    Ok(MixtureOutput { h, gate: g, traces })
}

/// Histogram of expert selections.
pub fn load_histogram(selected: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut hist = vec![0; n];
    for sel in selected {
        for &i in sel {
            hist[i] += 1;
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    pub k_active: usize,
}

//! The assembled model: a stack of mixture-of-CGT layers over sampled
//! context graphs, followed by the NC and LP heads.

use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::{Array2, Axis};

use crate::autodiff::{Archive, ParamStore, Real, Tape, Var};
use crate::cgt_layer::{CgtDims, ForwardCtx, LayerInputs};
use crate::config::RunConfig;
use crate::context_encoding::encode_paths;
use crate::context_sampler::{context_seed, sample_context_filtered, ContextGraph};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::feature_space::{FeatureSet, MetaRelationVocab};
use crate::graph_store::{EdgeRecord, TextAttributedGraph};
use crate::moe_gating::{gate_noise, mixture_forward, MoeLayer};
use crate::rng::{rng_for, stream};
use crate::task_heads::{LpHead, NcHead};

/// Embedding tables converted to the compute precision.
#[derive(Debug, Clone)]
pub struct Tables<T> {
    pub nodes: Array2<T>,
    pub relations: Array2<T>,
    pub labels: Option<Array2<T>>,
}

impl<T: Real> Tables<T> {
    pub fn from_features(f: &FeatureSet) -> Self {
        let conv = |a: &Array2<f32>| a.mapv(<T as Real>::from_f32);
        Tables {
            nodes: conv(f.nodes.vectors()),
            relations: conv(f.relations.vectors()),
            labels: f.labels.as_ref().map(|l| conv(l.vectors())),
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }
}

/// Everything the forward pass reads about one dataset.
#[derive(Clone, Copy)]
pub struct GraphInput<'a, T> {
    pub graph: &'a TextAttributedGraph,
    pub vocab: &'a MetaRelationVocab,
    pub tables: &'a Tables<T>,
}

/// How context graphs are drawn for one forward pass.
#[derive(Clone, Copy)]
pub struct Sampling<'s> {
    /// Mixed into every per-target context seed, e.g. the training step.
    pub key: u64,
    /// Endpoint pairs whose edges (either direction) walks may not use.
    pub hidden_pairs: Option<&'s HashSet<(usize, usize)>>,
    pub mode: ExecMode,
}

impl Sampling<'_> {
    /// Key reserved for evaluation so validation contexts do not change
    /// between epochs.
    pub const EVAL_KEY: u64 = u64::MAX;

    pub fn eval(mode: ExecMode) -> Self {
        Sampling {
            key: Self::EVAL_KEY,
            hidden_pairs: None,
            mode,
        }
    }
}

/// Parameter handles of the whole network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<MoeLayer>,
    pub nc: NcHead,
    pub lp: LpHead,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: RunConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

/// Side outputs of an embedding pass.
#[derive(Debug, Clone, Default)]
pub struct EmbedTrace {
    /// Experts selected for every routed target, all layers concatenated.
    pub selected: Vec<Vec<usize>>,
    /// Context graphs of the output layer, one per unique target.
    pub contexts: Vec<ContextGraph>,
    /// Unique targets, ascending, matching `contexts`.
    pub targets: Vec<usize>,
    /// Output-layer gate weights and per-expert attention, when recorded.
    pub last_layer: Option<crate::moe_gating::MixtureOutput>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::default();
        let mut rng = rng_for(cfg.seed, &[stream::INIT]);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (d_in, d_out) = cfg.layer_dims(l);
            let dims = CgtDims {
                d_in,
                d_out,
                d_path: cfg.dim,
            };
            layers.push(MoeLayer::register(
                &mut params,
                &format!("layer{l}"),
                dims,
                cfg.n_experts,
                cfg.k_active,
                &mut rng,
            )?);
        }
        let nc = NcHead::register(&mut params, "nc_head", cfg.out, cfg.dim, cfg.head_hidden, &mut rng);
        let lp = LpHead::register(&mut params, "lp_head", cfg.out, cfg.head_hidden, &mut rng);
        let mut model = Model {
            cfg,
            arch: Architecture { layers, nc, lp },
            params,
        };
        model.apply_freezing();
        Ok(model)
    }

    /// Zero-freezes path parameters when path conditioning is disabled.
    fn apply_freezing(&mut self) {
        if self.cfg.path_conditioning {
            return;
        }
        for layer in &self.arch.layers {
            for e in &layer.experts {
                for id in e.path_ids() {
                    self.params.value_mut(id).fill(T::zero());
                    self.params.set_frozen(id, true);
                }
            }
        }
    }

    /// Freezes or unfreezes everything except the two heads.
    pub fn set_body_frozen(&mut self, frozen: bool) {
        let heads: HashSet<_> = self.arch.nc.mlp.ids().into_iter().chain(self.arch.lp.mlp.ids()).collect();
        let ids: Vec<_> = self.params.ids().filter(|id| !heads.contains(id)).collect();
        for id in ids {
            self.params.set_frozen(id, frozen);
        }
        if !frozen {
            self.apply_freezing();
        }
    }

    /// Names of the parameter tensors with their shapes.
    pub fn manifest(&self) -> Vec<(String, [usize; 2])> {
        self.params
            .ids()
            .map(|id| {
                let v = self.params.value(id);
                (self.params.name(id).to_string(), [v.nrows(), v.ncols()])
            })
            .collect()
    }

    fn contexts(
        &self,
        input: GraphInput<'_, T>,
        nodes: &[usize],
        layer: usize,
        s: Sampling<'_>,
    ) -> Vec<ContextGraph> {
        let cfg = self.cfg.sampler();
        let seed = self.cfg.seed;
        let hide = s.hidden_pairs.map(|set| {
            move |e: &EdgeRecord| !(set.contains(&(e.src, e.dst)) || set.contains(&(e.dst, e.src)))
        });
        let filter = hide.as_ref().map(|f| f as &(dyn Fn(&EdgeRecord) -> bool + Sync));
        exec::map(s.mode, nodes, |&u| {
            let cs = context_seed(seed, s.key, layer as u64, u);
            sample_context_filtered(input.graph, input.vocab, u, cfg, cs, filter)
        })
    }

    fn encode(&self, input: GraphInput<'_, T>, ctxs: &[ContextGraph], mode: ExecMode) -> Result<Array2<T>> {
        let pooling = self.cfg.pooling;
        let rel = input.tables.relations.view();
        let blocks = exec::map(mode, ctxs, |c| {
            encode_paths(c.neighbors.iter().map(|n| n.relation_ids.as_slice()), rel, pooling)
        });
        let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        if views.is_empty() {
            return Ok(Array2::zeros((0, input.tables.dim())));
        }
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape("encode", e.to_string()))
    }

    /// Final-layer embeddings of `targets` (`len x out`), in the given order.
    pub fn embed(
        &self,
        tape: &mut Tape<'_, T>,
        input: GraphInput<'_, T>,
        targets: &[usize],
        s: Sampling<'_>,
        ctx: &mut ForwardCtx<'_>,
        keep_last: bool,
    ) -> Result<(Var, EmbedTrace)> {
        let n = input.graph.num_nodes();
        if input.tables.nodes.nrows() != n {
            return Err(Error::CountMismatch {
                expected: n,
                found: input.tables.nodes.nrows(),
            });
        }
        if input.tables.dim() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                found: input.tables.dim(),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Validation(format!("target node {bad} out of range")));
        }
        let depth = self.arch.layers.len();
        // levels[0] holds the output targets; levels[i + 1] adds the context
        // endpoints needed by levels[i]
        let mut levels: Vec<Vec<usize>> = vec![targets.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()];
        let mut ctxs: Vec<Vec<ContextGraph>> = Vec::with_capacity(depth);
        for i in 0..depth {
            let layer = depth - 1 - i;
            let c = self.contexts(input, &levels[i], layer, s);
            let mut next: BTreeSet<usize> = levels[i].iter().copied().collect();
            next.extend(c.iter().flat_map(|g| g.neighbors.iter().map(|m| m.endpoint)));
            levels.push(next.into_iter().collect());
            ctxs.push(c);
        }
        let bottom = &levels[depth];
        let mut h = tape.constant(input.tables.nodes.select(Axis(0), bottom));
        let mut trace = EmbedTrace::default();
        for layer in 0..depth {
            let below = &levels[depth - layer];
            let here = &levels[depth - layer - 1];
            let c = &ctxs[depth - layer - 1];
            let pos: HashMap<usize, usize> = below.iter().enumerate().map(|(i, &u)| (u, i)).collect();
            let mut offsets = Vec::with_capacity(here.len() + 1);
            offsets.push(0);
            let mut nb = Vec::new();
            for g in c {
                nb.extend(g.neighbors.iter().map(|m| pos[&m.endpoint]));
                offsets.push(nb.len());
            }
            let own: Vec<usize> = here.iter().map(|u| pos[u]).collect();
            let paths = self.encode(input, c, s.mode)?;
            let x = LayerInputs {
                targets: tape.gather_rows(h, &own)?,
                neighbors: tape.gather_rows(h, &nb)?,
                paths: tape.constant(paths),
                offsets,
            };
            let moe = &self.arch.layers[layer];
            let noise = (ctx.train && self.cfg.gate_noise)
                .then(|| gate_noise::<T>(here.len(), moe.gate.n, ctx.rng));
            let out = mixture_forward(tape, moe, &x, noise.as_ref(), ctx)?;
            h = out.h;
            trace.selected.extend(out.gate.selected.iter().cloned());
            if layer + 1 == depth && keep_last {
                trace.last_layer = Some(out);
            }
        }
        trace.targets = levels[0].clone();
        trace.contexts = ctxs.into_iter().next().unwrap_or_default();
        let pos: HashMap<usize, usize> = levels[0].iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let rows: Vec<usize> = targets.iter().map(|t| pos[t]).collect();
        Ok((tape.gather_rows(h, &rows)?, trace))
    }

    /// NC logits (`len x C`) against the dataset's label-text table.
    pub fn nc_logits(
        &self,
        tape: &mut Tape<'_, T>,
        input: GraphInput<'_, T>,
        targets: &[usize],
        s: Sampling<'_>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Var, EmbedTrace)> {
        let labels = input
            .tables
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("dataset has no label-text embeddings".into()))?;
        let (h, trace) = self.embed(tape, input, targets, s, ctx, false)?;
        let y = tape.constant(labels.clone());
        let z = self.arch.nc.logits(tape, h, y, self.cfg.leaky_slope)?;
        Ok((z, trace))
    }

    /// LP logits (`len x 1`) for node pairs.
    pub fn lp_logits(
        &self,
        tape: &mut Tape<'_, T>,
        input: GraphInput<'_, T>,
        pairs: &[(usize, usize)],
        s: Sampling<'_>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Var, EmbedTrace)> {
        let nodes: Vec<usize> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
        let (h, trace) = self.embed(tape, input, &nodes, s, ctx, false)?;
        let even: Vec<usize> = (0..pairs.len()).map(|i| 2 * i).collect();
        let odd: Vec<usize> = (0..pairs.len()).map(|i| 2 * i + 1).collect();
        let hu = tape.gather_rows(h, &even)?;
        let hv = tape.gather_rows(h, &odd)?;
        let z = self.arch.lp.logits(tape, hu, hv, self.cfg.leaky_slope)?;
        Ok((z, trace))
    }

    /// Parameters as named tensors.
    pub fn tensors(&self) -> Vec<(String, Array2<T>)> {
        self.params
            .ids()
            .map(|id| (self.params.name(id).to_string(), self.params.value(id).clone()))
            .collect()
    }

    /// Rebuilds a model for `cfg` and overwrites every parameter from the archive.
    pub fn from_archive(cfg: RunConfig, archive: &Archive<T>) -> Result<Self> {
        let mut model = Model::new(cfg)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let t = archive
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.raw_dim() != model.params.value(id).raw_dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.value(id).shape()
                )));
            }
            *model.params.value_mut(id) = t.clone();
        }
        model.apply_freezing();
        Ok(model)
    }
}

//! Context-graph sampling: `N` seeded random walks of at most `L_max` hops
//! from a target node, each truncated to a random length and kept as one
//! (context neighbor, meta-path) pair.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::MetaRelationVocab;
use crate::graph_store::{EdgeRecord, TextAttributedGraph};
use crate::rng::{derive, stream, Rng};
use rand::SeedableRng;

/// One sampled walk, truncated: the meta-relation of every hop and the node reached.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetaPathInstance {
    pub endpoint: usize,
    pub relation_ids: Vec<usize>,
    /// Edge ids traversed, in order.
    pub edges: Vec<usize>,
}

impl MetaPathInstance {
    pub fn len(&self) -> usize {
        self.relation_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relation_ids.is_empty()
    }

    /// Ordering key used before any floating-point reduction over neighbors.
    fn canonical_key(&self) -> (usize, &[usize], usize, &[usize]) {
        (self.endpoint, &self.relation_ids, self.len(), &self.edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGraph {
    pub target: usize,
    pub neighbors: Vec<MetaPathInstance>,
    /// Edge traversals performed while sampling, before truncation.
    pub traversals: usize,
}

impl ContextGraph {
    /// Sorts neighbors by (endpoint, relation ids, length) so downstream sums
    /// are independent of sampling order.
    pub fn canonicalize(&mut self) {
        self.neighbors
            .sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_walks: usize,
    pub l_max: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_walks: 50,
            l_max: 4,
        }
    }
}

/// Seed for the walks of `target` at a given epoch and layer.
pub fn context_seed(global: u64, epoch: u64, layer: u64, target: usize) -> u64 {
    derive(global, &[stream::CONTEXT, epoch, layer, target as u64])
}

/// Samples the context graph of `target`.
///
/// Each walk follows uniformly chosen outgoing edges for up to `l_max`
/// steps (stopping early at sinks), then keeps a prefix whose length is
/// uniform on `1..=steps`. Walks that cannot take a first step are dropped.
/// The result is in canonical order.
pub fn sample_context(
    g: &TextAttributedGraph,
    vocab: &MetaRelationVocab,
    target: usize,
    cfg: SamplerConfig,
    seed: u64,
) -> ContextGraph {
    sample_context_filtered(g, vocab, target, cfg, seed, None)
}

/// Edge predicate for [`sample_context_filtered`]; `true` keeps the edge.
pub type EdgeFilter<'f> = &'f (dyn Fn(&EdgeRecord) -> bool + Sync);

/// [`sample_context`] restricted to edges accepted by `filter`. Walks choose
/// uniformly among the accepted outgoing edges, so link-prediction training
/// can hide the very edge being scored. Without a filter the draws are
/// identical to [`sample_context`].
pub fn sample_context_filtered(
    g: &TextAttributedGraph,
    vocab: &MetaRelationVocab,
    target: usize,
    cfg: SamplerConfig,
    seed: u64,
    filter: Option<EdgeFilter<'_>>,
) -> ContextGraph {
    let mut rng = Rng::seed_from_u64(seed);
    let mut allowed: Vec<usize> = Vec::new();
    let mut neighbors = Vec::with_capacity(cfg.n_walks);
    let mut traversals = 0;
    let mut walk: Vec<usize> = Vec::with_capacity(cfg.l_max);
    for _ in 0..cfg.n_walks {
        walk.clear();
        let mut cur = target;
        for _ in 0..cfg.l_max {
            let mut out = g.out_edge_ids(cur);
            if let Some(keep) = filter {
                allowed.clear();
                allowed.extend(out.iter().copied().filter(|&e| keep(g.edge(e))));
                out = &allowed;
            }
            if out.is_empty() {
                break;
            }
            let e = out[rng.random_range(0..out.len())];
            walk.push(e);
            cur = g.edge(e).dst;
        }
        traversals += walk.len();
        if walk.is_empty() {
            continue;
        }
        let keep = rng.random_range(1..=walk.len());
        let edges = walk[..keep].to_vec();
        let relation_ids = path_relation_ids(g, vocab, target, &edges)
            .expect("walk edges are adjacent and drawn from the vocabulary's graph");
        neighbors.push(MetaPathInstance {
            endpoint: g.edge(edges[keep - 1]).dst,
            relation_ids,
            edges,
        });
    }
    let mut ctx = ContextGraph {
        target,
        neighbors,
        traversals,
    };
    ctx.canonicalize();
    ctx
}

/// Maps the edges of a walk starting at `start` to meta-relation ids.
pub fn path_relation_ids(
    g: &TextAttributedGraph,
    vocab: &MetaRelationVocab,
    start: usize,
    edges: &[usize],
) -> Result<Vec<usize>> {
    let mut cur = start;
    edges
        .iter()
        .map(|&e| {
            let rec = g.edge(e);
            if rec.src != cur {
                return Err(Error::Validation(format!(
                    "walk is not contiguous: edge {e} leaves node {} but walk is at {cur}",
                    rec.src
                )));
            }
            cur = rec.dst;
            vocab.id_of_edge(g, e).ok_or_else(|| {
                Error::Validation(format!("edge {e} has no meta-relation in the vocabulary"))
            })
        })
        .collect()
}

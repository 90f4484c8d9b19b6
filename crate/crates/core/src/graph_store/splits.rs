use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::TextAttributedGraph;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Nc,
    Lp,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Nc => "nc",
            Task::Lp => "lp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSplit {
    pub seed: u64,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub train_negatives: Vec<(usize, usize)>,
    pub valid_negatives: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
    /// Every valid/test positive before capping; removed from the training graph.
    pub held_out: Vec<(usize, usize)>,
}

impl LpSplit {
    /// The graph used for message passing during training and evaluation:
    /// every held-out edge (in both directions for undirected graphs) removed.
    pub fn training_graph(&self, g: &TextAttributedGraph) -> TextAttributedGraph {
        let held: HashSet<(usize, usize)> = self.held_out.iter().copied().collect();
        let undirected = g.undirected();
        g.filter_edges(|e| {
            !(held.contains(&(e.src, e.dst)) || (undirected && held.contains(&(e.dst, e.src))))
        })
    }
}

/// Splits written to `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum SplitSet {
    Nc(NcSplit),
    Lp(LpSplit),
}

impl SplitSet {
    pub fn task(&self) -> Task {
        match self {
            SplitSet::Nc(_) => Task::Nc,
            SplitSet::Lp(_) => Task::Lp,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SplitSet::Nc(s) => s.seed,
            SplitSet::Lp(s) => s.seed,
        }
    }
}

fn partition_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize)> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let train = (n as f64 * a).floor() as usize;
    let valid = (n as f64 * b).floor() as usize;
    Ok((train, valid.min(n - train)))
}

fn cap<T>(mut items: Vec<T>, limit: Option<usize>, rng: &mut crate::rng::Rng) -> Vec<T> {
    if let Some(limit) = limit {
        if items.len() > limit {
            items.shuffle(rng);
            items.truncate(limit);
        }
    }
    items
}

/// Train/valid/test over labeled nodes.
pub fn build_nc_splits(
    g: &TextAttributedGraph,
    ratios: (f64, f64, f64),
    seed: u64,
    cap_train: Option<usize>,
    cap_eval: Option<usize>,
) -> Result<SplitSet> {
    let mut labeled: Vec<usize> = g
        .nodes()
        .iter()
        .filter(|n| n.label_id.is_some())
        .map(|n| n.node_id)
        .collect();
    if labeled.is_empty() {
        return Err(Error::Validation("graph has no labeled nodes".into()));
    }
    let mut rng = rng_for(seed, &[stream::SPLIT, 0]);
    labeled.shuffle(&mut rng);
    let (n_train, n_valid) = partition_sizes(labeled.len(), ratios)?;
    let test = labeled.split_off(n_train + n_valid);
    let valid = labeled.split_off(n_train);
    let train = labeled;
    Ok(SplitSet::Nc(NcSplit {
        seed,
        train: cap(train, cap_train, &mut rng),
        valid: cap(valid, cap_eval, &mut rng),
        test: cap(test, cap_eval, &mut rng),
    }))
}

/// Distinct positive pairs; for undirected graphs each edge appears once as (min, max).
fn unique_pairs(g: &TextAttributedGraph) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in g.edges().iter().filter(|e| !e.mirrored && e.src != e.dst) {
        let key = if g.undirected() {
            (e.src.min(e.dst), e.src.max(e.dst))
        } else {
            (e.src, e.dst)
        };
        if seen.insert(key) {
            out.push(key);
        }
    }
    out
}

/// Shuffles the edge set, partitions it by `ratios`, and attaches one
/// 2-hop negative per positive.
pub fn build_lp_splits(
    g: &TextAttributedGraph,
    ratios: (f64, f64, f64),
    seed: u64,
    cap_train: Option<usize>,
    cap_eval: Option<usize>,
) -> Result<SplitSet> {
    let mut pairs = unique_pairs(g);
    if pairs.len() < 10 {
        return Err(Error::Validation(format!(
            "link prediction splits need at least 10 edges, graph has {}",
            pairs.len()
        )));
    }
    let mut rng = rng_for(seed, &[stream::SPLIT, 1]);
    pairs.shuffle(&mut rng);
    let (n_train, n_valid) = partition_sizes(pairs.len(), ratios)?;
    let test = pairs.split_off(n_train + n_valid);
    let valid = pairs.split_off(n_train);
    let train = pairs;
    let held_out: Vec<_> = valid.iter().chain(test.iter()).copied().collect();

    let train = cap(train, cap_train, &mut rng);
    let valid = cap(valid, cap_eval, &mut rng);
    let test = cap(test, cap_eval, &mut rng);
    let neg_seed = |tag: u64| crate::rng::derive(seed, &[stream::NEGATIVE, tag]);
    Ok(SplitSet::Lp(LpSplit {
        seed,
        train_negatives: sample_lp_negatives(g, &train, neg_seed(0))?,
        valid_negatives: sample_lp_negatives(g, &valid, neg_seed(1))?,
        test_negatives: sample_lp_negatives(g, &test, neg_seed(2))?,
        train,
        valid,
        test,
        held_out,
    }))
}

/// One negative `(u, w)` per positive `(u, v)`.
///
/// `w` is drawn uniformly from the 2-hop neighbors of `u` that are neither
/// `u`, `v`, nor a 1-hop neighbor. When that set is empty a uniformly random
/// non-neighbor is used instead.
pub fn sample_lp_negatives(
    g: &TextAttributedGraph,
    positives: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if g.num_nodes() < 2 {
        return Err(Error::NegativeSampling(
            "graph has fewer than two nodes".into(),
        ));
    }
    positives
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| {
            let mut rng = rng_for(seed, &[stream::NEGATIVE, i as u64]);
            let one_hop: HashSet<usize> = g.neighbors(u).collect();
            let two_hop: BTreeSet<usize> = one_hop
                .iter()
                .flat_map(|&m| g.neighbors(m))
                .filter(|&w| w != u && w != v && !one_hop.contains(&w))
                .collect();
            if !two_hop.is_empty() {
                let pick = rng.random_range(0..two_hop.len());
                return Ok((u, *two_hop.iter().nth(pick).unwrap()));
            }
            let eligible = |w: usize| w != u && w != v && !one_hop.contains(&w);
            let n = g.num_nodes();
            for _ in 0..64 {
                let w = rng.random_range(0..n);
                if eligible(w) {
                    return Ok((u, w));
                }
            }
            let pool: Vec<usize> = (0..n).filter(|&w| eligible(w)).collect();
            if pool.is_empty() {
                return Err(Error::NegativeSampling(format!(
                    "node {u} is adjacent to every other node"
                )));
            }
            Ok((u, pool[rng.random_range(0..pool.len())]))
        })
        .collect()
}

//! Typed text-attributed graphs: data model, JSON-lines ingestion and
//! export, and task split construction.

mod ingest;
mod splits;

pub use ingest::{export_graph, ingest_graph, ingest_graph_dir, EdgeLine, MetaFile, NodeLine};
pub use splits::{
    build_lp_splits, build_nc_splits, sample_lp_negatives, LpSplit, NcSplit, SplitSet, Task,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: usize,
    pub type_id: usize,
    pub text: String,
    pub label_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub etype_id: usize,
    pub text: Option<String>,
    /// Reverse direction emitted for an undirected source edge.
    pub mirrored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelText {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphKind {
    HoTag,
    HeTag,
}

/// A graph whose nodes carry text, typed nodes and edges, and optional
/// class labels. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    offsets: Vec<usize>,
    out_edges: Vec<usize>,
    node_type_names: Vec<String>,
    edge_type_names: Vec<String>,
    labels: Vec<LabelText>,
    undirected: bool,
    original_ids: Vec<String>,
}

impl TextAttributedGraph {
    /// Assembles a graph from already-validated parts and builds the CSR
    /// adjacency. Edges keep their given order within each source bucket.
    pub fn from_parts(
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
        node_type_names: Vec<String>,
        edge_type_names: Vec<String>,
        labels: Vec<LabelText>,
        undirected: bool,
        original_ids: Vec<String>,
    ) -> Self {
        let n = nodes.len();
        let mut offsets = vec![0usize; n + 1];
        for e in &edges {
            offsets[e.src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut out_edges = vec![0usize; edges.len()];
        for (idx, e) in edges.iter().enumerate() {
            out_edges[cursor[e.src]] = idx;
            cursor[e.src] += 1;
        }
        TextAttributedGraph {
            nodes,
            edges,
            offsets,
            out_edges,
            node_type_names,
            edge_type_names,
            labels,
            undirected,
            original_ids,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &NodeRecord {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &EdgeRecord {
        &self.edges[idx]
    }

    pub fn node_type_names(&self) -> &[String] {
        &self.node_type_names
    }

    pub fn edge_type_names(&self) -> &[String] {
        &self.edge_type_names
    }

    pub fn labels(&self) -> &[LabelText] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn undirected(&self) -> bool {
        self.undirected
    }

    pub fn original_ids(&self) -> &[String] {
        &self.original_ids
    }

    pub fn kind(&self) -> GraphKind {
        if self.node_type_names.len() == 1 && self.edge_type_names.len() == 1 {
            GraphKind::HoTag
        } else {
            GraphKind::HeTag
        }
    }

    /// Indices into [`Self::edges`] of the edges leaving `node`.
    pub fn out_edge_ids(&self, node: usize) -> &[usize] {
        &self.out_edges[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edge_ids(node).iter().map(|&e| self.edges[e].dst)
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.neighbors(src).any(|v| v == dst)
    }

    /// The same graph restricted to the edges accepted by `keep`.
    pub fn filter_edges(&self, mut keep: impl FnMut(&EdgeRecord) -> bool) -> Self {
        let edges = self.edges.iter().filter(|e| keep(e)).cloned().collect();
        Self::from_parts(
            self.nodes.clone(),
            edges,
            self.node_type_names.clone(),
            self.edge_type_names.clone(),
            self.labels.clone(),
            self.undirected,
            self.original_ids.clone(),
        )
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn node(id: usize, ty: usize, label: Option<usize>) -> NodeRecord {
        NodeRecord {
            node_id: id,
            type_id: ty,
            text: format!("node {id}"),
            label_id: label,
        }
    }

    /// Builds a graph from `(src, dst, etype)` triples; undirected graphs get mirrored edges.
    pub fn graph(
        node_types: &[usize],
        node_type_names: &[&str],
        edge_type_names: &[&str],
        edges: &[(usize, usize, usize)],
        undirected: bool,
    ) -> TextAttributedGraph {
        let nodes = node_types
            .iter()
            .enumerate()
            .map(|(i, &t)| node(i, t, None))
            .collect();
        let mut recs = Vec::new();
        for &(s, d, t) in edges {
            recs.push(EdgeRecord {
                src: s,
                dst: d,
                etype_id: t,
                text: None,
                mirrored: false,
            });
            if undirected && s != d {
                recs.push(EdgeRecord {
                    src: d,
                    dst: s,
                    etype_id: t,
                    text: None,
                    mirrored: true,
                });
            }
        }
        TextAttributedGraph::from_parts(
            nodes,
            recs,
            node_type_names.iter().map(|s| s.to_string()).collect(),
            edge_type_names.iter().map(|s| s.to_string()).collect(),
            Vec::new(),
            undirected,
            (0..node_types.len()).map(|i| i.to_string()).collect(),
        )
    }
}

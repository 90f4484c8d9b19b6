//! Unified text embedding space: meta-relation vocabulary, the `H2GV`
//! binary vector format, and a hashing embedder for runs without an
//! external sentence encoder.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::TextAttributedGraph;
use crate::rng::{hash_str, rng_for};

pub const VECTOR_MAGIC: &[u8; 4] = b"H2GV";
pub const VECTOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    NodeText,
    MetaRelation,
    LabelText,
}

/// A `count x dim` table of f32 vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub kind: KeyKind,
    vectors: Array2<f32>,
}

impl EmbeddingTable {
    pub fn new(kind: KeyKind, vectors: Array2<f32>) -> Result<Self> {
        if let Some(row) = vectors
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFiniteRow { row });
        }
        Ok(EmbeddingTable { kind, vectors })
    }

    pub fn from_rows(kind: KeyKind, dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let vectors = Array2::from_shape_vec((rows.len(), dim), flat).expect("row-major");
        Self::new(kind, vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f32> {
        self.vectors.row(i)
    }

    /// Writes the table in the `H2GV` format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4);
        buf.extend_from_slice(VECTOR_MAGIC);
        buf.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for x in self.vectors.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

/// Reads an `H2GV` file and checks it has exactly `expected_count` rows of
/// `expected_dim` finite values.
pub fn load_embeddings(
    path: &Path,
    kind: KeyKind,
    expected_count: usize,
    expected_dim: usize,
) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let table = decode_vectors(&bytes, kind)?;
    if table.dim() != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: table.dim(),
        });
    }
    if table.count() != expected_count {
        return Err(Error::CountMismatch {
            expected: expected_count,
            found: table.count(),
        });
    }
    Ok(table)
}

pub fn decode_vectors(bytes: &[u8], kind: KeyKind) -> Result<EmbeddingTable> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != VECTOR_MAGIC {
        return Err(Error::VectorFormat("magic mismatch".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VECTOR_VERSION {
        return Err(Error::VectorFormat(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::VectorFormat("header overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::VectorFormat(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingTable::new(
        kind,
        Array2::from_shape_vec((count, dim), values).expect("sized above"),
    )
}

/// One distinct `(source type, edge type, destination type)` signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRelation {
    pub src_type: usize,
    pub etype: usize,
    pub dst_type: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<MetaRelation>", into = "Vec<MetaRelation>")]
pub struct MetaRelationVocab {
    entries: Vec<MetaRelation>,
    index: HashMap<(usize, usize, usize), usize>,
}

impl From<Vec<MetaRelation>> for MetaRelationVocab {
    fn from(entries: Vec<MetaRelation>) -> Self {
        Self::from_entries(entries)
    }
}

impl From<MetaRelationVocab> for Vec<MetaRelation> {
    fn from(v: MetaRelationVocab) -> Self {
        v.entries
    }
}

impl MetaRelationVocab {
    pub fn from_entries(entries: Vec<MetaRelation>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.src_type, e.etype, e.dst_type), i))
            .collect();
        MetaRelationVocab { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MetaRelation] {
        &self.entries
    }

    pub fn texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn id_of(&self, src_type: usize, etype: usize, dst_type: usize) -> Option<usize> {
        self.index.get(&(src_type, etype, dst_type)).copied()
    }

    pub fn id_of_edge(&self, g: &TextAttributedGraph, edge: usize) -> Option<usize> {
        let e = g.edge(edge);
        self.id_of(g.node(e.src).type_id, e.etype_id, g.node(e.dst).type_id)
    }
}

/// Collects the distinct meta-relations of `g` in order of first appearance,
/// each rendered as `"src || edge || dst"` plus ` || text` when the edge type
/// carries shared text.
pub fn build_meta_relation_texts(g: &TextAttributedGraph) -> MetaRelationVocab {
    let mut entries: Vec<MetaRelation> = Vec::new();
    let mut seen = HashMap::new();
    for e in g.edges() {
        let key = (g.node(e.src).type_id, e.etype_id, g.node(e.dst).type_id);
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, entries.len());
        let mut text = format!(
            "{} || {} || {}",
            g.node_type_names()[key.0],
            g.edge_type_names()[key.1],
            g.node_type_names()[key.2]
        );
        if let Some(extra) = &e.text {
            text.push_str(" || ");
            text.push_str(extra);
        }
        entries.push(MetaRelation {
            src_type: key.0,
            etype: key.1,
            dst_type: key.2,
            text,
        });
    }
    MetaRelationVocab::from_entries(entries)
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

/// Deterministic bag-of-tokens embedding: every token maps to a seeded
/// Gaussian direction, token directions are averaged and the mean is
/// L2-normalized. Text without tokens maps to the zero vector.
pub fn fallback_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut acc = vec![0f64; dim];
    let mut n = 0usize;
    for tok in tokens(text) {
        let mut rng = rng_for(seed, &[crate::rng::stream::INIT, hash_str(&tok)]);
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x / norm;
        }
        n += 1;
    }
    if n == 0 {
        return vec![0.0; dim];
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

pub fn fallback_table(kind: KeyKind, texts: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
    let rows: Vec<Vec<f32>> = texts.iter().map(|t| fallback_embed(t, dim, seed)).collect();
    EmbeddingTable::from_rows(kind, dim, &rows).expect("fallback vectors are finite")
}

/// Node, meta-relation and label tables for one dataset.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub nodes: EmbeddingTable,
    pub relations: EmbeddingTable,
    pub labels: Option<EmbeddingTable>,
}

impl FeatureSet {
    pub fn new(
        nodes: EmbeddingTable,
        relations: EmbeddingTable,
        labels: Option<EmbeddingTable>,
    ) -> Result<Self> {
        let dim = nodes.dim();
        for t in std::iter::once(&relations).chain(labels.iter()) {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: t.dim(),
                });
            }
        }
        Ok(FeatureSet {
            nodes,
            relations,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    /// Embeds every node, meta-relation and label text with [`fallback_embed`].
    pub fn fallback(
        g: &TextAttributedGraph,
        vocab: &MetaRelationVocab,
        dim: usize,
        seed: u64,
    ) -> Self {
        let node_texts: Vec<&str> = g.nodes().iter().map(|n| n.text.as_str()).collect();
        let label_texts: Vec<&str> = g.labels().iter().map(|l| l.text.as_str()).collect();
        let labels = (!label_texts.is_empty())
            .then(|| fallback_table(KeyKind::LabelText, &label_texts, dim, seed));
        FeatureSet {
            nodes: fallback_table(KeyKind::NodeText, &node_texts, dim, seed),
            relations: fallback_table(KeyKind::MetaRelation, &vocab.texts(), dim, seed),
            labels,
        }
    }

    pub const NODE_FILE: &'static str = "nodes.h2gv";
    pub const RELATION_FILE: &'static str = "relations.h2gv";
    pub const LABEL_FILE: &'static str = "labels.h2gv";

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.nodes.save(&dir.join(Self::NODE_FILE))?;
        self.relations.save(&dir.join(Self::RELATION_FILE))?;
        if let Some(l) = &self.labels {
            l.save(&dir.join(Self::LABEL_FILE))?;
        }
        Ok(())
    }

    /// Loads the three tables written by [`Self::save_dir`] (or by the
    /// external exporter), checking counts against the graph and vocabulary.
    pub fn load_dir(
        dir: &Path,
        g: &TextAttributedGraph,
        vocab: &MetaRelationVocab,
        dim: usize,
    ) -> Result<Self> {
        let nodes = load_embeddings(&dir.join(Self::NODE_FILE), KeyKind::NodeText, g.num_nodes(), dim)?;
        let relations = load_embeddings(
            &dir.join(Self::RELATION_FILE),
            KeyKind::MetaRelation,
            vocab.len(),
            dim,
        )?;
        let label_path = dir.join(Self::LABEL_FILE);
        let labels = if g.num_classes() > 0 {
            Some(load_embeddings(&label_path, KeyKind::LabelText, g.num_classes(), dim)?)
        } else {
            None
        };
        Self::new(nodes, relations, labels)
    }
}

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeRecord, LabelText, NodeRecord, TextAttributedGraph};
use crate::error::{Error, Result};

/// One line of `nodes.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeLine {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
}

/// One line of `edges.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeLine {
    pub src: String,
    pub dst: String,
    #[serde(rename = "type")]
    pub edge_type: String,
    #[serde(default)]
    pub text: Option<String>,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaFile {
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
    #[serde(default)]
    pub labels: Vec<LabelText>,
    #[serde(default)]
    pub undirected: bool,
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads `nodes.jsonl`, `edges.jsonl` and `meta.json` from a directory.
pub fn ingest_graph_dir(dir: &Path) -> Result<TextAttributedGraph> {
    ingest_graph(
        &dir.join("nodes.jsonl"),
        &dir.join("edges.jsonl"),
        &dir.join("meta.json"),
    )
}

/// Parses and validates the three graph files.
///
/// Node ids are densified in file order; the original string ids are kept
/// on the graph. Undirected graphs get a mirrored copy of every non-loop edge.
pub fn ingest_graph(
    nodes_path: &Path,
    edges_path: &Path,
    meta_path: &Path,
) -> Result<TextAttributedGraph> {
    let meta_raw = std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&meta_raw).map_err(|e| Error::MalformedLine {
        file: file_name(meta_path),
        line: e.line(),
        message: e.to_string(),
    })?;
    if meta.node_types.is_empty() || meta.edge_types.is_empty() {
        return Err(Error::Validation(
            "meta.json must declare at least one node type and one edge type".into(),
        ));
    }
    let index = |names: &[String]| -> HashMap<String, usize> {
        names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
    };
    let node_types = index(&meta.node_types);
    let edge_types = index(&meta.edge_types);
    let label_names: HashMap<String, usize> = meta
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.clone(), i))
        .collect();

    let nodes_file = file_name(nodes_path);
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut original_ids = Vec::new();
    for (line_no, line) in read_lines(nodes_path)? {
        let rec: NodeLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            file: nodes_file.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let type_id = *node_types
            .get(&rec.node_type)
            .ok_or_else(|| Error::UnknownType {
                kind: "node",
                name: rec.node_type.clone(),
                line: line_no,
            })?;
        let label_id = match &rec.label {
            None => None,
            Some(name) => Some(*label_names.get(name).ok_or_else(|| Error::UnknownType {
                kind: "label",
                name: name.clone(),
                line: line_no,
            })?),
        };
        let text = normalize(&rec.text);
        if text.is_empty() {
            return Err(Error::MalformedLine {
                file: nodes_file.clone(),
                line: line_no,
                message: "node text is empty".into(),
            });
        }
        let node_id = nodes.len();
        if ids.insert(rec.id.clone(), node_id).is_some() {
            return Err(Error::DuplicateNode {
                line: line_no,
                id: rec.id,
            });
        }
        original_ids.push(rec.id);
        nodes.push(NodeRecord {
            node_id,
            type_id,
            text,
            label_id,
        });
    }

    let edges_file = file_name(edges_path);
    let mut edges = Vec::new();
    let mut type_text: HashMap<usize, Option<String>> = HashMap::new();
    for (line_no, line) in read_lines(edges_path)? {
        let rec: EdgeLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            file: edges_file.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let lookup = |id: &String| {
            ids.get(id).copied().ok_or_else(|| Error::DanglingEndpoint {
                line: line_no,
                id: id.clone(),
            })
        };
        let src = lookup(&rec.src)?;
        let dst = lookup(&rec.dst)?;
        let etype_id = *edge_types
            .get(&rec.edge_type)
            .ok_or_else(|| Error::UnknownType {
                kind: "edge",
                name: rec.edge_type.clone(),
                line: line_no,
            })?;
        let text = rec.text.as_deref().map(normalize).filter(|t| !t.is_empty());
        match type_text.get(&etype_id) {
            Some(prev) if *prev != text => {
                return Err(Error::MalformedLine {
                    file: edges_file.clone(),
                    line: line_no,
                    message: format!(
                        "edge text must be shared by all edges of type {:?}",
                        rec.edge_type
                    ),
                })
            }
            Some(_) => {}
            None => {
                type_text.insert(etype_id, text.clone());
            }
        }
        edges.push(EdgeRecord {
            src,
            dst,
            etype_id,
            text: text.clone(),
            mirrored: false,
        });
        if meta.undirected && src != dst {
            edges.push(EdgeRecord {
                src: dst,
                dst: src,
                etype_id,
                text,
                mirrored: true,
            });
        }
    }

    Ok(TextAttributedGraph::from_parts(
        nodes,
        edges,
        meta.node_types,
        meta.edge_types,
        meta.labels,
        meta.undirected,
        original_ids,
    ))
}

/// Writes the graph back out in the ingestion format, using original ids.
pub fn export_graph(g: &TextAttributedGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids = g.original_ids();

    let path = dir.join("nodes.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for n in g.nodes() {
        let line = NodeLine {
            id: ids[n.node_id].clone(),
            node_type: g.node_type_names()[n.type_id].clone(),
            text: n.text.clone(),
            label: n.label_id.map(|l| g.labels()[l].name.clone()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("edges.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for e in g.edges().iter().filter(|e| !e.mirrored) {
        let line = EdgeLine {
            src: ids[e.src].clone(),
            dst: ids[e.dst].clone(),
            edge_type: g.edge_type_names()[e.etype_id].clone(),
            text: e.text.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let meta = MetaFile {
        node_types: g.node_type_names().to_vec(),
        edge_types: g.edge_type_names().to_vec(),
        labels: g.labels().to_vec(),
        undirected: g.undirected(),
    };
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::GraphKind;

    fn write(dir: &Path, nodes: &str, edges: &str, meta: &str) {
        std::fs::write(dir.join("nodes.jsonl"), nodes).unwrap();
        std::fs::write(dir.join("edges.jsonl"), edges).unwrap();
        std::fs::write(dir.join("meta.json"), meta).unwrap();
    }

    const META_HO: &str = r#"{"node_types":["paper"],"edge_types":["cites"],"labels":[{"name":"ml","text":"machine learning"}],"undirected":false}"#;

    #[test]
    fn single_type_graph_is_hotag() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"x\",\"type\":\"paper\",\"text\":\"a  b\",\"label\":\"ml\"}\n{\"id\":\"y\",\"type\":\"paper\",\"text\":\"c\",\"label\":null}\n",
            "{\"src\":\"x\",\"dst\":\"y\",\"type\":\"cites\",\"text\":null}\n",
            META_HO,
        );
        let g = ingest_graph_dir(dir.path()).unwrap();
        assert_eq!(g.kind(), GraphKind::HoTag);
        assert_eq!(g.node(0).text, "a b");
        assert_eq!(g.node(0).label_id, Some(0));
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn empty_edges_file_gives_isolated_nodes() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"x\",\"type\":\"paper\",\"text\":\"a\"}\n",
            "",
            META_HO,
        );
        let g = ingest_graph_dir(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn dangling_endpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"1\",\"type\":\"paper\",\"text\":\"a\"}\n",
            "{\"src\":\"1\",\"dst\":\"999\",\"type\":\"cites\"}\n",
            META_HO,
        );
        let err = ingest_graph_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dangling endpoint"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"1\",\"type\":\"paper\",\"text\":\"a\"}\n{not json\n",
            "",
            META_HO,
        );
        match ingest_graph_dir(dir.path()).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_type() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"1\",\"type\":\"paper\",\"text\":\"a\"}\n{\"id\":\"1\",\"type\":\"paper\",\"text\":\"b\"}\n",
            "",
            META_HO,
        );
        assert!(matches!(
            ingest_graph_dir(dir.path()).unwrap_err(),
            Error::DuplicateNode { line: 2, .. }
        ));
        write(
            dir.path(),
            "{\"id\":\"1\",\"type\":\"author\",\"text\":\"a\"}\n",
            "",
            META_HO,
        );
        assert!(matches!(
            ingest_graph_dir(dir.path()).unwrap_err(),
            Error::UnknownType { kind: "node", .. }
        ));
    }

    #[test]
    fn undirected_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "{\"id\":\"p1\",\"type\":\"paper\",\"text\":\"deep nets\",\"label\":\"ml\"}\n{\"id\":\"a1\",\"type\":\"author\",\"text\":\"ada\"}\n",
            "{\"src\":\"a1\",\"dst\":\"p1\",\"type\":\"writes\",\"text\":\"first author\"}\n",
            r#"{"node_types":["paper","author"],"edge_types":["writes"],"labels":[{"name":"ml","text":"machine learning"}],"undirected":true}"#,
        );
        let g = ingest_graph_dir(dir.path()).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        let out = tempfile::tempdir().unwrap();
        export_graph(&g, out.path()).unwrap();
        let g2 = ingest_graph_dir(out.path()).unwrap();
        assert_eq!(g, g2);
    }
}

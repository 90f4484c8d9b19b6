//! Seeded synthetic text-attributed graphs with a planted context rule.
//!
//! Every labeled item belongs to one of `C` classes, each tied to a color
//! word. An item's own text shows its class color only with probability
//! `own_color_prob` (otherwise a random color), and it links to a few hub
//! nodes of its class whose texts carry random colors. The class is thus
//! weakly visible from the item alone, invisible from its 1-hop hubs, and
//! strongly visible from the items reached in two hops. The heterogeneous
//! variant adds "venue" hubs that link items across classes, so context
//! reached through them is noise.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph_store::{EdgeRecord, LabelText, NodeRecord, TextAttributedGraph};
use crate::rng::{rng_for, stream, Rng};

pub const COLORS: [&str; 8] = ["red", "green", "blue", "amber", "violet", "teal", "coral", "olive"];

const PRIMARY_WORDS: [&str; 16] = [
    "graph", "study", "model", "result", "method", "network", "signal", "analysis", "theory", "system",
    "design", "survey", "record", "sample", "measure", "report",
];

const TRANSFER_WORDS: [&str; 16] = [
    "harbor", "lantern", "meadow", "pebble", "quarry", "saddle", "thicket", "willow", "anvil", "bramble",
    "cinder", "dune", "ember", "fjord", "glacier", "hollow",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    HoTag,
    HeTag,
}

/// Word lists and type names; the transfer flavor shares only colors and labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Primary,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub flavor: Flavor,
    pub classes: usize,
    pub items: usize,
    /// Class hubs (authors in the heterogeneous variant).
    pub hubs: usize,
    /// Cross-class hubs, heterogeneous variant only.
    pub venues: usize,
    pub hubs_per_item: usize,
    pub own_color_prob: f64,
    /// Chance that an item's hub link goes to a hub of another class.
    pub cross_link_prob: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// About `nodes` nodes of the given kind with the default rule strength.
    pub fn sized(kind: SynthKind, flavor: Flavor, nodes: usize, seed: u64) -> Self {
        let (items, hubs, venues) = match kind {
            SynthKind::HoTag => (nodes * 4 / 5, nodes - nodes * 4 / 5, 0),
            SynthKind::HeTag => {
                let venues = nodes / 20;
                (nodes * 3 / 4, nodes - nodes * 3 / 4 - venues, venues)
            }
        };
        SynthConfig {
            kind,
            flavor,
            classes: 4,
            items,
            hubs,
            venues,
            hubs_per_item: 3,
            own_color_prob: 0.5,
            cross_link_prob: 0.05,
            seed,
        }
    }
}

/// Label texts shared by every synthetic graph with `classes` classes.
pub fn label_texts(classes: usize) -> Vec<LabelText> {
    COLORS[..classes]
        .iter()
        .map(|c| LabelText {
            name: c.to_string(),
            text: format!("category {c}"),
        })
        .collect()
}

struct Names {
    node_types: Vec<&'static str>,
    edge_types: Vec<&'static str>,
    words: &'static [&'static str],
}

fn names(kind: SynthKind, flavor: Flavor) -> Names {
    let words: &'static [&'static str] = match flavor {
        Flavor::Primary => &PRIMARY_WORDS,
        Flavor::Transfer => &TRANSFER_WORDS,
    };
    let (node_types, edge_types) = match (kind, flavor) {
        (SynthKind::HoTag, Flavor::Primary) => (vec!["node"], vec!["link"]),
        (SynthKind::HoTag, Flavor::Transfer) => (vec!["entity"], vec!["relates"]),
        (SynthKind::HeTag, Flavor::Primary) => (vec!["paper", "author", "venue"], vec!["writes", "appears_in"]),
        (SynthKind::HeTag, Flavor::Transfer) => {
            (vec!["article", "writer", "journal"], vec!["authored", "listed_in"])
        }
    };
    Names {
        node_types,
        edge_types,
        words,
    }
}

fn text(rng: &mut Rng, head: &str, words: &[&str], color: &str) -> String {
    let a = words.choose(rng).expect("non-empty word list");
    let b = words.choose(rng).expect("non-empty word list");
    format!("{head} {a} {b} {color}")
}

/// Generates the graph described by `cfg`. Items come first (ids
/// `0..items`), then class hubs, then venues. Items are labeled; hubs are not.
pub fn generate(cfg: &SynthConfig) -> TextAttributedGraph {
    assert!(cfg.classes >= 1 && cfg.classes <= COLORS.len(), "1..=8 classes supported");
    assert!(cfg.hubs >= cfg.classes, "need at least one hub per class");
    let mut rng = rng_for(cfg.seed, &[stream::SYNTH]);
    let nm = names(cfg.kind, cfg.flavor);
    let colors = &COLORS[..cfg.classes];
    let hetero = cfg.kind == SynthKind::HeTag;
    let (item_t, hub_t, venue_t) = if hetero { (0, 1, 2) } else { (0, 0, 0) };
    let (item_word, hub_word, venue_word) = if hetero {
        (nm.node_types[0], nm.node_types[1], nm.node_types[2])
    } else {
        (nm.node_types[0], nm.node_types[0], nm.node_types[0])
    };

    let mut nodes = Vec::new();
    let mut labels = Vec::with_capacity(cfg.items);
    for i in 0..cfg.items {
        let class = rng.random_range(0..cfg.classes);
        labels.push(class);
        let color = if rng.random_bool(cfg.own_color_prob) {
            colors[class]
        } else {
            *COLORS.choose(&mut rng).unwrap()
        };
        nodes.push(NodeRecord {
            node_id: i,
            type_id: item_t,
            text: text(&mut rng, item_word, nm.words, color),
            label_id: Some(class),
        });
    }
    // hub h belongs to class h % classes
    let hub0 = cfg.items;
    for h in 0..cfg.hubs {
        let color = *COLORS.choose(&mut rng).unwrap();
        nodes.push(NodeRecord {
            node_id: hub0 + h,
            type_id: hub_t,
            text: text(&mut rng, hub_word, nm.words, color),
            label_id: None,
        });
    }
    let venue0 = hub0 + cfg.hubs;
    let venues = if hetero { cfg.venues } else { 0 };
    for v in 0..venues {
        let color = *COLORS.choose(&mut rng).unwrap();
        nodes.push(NodeRecord {
            node_id: venue0 + v,
            type_id: venue_t,
            text: text(&mut rng, venue_word, nm.words, color),
            label_id: None,
        });
    }

    let by_class: Vec<Vec<usize>> = (0..cfg.classes)
        .map(|c| (0..cfg.hubs).filter(|h| h % cfg.classes == c).map(|h| hub0 + h).collect())
        .collect();
    let mut edges = Vec::new();
    let push = |src: usize, dst: usize, etype: usize, edges: &mut Vec<EdgeRecord>| {
        for (s, d, mirrored) in [(src, dst, false), (dst, src, true)] {
            edges.push(EdgeRecord {
                src: s,
                dst: d,
                etype_id: etype,
                text: None,
                mirrored,
            });
        }
    };
    for (i, &class) in labels.iter().enumerate() {
        let mut chosen: Vec<usize> = Vec::with_capacity(cfg.hubs_per_item);
        let mut guard = 0;
        while chosen.len() < cfg.hubs_per_item && guard < 100 * cfg.hubs_per_item {
            guard += 1;
            let pool = if rng.random_bool(cfg.cross_link_prob) {
                &by_class[rng.random_range(0..cfg.classes)]
            } else {
                &by_class[class]
            };
            let h = *pool.choose(&mut rng).unwrap();
            if !chosen.contains(&h) {
                chosen.push(h);
            }
        }
        chosen.sort_unstable();
        for h in chosen {
            // hubs author items in the heterogeneous variant
            if hetero {
                push(h, i, 0, &mut edges);
            } else {
                push(i, h, 0, &mut edges);
            }
        }
        if venues > 0 {
            let v = venue0 + rng.random_range(0..venues);
            push(i, v, 1, &mut edges);
        }
    }
    let n = nodes.len();
    let edge_types: Vec<String> = if hetero {
        nm.edge_types.iter().map(|s| s.to_string()).collect()
    } else {
        vec![nm.edge_types[0].to_string()]
    };
    let node_types: Vec<String> = if hetero {
        nm.node_types.iter().map(|s| s.to_string()).collect()
    } else {
        vec![nm.node_types[0].to_string()]
    };
    TextAttributedGraph::from_parts(
        nodes,
        edges,
        node_types,
        edge_types,
        label_texts(cfg.classes),
        true,
        (0..n).map(|i| format!("n{i}")).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::GraphKind;

    #[test]
    fn kinds_and_sizes() {
        let ho = generate(&SynthConfig::sized(SynthKind::HoTag, Flavor::Primary, 1000, 1));
        assert_eq!(ho.kind(), GraphKind::HoTag);
        assert_eq!(ho.num_nodes(), 1000);
        let he = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, 1000, 1));
        assert_eq!(he.kind(), GraphKind::HeTag);
        assert_eq!(he.num_nodes(), 1000);
        assert_eq!(he.num_classes(), 4);
        // 3 hub links plus one venue per item, each stored in both directions
        assert_eq!(he.num_edges(), 750 * 4 * 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = SynthConfig::sized(SynthKind::HeTag, Flavor::Transfer, 300, 9);
        assert_eq!(generate(&c), generate(&c));
        let d = SynthConfig { seed: 10, ..c.clone() };
        assert_ne!(generate(&c), generate(&d));
    }

    #[test]
    fn hubs_mostly_serve_one_class() {
        let cfg = SynthConfig::sized(SynthKind::HoTag, Flavor::Primary, 500, 2);
        let g = generate(&cfg);
        let (mut same, mut total) = (0, 0);
        for i in 0..cfg.items {
            let class = g.node(i).label_id.unwrap();
            for h in g.neighbors(i) {
                total += 1;
                same += usize::from((h - cfg.items) % cfg.classes == class);
            }
        }
        assert!(same as f64 / total as f64 > 0.9);
    }

    #[test]
    fn flavors_share_only_colors() {
        let a = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, 200, 3));
        let b = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Transfer, 200, 3));
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a.node_type_names(), b.node_type_names());
        let words = |g: &TextAttributedGraph| -> std::collections::HashSet<String> {
            g.nodes()
                .iter()
                .flat_map(|n| n.text.split(' ').map(String::from).collect::<Vec<_>>())
                .filter(|w| !COLORS.contains(&w.as_str()))
                .collect()
        };
        assert!(words(&a).is_disjoint(&words(&b)));
    }
}

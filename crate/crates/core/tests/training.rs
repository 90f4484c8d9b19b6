use h2gfm::autodiff::Dtype;
use h2gfm::config::RunConfig;
use h2gfm::exec::ExecMode;
use h2gfm::feature_space::{build_meta_relation_texts, EmbeddingTable, FeatureSet, KeyKind};
use h2gfm::graph_store::{build_nc_splits, EdgeRecord, LabelText, NodeRecord, TextAttributedGraph};
use h2gfm::synthetic::{generate, Flavor, SynthConfig, SynthKind};
use h2gfm::trainer::{cotrain, evaluate, Dataset, EvalMode, EvalSplit, TrainOptions, TrainingJob};

fn small_config() -> RunConfig {
    RunConfig {
        dim: 16,
        hidden: 16,
        out: 16,
        head_hidden: 16,
        n_walks: 6,
        l_max: 2,
        n_experts: 3,
        k_active: 2,
        batch_size: 32,
        lr: 1e-2,
        dropout: 0.0,
        max_epochs: 150,
        patience: 150,
        ..Default::default()
    }
}

/// Three classes of ten nodes, each class a ring. Every node's feature is
/// its class's label vector, so the classes are linearly separable in
/// label-embedding space.
fn separable() -> Dataset {
    const CLASSES: usize = 3;
    const PER: usize = 10;
    let dim = small_config().dim;
    let n = CLASSES * PER;
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| NodeRecord { node_id: i, type_id: 0, text: format!("item {i}"), label_id: Some(i / PER) })
        .collect();
    let mut edges = Vec::new();
    for c in 0..CLASSES {
        for j in 0..PER {
            let (a, b) = (c * PER + j, c * PER + (j + 1) % PER);
            for (src, dst, mirrored) in [(a, b, false), (b, a, true)] {
                edges.push(EdgeRecord { src, dst, etype_id: 0, text: None, mirrored });
            }
        }
    }
    let labels = (0..CLASSES)
        .map(|c| LabelText { name: format!("c{c}"), text: format!("class {c}") })
        .collect();
    let g = TextAttributedGraph::from_parts(
        nodes,
        edges,
        vec!["item".into()],
        vec!["link".into()],
        labels,
        true,
        (0..n).map(|i| format!("n{i}")).collect(),
    );
    let onehot = |c: usize| (0..dim).map(|k| if k == c { 1.0 } else { 0.0 }).collect::<Vec<f32>>();
    let node_rows: Vec<Vec<f32>> = (0..n).map(|i| onehot(i / PER)).collect();
    let label_rows: Vec<Vec<f32>> = (0..CLASSES).map(onehot).collect();
    let vocab = build_meta_relation_texts(&g);
    let rel_rows: Vec<Vec<f32>> = (0..vocab.len()).map(|r| onehot(CLASSES + r)).collect();
    let features = FeatureSet::new(
        EmbeddingTable::from_rows(KeyKind::NodeText, dim, &node_rows).unwrap(),
        EmbeddingTable::from_rows(KeyKind::MetaRelation, dim, &rel_rows).unwrap(),
        Some(EmbeddingTable::from_rows(KeyKind::LabelText, dim, &label_rows).unwrap()),
    )
    .unwrap();
    Dataset::new("separable", g, features).unwrap()
}

#[test]
fn separable_fixture_reaches_perfect_train_accuracy() {
    let ds = vec![separable()];
    let split = build_nc_splits(&ds[0].graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
    let jobs = vec![TrainingJob { dataset: 0, split, batch_size: None }];
    let cfg = RunConfig { precision: Dtype::F64, ..small_config() };
    let out = cotrain::<f64>(&ds, &jobs, &cfg, None, &TrainOptions::default()).unwrap();
    let report = evaluate(&out.state, &ds, &jobs[0], EvalSplit::Train, EvalMode::Test, ExecMode::Parallel).unwrap();
    assert_eq!(report.metric, "acc");
    assert_eq!(report.value, 1.0, "train accuracy {}", report.value);
}

#[test]
fn zero_shot_handles_a_different_class_count() {
    let cfg = RunConfig { max_epochs: 2, ..small_config() };
    let four = generate(&SynthConfig::sized(SynthKind::HoTag, Flavor::Primary, 150, 1));
    let mut three_cfg = SynthConfig::sized(SynthKind::HeTag, Flavor::Transfer, 150, 2);
    three_cfg.classes = 3;
    let three = generate(&three_cfg);
    assert_eq!((four.num_classes(), three.num_classes()), (4, 3));

    let ds = vec![Dataset::with_fallback("four", four, cfg.dim, 0), Dataset::with_fallback("three", three, cfg.dim, 0)];
    let jobs: Vec<TrainingJob> = ds
        .iter()
        .enumerate()
        .map(|(i, d)| TrainingJob {
            dataset: i,
            split: build_nc_splits(&d.graph, (0.6, 0.2, 0.2), 0, None, None).unwrap(),
            batch_size: None,
        })
        .collect();
    let out = cotrain::<f32>(&ds, &jobs[..1], &cfg, None, &TrainOptions::default()).unwrap();
    let report = evaluate(&out.state, &ds, &jobs[1], EvalSplit::Test, EvalMode::ZeroShot, ExecMode::Sequential).unwrap();
    assert!(report.count > 0);
    assert!((0.0..=1.0).contains(&report.value));
}

#[test]
fn single_precision_runs_agree_to_five_digits() {
    let g = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, 150, 4));
    let cfg = RunConfig { max_epochs: 3, dropout: 0.1, ..small_config() };
    let ds = vec![Dataset::with_fallback("he", g, cfg.dim, 0)];
    let split = build_nc_splits(&ds[0].graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
    let jobs = vec![TrainingJob { dataset: 0, split, batch_size: None }];
    let run = |mode| {
        let opts = TrainOptions { mode, ..Default::default() };
        cotrain::<f32>(&ds, &jobs, &cfg, None, &opts).unwrap().history
    };
    let (a, b) = (run(ExecMode::Parallel), run(ExecMode::Sequential));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let (lx, ly) = (x.jobs[0].loss, y.jobs[0].loss);
        assert!((lx - ly).abs() <= 1e-5 * lx.abs().max(ly.abs()), "{lx} vs {ly}");
    }
}

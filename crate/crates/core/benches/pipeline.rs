use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use h2gfm::config::RunConfig;
use h2gfm::context_sampler::{context_seed, sample_context};
use h2gfm::exec::{self, ExecMode};
use h2gfm::graph_store::build_nc_splits;
use h2gfm::synthetic::{generate, Flavor, SynthConfig, SynthKind};
use h2gfm::trainer::{cotrain, evaluate, Dataset, EvalMode, EvalSplit, ModelState, TrainOptions, TrainingJob};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn bench_config() -> RunConfig {
    RunConfig {
        dim: 32,
        hidden: 32,
        out: 32,
        head_hidden: 32,
        n_walks: 20,
        n_experts: 4,
        k_active: 2,
        batch_size: 128,
        max_epochs: 1,
        ..Default::default()
    }
}

fn setup(nodes: usize) -> (Vec<Dataset>, Vec<TrainingJob>) {
    let g = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, nodes, 1));
    let ds = Dataset::with_fallback("bench", g, 32, 0);
    let split = build_nc_splits(&ds.graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
    (vec![ds], vec![TrainingJob { dataset: 0, split, batch_size: None }])
}

fn sampling(c: &mut Criterion) {
    let (ds, _) = setup(2000);
    let g = &ds[0].graph;
    let nodes: Vec<usize> = (0..g.num_nodes()).collect();
    let cfg = bench_config().sampler();
    let mut group = c.benchmark_group("context_sampling");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec::map(mode, &nodes, |&u| sample_context(g, &ds[0].vocab, u, cfg, context_seed(0, 0, 0, u))))
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (ds, jobs) = setup(1000);
    let state = ModelState::<f32>::new(bench_config()).unwrap();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&state, &ds, &jobs[0], EvalSplit::Train, EvalMode::Test, mode).unwrap())
        });
    }
    group.finish();
}

fn epoch(c: &mut Criterion) {
    let (ds, jobs) = setup(1000);
    let cfg = bench_config();
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, mode) in MODES {
        let opts = TrainOptions { mode, ..Default::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cotrain::<f32>(&ds, &jobs, &cfg, None, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sampling, evaluation, epoch);
criterion_main!(benches);

//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line
//! with the measured numbers; the process exits non-zero if any check fails.
//!
//! Tolerances and desk-scale settings are pinned below so results can be
//! compared across runs.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use h2gfm::autodiff::gradcheck::{check_params, LOSS_SCALE};
use h2gfm::autodiff::{Dtype, ParamStore, Tape};
use h2gfm::cgt_layer::{aggregate, attention_scores, film_message, CgtDims, CgtParams, ForwardCtx, LayerInputs};
use h2gfm::config::{Ablation, RunConfig};
use h2gfm::context_encoding::{encode_path, encode_path_pooled, PathPooling};
use h2gfm::exec::ExecMode;
use h2gfm::graph_store::{build_lp_splits, build_nc_splits};
use h2gfm::model::{GraphInput, Model, Sampling, Tables};
use h2gfm::moe_gating::{gate, gate_noise, mixture_forward, GateParams, MoeLayer};
use h2gfm::rng::{rng_for, Rng};
use h2gfm::synthetic::{generate, Flavor, SynthConfig, SynthKind};
use h2gfm::task_heads::{lp_loss, nc_loss, LpHead, NcHead};
use h2gfm::trainer::{
    cotrain, evaluate, finetune, Dataset, EvalMode, EvalSplit, ModelState, TrainOptions, TrainingJob,
};
use ndarray::{Array1, Array2};
use rand::Rng as _;

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_FIXTURES: u64 = 3;
const GRAD_BUDGET_SECS: f64 = 120.0;

const ORACLE_PATHS: usize = 1000;

const GATINGS: usize = 10_000;
const GATE_SUM_TOL: f64 = 1e-6;

const SYNTH_NODES: usize = 1000;
const TRAIN_ACC_MIN: f64 = 0.90;
const HELD_OUT_ACC_MIN: f64 = 0.80;
const LP_AUC_MIN: f64 = 0.90;
const COTRAIN_BUDGET_SECS: f64 = 300.0;

const CLASSES: usize = 4;
const ZERO_SHOT_FACTOR: f64 = 2.0;
const FINETUNE_EPOCHS: usize = 50;
const FINETUNE_GAIN_MIN: f64 = 0.05;

const ABLATION_SEEDS: u64 = 5;
const ABLATION_NODES: usize = 600;
const ABLATION_EPOCHS: usize = 40;
const ABLATION_MARGIN: f64 = 0.02;
/// Slack for the ordering comparisons among full, no_moe and no_cgt; only
/// the no_context_graph margin is a hard requirement.
const ABLATION_APPROX: f64 = 0.02;

const SCALING_SIZES: [usize; 5] = [1000, 2000, 3000, 4000, 5000];
/// Wall-clock noise on a shared machine only ever adds time, so the fastest
/// of several repeats is the estimate.
const SCALING_REPEATS: usize = 5;
const SCALING_R2_MIN: f64 = 0.95;

/// Desk-scale model used by the end-to-end criteria.
fn desk_config(seed: u64) -> RunConfig {
    RunConfig {
        dim: 128,
        hidden: 32,
        out: 32,
        head_hidden: 32,
        n_walks: 30,
        l_max: 4,
        n_experts: 4,
        k_active: 2,
        lr: 5e-3,
        dropout: 0.1,
        batch_size: 128,
        max_epochs: 300,
        patience: 20,
        seed,
        ..Default::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Moves FiLM weights and biases off zero so no pre-activation sits on the
/// LeakyReLU kink, where central differences are undefined.
fn lift_film(store: &mut ParamStore<f64>, p: &CgtParams, rng: &mut Rng) {
    for (id, lo, hi) in [
        (p.w_gamma, -0.3, 0.3),
        (p.b_gamma, 0.2, 0.8),
        (p.w_beta, -0.3, 0.3),
        (p.b_beta, 0.2, 0.8),
    ] {
        store.value_mut(id).mapv_inplace(|_| rng.random_range(lo..hi));
    }
}

struct LayerFixture {
    store: ParamStore<f64>,
    p: CgtParams,
    targets: Array2<f64>,
    neighbors: Array2<f64>,
    paths: Array2<f64>,
    offsets: Vec<usize>,
    probe: Array2<f64>,
}

fn layer_fixture(seed: u64) -> LayerFixture {
    let mut rng = rng_for(seed, &[0xacc]);
    let mut store = ParamStore::default();
    let dims = CgtDims { d_in: 4, d_out: 3, d_path: 5 };
    let p = CgtParams::register(&mut store, "cgt", dims, &mut rng);
    lift_film(&mut store, &p, &mut rng);
    LayerFixture {
        targets: rand_mat(3, 4, &mut rng),
        neighbors: rand_mat(7, 4, &mut rng),
        paths: rand_mat(7, 5, &mut rng),
        offsets: vec![0, 3, 4, 7],
        probe: rand_mat(7, 3, &mut rng),
        store,
        p,
    }
}

impl LayerFixture {
    fn inputs(&self, t: &mut Tape<'_, f64>) -> LayerInputs {
        LayerInputs {
            targets: t.constant(self.targets.clone()),
            neighbors: t.constant(self.neighbors.clone()),
            paths: t.constant(self.paths.clone()),
            offsets: self.offsets.clone(),
        }
    }
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |block: &str, err: f64| match worst.iter_mut().find(|(b, _)| b == block) {
        Some((_, e)) => *e = e.max(err),
        None => worst.push((block.to_string(), err)),
    };
    for seed in 0..GRAD_FIXTURES {
        let f = layer_fixture(seed);
        let attention = check_params(&f.store, GRAD_STEP, |t| {
            let x = f.inputs(t);
            let a = attention_scores(t, &f.p, &x, 0.01)?;
            let y = t.mul_const(a, f.probe.column(0).to_owned().insert_axis(ndarray::Axis(1)) * LOSS_SCALE)?;
            t.sum(y)
        })
        .unwrap();
        record("attention", attention.max_rel_error);
        let film = check_params(&f.store, GRAD_STEP, |t| {
            let x = f.inputs(t);
            let m = film_message(t, &f.p, x.neighbors, x.paths, 0.01)?;
            let y = t.mul_const(m, f.probe.clone() * LOSS_SCALE)?;
            t.sum(y)
        })
        .unwrap();
        record("film", film.max_rel_error);
        let agg = check_params(&f.store, GRAD_STEP, |t| {
            let x = f.inputs(t);
            let mut rng = rng_for(0, &[]);
            let out = aggregate(t, &f.p, &x, &mut ForwardCtx::eval(&mut rng))?;
            let probe = f.probe.slice(ndarray::s![0..3, ..]).to_owned();
            let y = t.mul_const(out.h, probe * LOSS_SCALE)?;
            t.sum(y)
        })
        .unwrap();
        record("aggregation", agg.max_rel_error);

        let mut rng = rng_for(seed, &[0x9a7e]);
        let mut store = ParamStore::<f64>::default();
        let g = GateParams::register(&mut store, "gate", 5, 8, 4, &mut rng).unwrap();
        let h = rand_mat(6, 5, &mut rng);
        let probe = rand_mat(6, 8, &mut rng);
        let r = check_params(&store, GRAD_STEP, |t| {
            let hv = t.constant(h.clone());
            let out = gate(t, &g, hv, None)?;
            let y = t.mul_const(out.weights, probe.clone() * LOSS_SCALE)?;
            t.sum(y)
        })
        .unwrap();
        record("gate", r.max_rel_error);

        let mut rng = rng_for(seed, &[0x4ead]);
        let mut store = ParamStore::<f64>::default();
        let nc = NcHead::register(&mut store, "nc", 3, 4, 5, &mut rng);
        let lp = LpHead::register(&mut store, "lp", 3, 5, &mut rng);
        for id in [nc.mlp.b1, nc.mlp.b2, lp.mlp.b1, lp.mlp.b2] {
            store.value_mut(id).mapv_inplace(|_| rng.random_range(0.05..0.5));
        }
        let (hu, hv, labels) = (rand_mat(4, 3, &mut rng), rand_mat(4, 3, &mut rng), rand_mat(3, 4, &mut rng));
        let r = check_params(&store, GRAD_STEP, |t| {
            let a = t.constant(hu.clone());
            let y = t.constant(labels.clone());
            let z = nc.logits(t, a, y, 0.01)?;
            let l = nc_loss(t, z, &[0, 2, 1, 2])?;
            t.scale(l, LOSS_SCALE)
        })
        .unwrap();
        record("nc_head", r.max_rel_error);
        let r = check_params(&store, GRAD_STEP, |t| {
            let a = t.constant(hu.clone());
            let b = t.constant(hv.clone());
            let z = lp.logits(t, a, b, 0.01)?;
            let l = lp_loss(t, z, &[true, false, true, false])?;
            t.scale(l, LOSS_SCALE)
        })
        .unwrap();
        record("lp_head", r.max_rel_error);

        record("full_pipeline", full_pipeline_error(seed));
    }
    let secs = started.elapsed().as_secs_f64();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(b, e)| format!("{b}={e:.1e}")).collect();
    outcome(
        max < GRAD_TOL && secs < GRAD_BUDGET_SECS,
        format!("{} fixtures/block, max rel err {max:.2e} ({}), {secs:.1}s", GRAD_FIXTURES, parts.join(" ")),
    )
}

fn full_pipeline_error(seed: u64) -> f64 {
    let g = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, 40, seed));
    let ds = Dataset::with_fallback("fixture", g, 6, seed);
    let tables = Tables::<f64>::from_features(&ds.features);
    let input = GraphInput {
        graph: &ds.graph,
        vocab: &ds.vocab,
        tables: &tables,
    };
    let cfg = RunConfig {
        dim: 6,
        hidden: 5,
        out: 4,
        layers: 2,
        n_walks: 4,
        l_max: 3,
        n_experts: 3,
        k_active: 2,
        head_hidden: 5,
        precision: Dtype::F64,
        seed,
        ..Default::default()
    };
    let mut m = Model::<f64>::new(cfg).unwrap();
    let mut rng = rng_for(seed, &[0xf11]);
    let experts: Vec<CgtParams> = m.arch.layers.iter().flat_map(|l| l.experts.clone()).collect();
    for e in &experts {
        lift_film(&mut m.params, e, &mut rng);
    }
    let heads = [m.arch.nc.mlp.b1, m.arch.nc.mlp.b2, m.arch.lp.mlp.b1, m.arch.lp.mlp.b2];
    for id in heads {
        m.params.value_mut(id).mapv_inplace(|_| rng.random_range(0.05..0.5));
    }
    let labelled: Vec<usize> = (0..ds.graph.num_nodes()).filter(|&u| ds.graph.node(u).label_id.is_some()).take(3).collect();
    let y: Vec<usize> = labelled.iter().map(|&u| ds.graph.node(u).label_id.unwrap()).collect();
    let r = check_params(&m.params, GRAD_STEP, |t| {
        let mut rng = rng_for(0, &[]);
        let mut ctx = ForwardCtx::eval(&mut rng);
        let s = Sampling::eval(ExecMode::Sequential);
        let (z, _) = m.nc_logits(t, input, &labelled, s, &mut ctx)?;
        let a = nc_loss(t, z, &y)?;
        let (z, _) = m.lp_logits(t, input, &[(labelled[0], labelled[1]), (labelled[1], labelled[2])], s, &mut ctx)?;
        let b = lp_loss(t, z, &[true, false])?;
        let l = t.add(a, b)?;
        t.scale(l, LOSS_SCALE)
    })
    .unwrap();
    r.max_rel_error
}

fn encoding_oracle() -> Outcome {
    let mut rng = rng_for(7, &[0xe4c]);
    let (rels, dim) = (12, 16);
    let table = rand_mat(rels, dim, &mut rng);
    let mut mismatches = 0;
    for _ in 0..ORACLE_PATHS {
        let len = rng.random_range(1..=6);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..rels)).collect();
        let got = encode_path(&ids, table.view()).unwrap();
        let mut want = Array1::<f64>::zeros(dim);
        for (m, &r) in ids.iter().enumerate() {
            let w = 1.0 / (m + 1) as f64;
            for j in 0..dim {
                want[j] += w * table[[r, j]];
            }
        }
        mismatches += usize::from(got != want);
    }
    // symmetric relation texts make P-A and A-P embed identically
    let r = table.row(0).to_owned();
    let sym = ndarray::stack![ndarray::Axis(0), r.view(), r.view()];
    let (pap, papap) = ([0usize, 1], [0usize, 1, 0, 1]);
    let harmonic_differs = encode_path(&pap, sym.view()).unwrap() != encode_path(&papap, sym.view()).unwrap();
    let pool = |p: &[usize]| encode_path_pooled(p, sym.view(), PathPooling::Mean).unwrap();
    let mean_equal = pool(&pap) == pool(&papap);
    outcome(
        mismatches == 0 && harmonic_differs && mean_equal,
        format!(
            "{mismatches}/{ORACLE_PATHS} oracle mismatches; P-A-P vs P-A-P-A-P harmonic differ={harmonic_differs}, mean equal={mean_equal}"
        ),
    )
}

fn moe_invariants() -> Outcome {
    let (n, k) = (8, 4);
    let mut rng = rng_for(11, &[0x90e]);
    let mut store = ParamStore::<f64>::default();
    let dims = CgtDims { d_in: 6, d_out: 4, d_path: 5 };
    let layer = MoeLayer::register(&mut store, "moe", dims, n, k, &mut rng).unwrap();
    for e in &layer.experts {
        lift_film(&mut store, e, &mut rng);
    }
    // random gate weights make the selections vary
    for id in [layer.gate.w_g, layer.gate.w_eps] {
        store.value_mut(id).mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    let (mut bad_count, mut worst_sum, mut rows) = (0, 0.0f64, 0);
    while rows < GATINGS {
        let b = 100.min(GATINGS - rows);
        let mut t = Tape::with_params(&store);
        let h = t.constant(rand_mat(b, 6, &mut rng));
        let noise = gate_noise::<f64>(b, n, &mut rng);
        let out = gate(&mut t, &layer.gate, h, Some(&noise)).unwrap();
        for row in t.value(out.weights).rows() {
            let positive = row.iter().filter(|&&w| w > 0.0).count();
            bad_count += usize::from(positive != k);
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }
        rows += b;
    }

    let (mut leaked, mut runs_off) = (0, 0);
    for trial in 0..200 {
        let mut t = Tape::with_params(&store);
        let x = LayerInputs {
            targets: t.constant(rand_mat(1, 6, &mut rng)),
            neighbors: t.constant(rand_mat(3, 6, &mut rng)),
            paths: t.constant(rand_mat(3, 5, &mut rng)),
            offsets: vec![0, 3],
        };
        let mut r = rng_for(trial, &[]);
        let mut ctx = ForwardCtx::eval(&mut r);
        let out = mixture_forward(&mut t, &layer, &x, None, &mut ctx).unwrap();
        runs_off += usize::from(ctx.stats.expert_runs != k);
        let loss = t.sum(out.h).unwrap();
        let grads = t.backward(loss).unwrap();
        let mut s = store.clone();
        s.zero_grad();
        s.accumulate(&grads);
        for (i, e) in layer.experts.iter().enumerate() {
            if !out.gate.selected[0].contains(&i) {
                let norm: f64 = e.ids().iter().map(|&id| s.grad_norm(id)).sum();
                leaked += usize::from(norm != 0.0);
            }
        }
    }
    outcome(
        bad_count == 0 && worst_sum <= GATE_SUM_TOL && leaked == 0 && runs_off == 0,
        format!(
            "{GATINGS} gatings n={n} k={k}: {bad_count} without exactly k positive, max |sum-1|={worst_sum:.1e}; \
             200 routed targets: {leaked} unselected experts with gradient, {runs_off} with expert runs != k"
        ),
    )
}

struct Suite {
    datasets: Vec<Dataset>,
    jobs: Vec<TrainingJob>,
}

fn synthetic_suite(nodes: usize, dim: usize, with_lp: bool) -> Suite {
    let ho = generate(&SynthConfig::sized(SynthKind::HoTag, Flavor::Primary, nodes, 1));
    let he = generate(&SynthConfig::sized(SynthKind::HeTag, Flavor::Primary, nodes, 2));
    let datasets = vec![
        Dataset::with_fallback("synthetic-hotag", ho, dim, 0),
        Dataset::with_fallback("synthetic-hetag", he, dim, 0),
    ];
    let nc = |d: &Dataset| build_nc_splits(&d.graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
    let mut jobs = vec![
        TrainingJob { dataset: 0, split: nc(&datasets[0]), batch_size: None },
        TrainingJob { dataset: 1, split: nc(&datasets[1]), batch_size: None },
    ];
    if with_lp {
        let lp = build_lp_splits(&datasets[1].graph, (0.8, 0.1, 0.1), 0, Some(600), Some(300)).unwrap();
        jobs.push(TrainingJob { dataset: 1, split: lp, batch_size: None });
    }
    Suite { datasets, jobs }
}

fn score(state: &ModelState<f32>, s: &Suite, job: usize, split: EvalSplit) -> f64 {
    evaluate(state, &s.datasets, &s.jobs[job], split, EvalMode::Test, ExecMode::Parallel)
        .unwrap()
        .value
}

fn cotraining(trained: &mut Option<ModelState<f32>>) -> Outcome {
    let suite = synthetic_suite(SYNTH_NODES, desk_config(0).dim, true);
    let started = Instant::now();
    let cfg = desk_config(0);
    let out = cotrain::<f32>(&suite.datasets, &suite.jobs, &cfg, None, &TrainOptions::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let train = [score(&out.state, &suite, 0, EvalSplit::Train), score(&out.state, &suite, 1, EvalSplit::Train)];
    let test = [score(&out.state, &suite, 0, EvalSplit::Test), score(&out.state, &suite, 1, EvalSplit::Test)];
    let lp = score(&out.state, &suite, 2, EvalSplit::Test);
    let pass = train.iter().all(|&a| a >= TRAIN_ACC_MIN)
        && test.iter().all(|&a| a >= HELD_OUT_ACC_MIN)
        && lp >= LP_AUC_MIN
        && secs < COTRAIN_BUDGET_SECS;
    let detail = format!(
        "HoTAG acc train {:.3} test {:.3}; HeTAG acc train {:.3} test {:.3}; LP AUC {lp:.3}; {} epochs in {secs:.1}s",
        train[0],
        test[0],
        train[1],
        test[1],
        out.history.len()
    );
    *trained = Some(out.state);
    outcome(pass, detail)
}

fn zero_shot(trained: &Option<ModelState<f32>>) -> Outcome {
    let Some(state) = trained else {
        return outcome(false, "no co-trained model (co-training criterion crashed)");
    };
    let g = generate(&SynthConfig::sized(SynthKind::HoTag, Flavor::Transfer, SYNTH_NODES, 3));
    let datasets = vec![Dataset::with_fallback("synthetic-transfer", g, desk_config(0).dim, 0)];
    let split = build_nc_splits(&datasets[0].graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
    let job = TrainingJob { dataset: 0, split, batch_size: None };
    let zs = evaluate(state, &datasets, &job, EvalSplit::Test, EvalMode::ZeroShot, ExecMode::Parallel)
        .unwrap()
        .value;
    let cfg = RunConfig {
        max_epochs: FINETUNE_EPOCHS,
        patience: FINETUNE_EPOCHS,
        ..desk_config(0)
    };
    let tuned = finetune(state.clone(), &datasets, &job, &cfg, &TrainOptions::default()).unwrap();
    let ft = evaluate(&tuned.state, &datasets, &job, EvalSplit::Test, EvalMode::Test, ExecMode::Parallel)
        .unwrap()
        .value;
    let chance = 1.0 / CLASSES as f64;
    outcome(
        zs >= ZERO_SHOT_FACTOR * chance && ft - zs >= FINETUNE_GAIN_MIN,
        format!(
            "zero-shot acc {zs:.3} (need >= {:.3}); after {} fine-tune epochs {ft:.3} (gain {:+.3}, need >= {FINETUNE_GAIN_MIN})",
            ZERO_SHOT_FACTOR * chance,
            tuned.history.len(),
            ft - zs
        ),
    )
}

fn ablations() -> Outcome {
    let suite = synthetic_suite(ABLATION_NODES, desk_config(0).dim, false);
    let variants: Vec<(&str, Option<Ablation>)> = std::iter::once(("full", None))
        .chain(Ablation::ALL.iter().map(|a| (a.name(), Some(*a))))
        .collect();
    let mut mean = vec![0.0; variants.len()];
    for seed in 0..ABLATION_SEEDS {
        for (i, (_, ab)) in variants.iter().enumerate() {
            let mut cfg = RunConfig {
                max_epochs: ABLATION_EPOCHS,
                ..desk_config(seed)
            };
            if let Some(a) = ab {
                a.apply(&mut cfg);
            }
            let out = cotrain::<f32>(&suite.datasets, &suite.jobs, &cfg, None, &TrainOptions::default()).unwrap();
            let acc = (score(&out.state, &suite, 0, EvalSplit::Test) + score(&out.state, &suite, 1, EvalSplit::Test)) / 2.0;
            mean[i] += acc / ABLATION_SEEDS as f64;
        }
    }
    let get = |name: &str| mean[variants.iter().position(|(n, _)| *n == name).unwrap()];
    let (full, no_moe, no_cgt, no_ctx) = (get("full"), get("no_moe"), get("no_cgt"), get("no_context_graph"));
    let pass = full >= no_moe - ABLATION_APPROX
        && no_moe >= no_cgt - ABLATION_APPROX
        && full - no_ctx >= ABLATION_MARGIN;
    outcome(
        pass,
        format!(
            "held-out NC acc over {ABLATION_SEEDS} seeds: full {full:.4}, no_moe {no_moe:.4}, no_cgt {no_cgt:.4}, \
             no_context_graph {no_ctx:.4} (full - no_context_graph {:+.4}, orderings within {ABLATION_APPROX})",
            full - no_ctx
        ),
    )
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn linear_scaling() -> Outcome {
    let mut secs = Vec::new();
    for &nodes in &SCALING_SIZES {
        let g = generate(&SynthConfig::sized(SynthKind::HoTag, Flavor::Primary, nodes, 5));
        let datasets = vec![Dataset::with_fallback("scaling", g, desk_config(0).dim, 0)];
        let split = build_nc_splits(&datasets[0].graph, (0.6, 0.2, 0.2), 0, None, None).unwrap();
        let jobs = vec![TrainingJob { dataset: 0, split, batch_size: None }];
        let cfg = RunConfig {
            n_walks: 50,
            l_max: 4,
            max_epochs: 1,
            ..desk_config(0)
        };
        let mut runs: Vec<f64> = (0..SCALING_REPEATS)
            .map(|_| {
                let out = cotrain::<f32>(&datasets, &jobs, &cfg, None, &TrainOptions::default()).unwrap();
                out.seconds[0]
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        secs.push(runs[0]);
    }
    let x: Vec<f64> = SCALING_SIZES.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&x, &secs);
    let times: Vec<String> = secs.iter().map(|s| format!("{s:.2}")).collect();
    outcome(
        r2 >= SCALING_R2_MIN,
        format!("epoch seconds at {SCALING_SIZES:?} nodes: [{}], R^2 {r2:.4}", times.join(", ")),
    )
}

fn determinism() -> Outcome {
    let suite = synthetic_suite(200, 16, true);
    let cfg = RunConfig {
        dim: 16,
        hidden: 16,
        out: 16,
        head_hidden: 16,
        n_walks: 8,
        max_epochs: 3,
        batch_size: 64,
        precision: Dtype::F64,
        ..desk_config(42)
    };
    let run = |mode| {
        let opts = TrainOptions { mode, ..Default::default() };
        cotrain::<f64>(&suite.datasets, &suite.jobs, &cfg, None, &opts).unwrap()
    };
    let a = run(ExecMode::Parallel);
    let b = run(ExecMode::Parallel);
    let c = run(ExecMode::Sequential);
    let bits = |o: &h2gfm::trainer::TrainOutcome<f64>| -> Vec<u64> {
        o.history
            .iter()
            .flat_map(|r| r.jobs.iter().flat_map(|j| [j.loss.to_bits(), j.val_metric.to_bits()]))
            .collect()
    };
    let same_metrics = bits(&a) == bits(&b) && bits(&a) == bits(&c);
    let same_params = a.state.model.tensors() == b.state.model.tensors() && a.state.model.tensors() == c.state.model.tensors();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.h2gc");
    let first = cotrain::<f64>(
        &suite.datasets,
        &suite.jobs,
        &cfg,
        None,
        &TrainOptions {
            stop_after: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    first.state.save(&path).unwrap();
    let restored = ModelState::<f64>::load(&path, None).unwrap();
    let rest = cotrain::<f64>(&suite.datasets, &suite.jobs, &cfg, Some(restored), &TrainOptions::default()).unwrap();
    let mut joined = first.history.clone();
    joined.extend(rest.history.iter().cloned());
    let resumed = joined == a.history && rest.state.model.tensors() == a.state.model.tensors();
    let evals_equal = {
        let e = |s: &ModelState<f64>| {
            evaluate(s, &suite.datasets, &suite.jobs[0], EvalSplit::Test, EvalMode::Test, ExecMode::Sequential)
                .unwrap()
                .value
                .to_bits()
        };
        e(&rest.state) == e(&a.state)
    };
    outcome(
        same_metrics && same_params && resumed && evals_equal,
        format!(
            "64-bit repeat runs bitwise equal: metrics={same_metrics} params={same_params}; \
             checkpoint after epoch 1 resumes identically: {resumed}, test metric equal: {evals_equal}"
        ),
    )
}

fn main() {
    let mut trained = None;
    let mut checks: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient_suite", Box::new(gradient_suite)),
        ("context_encoding_oracle", Box::new(encoding_oracle)),
        ("moe_invariants", Box::new(moe_invariants)),
        ("determinism_and_persistence", Box::new(determinism)),
    ];
    let mut failures = 0;
    let mut run = |name: &str, f: Box<dyn FnOnce() -> Outcome + '_>| {
        let started = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failures += usize::from(!o.pass);
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    };
    for (name, f) in checks.drain(..) {
        run(name, f);
    }
    run("synthetic_cotraining", Box::new(|| cotraining(&mut trained)));
    run("zero_shot_transfer", Box::new(|| zero_shot(&trained)));
    run("ablation_ordering", Box::new(ablations));
    run("linear_scaling", Box::new(linear_scaling));
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

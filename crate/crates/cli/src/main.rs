use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use h2gfm::autodiff::{archive_dtype, Dtype, Real, Tape};
use h2gfm::cgt_layer::ForwardCtx;
use h2gfm::config::{Ablation, RunConfig};
use h2gfm::context_sampler::{context_seed, sample_context, ContextGraph};
use h2gfm::exec::ExecMode;
use h2gfm::feature_space::{build_meta_relation_texts, FeatureSet};
use h2gfm::graph_store::{
    build_lp_splits, build_nc_splits, export_graph, ingest_graph_dir, SplitSet, TextAttributedGraph,
};
use h2gfm::model::{GraphInput, Model, Sampling, Tables};
use h2gfm::rng::rng_for;
use h2gfm::synthetic::{generate, Flavor, SynthConfig, SynthKind};
use h2gfm::trainer::{
    cotrain, evaluate, finetune, Dataset, EvalMode, EvalSplit, ModelState, TrainOptions, TrainOutcome, TrainingJob,
};

const CHECKPOINT_FILE: &str = "checkpoint.h2gc";

/// Failure reported on stderr as one JSON line.
#[derive(Debug)]
struct Failure {
    validation: bool,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            validation: true,
            message: message.into(),
        }
    }
}

impl From<h2gfm::Error> for Failure {
    fn from(e: h2gfm::Error) -> Self {
        Failure {
            validation: e.is_validation(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::invalid(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "h2gfm", version, about = "Graph foundation model over text-attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a graph directory and write it out as a normalized store.
    Ingest {
        /// Directory with nodes.jsonl, edges.jsonl and meta.json.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed node, relation and label texts with the deterministic hash embedder.
    EmbedFallback {
        graph: PathBuf,
        #[arg(long, default_value_t = 384)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the .h2gv files (defaults to the graph directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build train/valid/test splits and write them as JSON.
    Split {
        graph: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated train,valid,test fractions.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        cap_train: Option<usize>,
        #[arg(long)]
        cap_eval: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Co-train over every job in the config.
    Train(TrainArgs),
    /// Apply a named ablation to the config, then train.
    Ablate {
        #[arg(value_parser = ["no_context_graph", "no_cgt", "no_moe"])]
        name: String,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score one split of a dataset with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        job: JobArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Test)]
        mode: ModeArg,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue training a checkpoint on a single job.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Train only the task heads.
        #[arg(long)]
        head_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameter manifest of a checkpoint or config.
    Inspect {
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Dump the sampled context graph of one node as JSON.
    InspectContext {
        graph: PathBuf,
        /// Original node id as written in nodes.jsonl.
        #[arg(long)]
        node: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Include gate weights and per-expert attention from a checkpoint.
        #[arg(long, requires = "checkpoint")]
        attention: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Embedding directory (defaults to the graph directory).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Generate a synthetic graph with a planted context rule.
    Synth {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = FlavorArg::Primary)]
        flavor: FlavorArg,
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON config with flat RunConfig keys and an optional "jobs" list.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Override any config key, e.g. `--set n_walks=20`; the value is parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Save a checkpoint every this many epochs (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Clone)]
struct JobArgs {
    /// Graph directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Splits file written by `split`.
    #[arg(long)]
    splits: PathBuf,
    /// Embedding directory (defaults to the dataset directory).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Dataset id used for the zero-shot check (defaults to the directory name).
    #[arg(long)]
    id: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Nc,
    Lp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Test,
    ZeroShot,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Hotag,
    Hetag,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlavorArg {
    Primary,
    Transfer,
}

/// One entry of the config's "jobs" list.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobSpec {
    dataset: PathBuf,
    splits: PathBuf,
    #[serde(default)]
    embeddings: Option<PathBuf>,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    batch_size: Option<usize>,
}

impl From<&JobArgs> for JobSpec {
    fn from(a: &JobArgs) -> Self {
        JobSpec {
            dataset: a.dataset.clone(),
            splits: a.splits.clone(),
            embeddings: a.embeddings.clone(),
            id: a.id.clone(),
            batch_size: None,
        }
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::invalid(format!("{} does not exist", path.display())))
    }
}

fn print(value: &Value) {
    println!("{value}");
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| runtime(path, e))
}

fn runtime(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        validation: false,
        message: format!("io error on {}: {e}", path.display()),
    }
}

/// Reads the config file, applies flag overrides and returns it with the jobs list.
fn load_config(args: &ConfigArgs) -> CliResult<(RunConfig, Vec<JobSpec>)> {
    let mut raw = match &args.config {
        Some(p) => {
            require(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| runtime(p, e))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
            if !v.is_object() {
                return Err(Failure::invalid("config must be a JSON object"));
            }
            v
        }
        None => json!({}),
    };
    let obj = raw.as_object_mut().expect("checked above");
    let jobs: Vec<JobSpec> = match obj.remove("jobs") {
        Some(j) => serde_json::from_value(j).map_err(|e| Failure::invalid(format!("jobs: {e}")))?,
        None => Vec::new(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        obj.insert(k.to_string(), value);
    }
    if let Some(s) = args.seed {
        obj.insert("seed".into(), json!(s));
    }
    if let Some(p) = args.precision {
        obj.insert("precision".into(), json!(match p {
            PrecisionArg::F32 => "f32",
            PrecisionArg::F64 => "f64",
        }));
    }
    if let Some(e) = args.max_epochs {
        obj.insert("max_epochs".into(), json!(e));
    }
    if let Some(lr) = args.lr {
        obj.insert("lr".into(), json!(lr));
    }
    let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Failure::invalid(format!("config: {e}")))?;
    cfg.validate()?;
    Ok((cfg, jobs))
}

fn dataset_id(spec: &JobSpec) -> String {
    spec.id.clone().unwrap_or_else(|| {
        spec.dataset
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.dataset.display().to_string())
    })
}

fn load_dataset(dir: &Path, emb: Option<&Path>, id: String, dim: usize) -> CliResult<Dataset> {
    require(dir)?;
    let graph = ingest_graph_dir(dir)?;
    let vocab = build_meta_relation_texts(&graph);
    let features = FeatureSet::load_dir(emb.unwrap_or(dir), &graph, &vocab, dim)?;
    Ok(Dataset::new(id, graph, features)?)
}

fn load_splits(path: &Path) -> CliResult<SplitSet> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| runtime(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// Loads datasets once per (directory, embeddings, id) and binds each job to one.
fn load_jobs(specs: &[JobSpec], dim: usize) -> CliResult<(Vec<Dataset>, Vec<TrainingJob>)> {
    let mut datasets: Vec<Dataset> = Vec::new();
    let mut keys: Vec<(PathBuf, Option<PathBuf>, String)> = Vec::new();
    let mut jobs = Vec::new();
    for spec in specs {
        let key = (spec.dataset.clone(), spec.embeddings.clone(), dataset_id(spec));
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                datasets.push(load_dataset(&spec.dataset, spec.embeddings.as_deref(), key.2.clone(), dim)?);
                keys.push(key);
                datasets.len() - 1
            }
        };
        jobs.push(TrainingJob {
            dataset: idx,
            split: load_splits(&spec.splits)?,
            batch_size: spec.batch_size,
        });
    }
    Ok((datasets, jobs))
}

fn summary<T: Real>(out: &TrainOutcome<T>, dir: &Path) -> Value {
    let last = out.history.last();
    json!({
        "epochs": out.history.len(),
        "step": out.state.step,
        "best_val": finite(out.state.early.best),
        "final_val": last.map(|r| finite(r.val_mean)),
        "trainable_params": out.trainable_params,
        "config_hash": out.state.cfg().hash(),
        "checkpoint": dir.join(CHECKPOINT_FILE),
    })
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    datasets: &[Dataset],
    jobs: &[TrainingJob],
    args: &TrainArgs,
) -> CliResult<Value> {
    let resume = match &args.resume {
        Some(p) => {
            require(p)?;
            Some(ModelState::<T>::load(p, Some(cfg.clone()))?)
        }
        None => None,
    };
    let opts = TrainOptions {
        mode: if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel },
        out_dir: Some(args.out.clone()),
        checkpoint_every: args.checkpoint_every,
        ..Default::default()
    };
    let trainable = match &resume {
        Some(s) => s.model.params.trainable_count(),
        None => Model::<T>::new(cfg.clone())?.params.trainable_count(),
    };
    eprintln!("{}", json!({"event": "start", "trainable_params": trainable, "config_hash": cfg.hash()}));
    let out = cotrain::<T>(datasets, jobs, cfg, resume, &opts)?;
    out.state.save(&args.out.join(CHECKPOINT_FILE))?;
    Ok(summary(&out, &args.out))
}

fn run_config_file(dir: &Path, cfg: &RunConfig, jobs: &[JobSpec]) -> CliResult<()> {
    let jobs: Vec<Value> = jobs
        .iter()
        .map(|j| json!({"dataset": j.dataset, "splits": j.splits, "embeddings": j.embeddings, "id": dataset_id(j)}))
        .collect();
    write_json(
        &dir.join("run.json"),
        &json!({"config": cfg, "config_hash": cfg.hash(), "architecture_hash": cfg.architecture_hash(), "jobs": jobs}),
    )
}

fn cmd_train(args: &TrainArgs, ablation: Option<Ablation>) -> CliResult<Value> {
    let (mut cfg, specs) = load_config(&args.cfg)?;
    if let Some(a) = ablation {
        a.apply(&mut cfg);
        cfg.validate()?;
    }
    if specs.is_empty() {
        return Err(Failure::invalid("config has no \"jobs\""));
    }
    let (datasets, jobs) = load_jobs(&specs, cfg.dim)?;
    std::fs::create_dir_all(&args.out).map_err(|e| runtime(&args.out, e))?;
    run_config_file(&args.out, &cfg, &specs)?;
    match cfg.precision {
        Dtype::F32 => train_typed::<f32>(&cfg, &datasets, &jobs, args),
        Dtype::F64 => train_typed::<f64>(&cfg, &datasets, &jobs, args),
    }
}

fn load_state<T: Real>(path: &Path, cfg: Option<RunConfig>) -> CliResult<ModelState<T>> {
    Ok(ModelState::<T>::load(path, cfg)?)
}

fn checkpoint_dtype(path: &Path) -> CliResult<Dtype> {
    require(path)?;
    archive_dtype(path).map_err(|e| Failure::invalid(e.to_string()))
}

fn eval_typed<T: Real>(
    ckpt: &Path,
    job: &JobArgs,
    split: EvalSplit,
    mode: EvalMode,
) -> CliResult<Value> {
    let state = load_state::<T>(ckpt, None)?;
    let spec = JobSpec::from(job);
    let (datasets, jobs) = load_jobs(std::slice::from_ref(&spec), state.cfg().dim)?;
    let report = evaluate(&state, &datasets, &jobs[0], split, mode, ExecMode::Parallel)?;
    Ok(serde_json::to_value(report)?)
}

fn cmd_eval(ckpt: &Path, job: &JobArgs, split: SplitArg, mode: ModeArg, out: Option<&Path>) -> CliResult<Value> {
    let split = match split {
        SplitArg::Train => EvalSplit::Train,
        SplitArg::Valid => EvalSplit::Valid,
        SplitArg::Test => EvalSplit::Test,
    };
    let mode = match mode {
        ModeArg::Test => EvalMode::Test,
        ModeArg::ZeroShot => EvalMode::ZeroShot,
    };
    let report = match checkpoint_dtype(ckpt)? {
        Dtype::F32 => eval_typed::<f32>(ckpt, job, split, mode)?,
        Dtype::F64 => eval_typed::<f64>(ckpt, job, split, mode)?,
    };
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(report)
}

fn finetune_typed<T: Real>(
    ckpt: &Path,
    job: &JobArgs,
    cargs: &ConfigArgs,
    head_only: bool,
    out: &Path,
) -> CliResult<Value> {
    let state = load_state::<T>(ckpt, None)?;
    // without a config file the checkpoint's own settings are the base
    let cfg = if cargs.config.is_some() {
        load_config(cargs)?.0
    } else {
        let mut base = ConfigArgs {
            config: None,
            ..cargs.clone()
        };
        base.overrides.splice(0..0, config_as_overrides(state.cfg()));
        load_config(&base)?.0
    };
    if cfg.architecture_hash() != state.cfg().architecture_hash() {
        return Err(Failure::invalid("checkpoint architecture does not match the config"));
    }
    let spec = JobSpec::from(job);
    let (datasets, jobs) = load_jobs(std::slice::from_ref(&spec), cfg.dim)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    run_config_file(out, &cfg, std::slice::from_ref(&spec))?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        head_only,
        ..Default::default()
    };
    let res = finetune(state, &datasets, &jobs[0], &cfg, &opts)?;
    res.state.save(&out.join(CHECKPOINT_FILE))?;
    Ok(summary(&res, out))
}

fn config_as_overrides(cfg: &RunConfig) -> Vec<String> {
    match serde_json::to_value(cfg) {
        Ok(Value::Object(m)) => m.into_iter().map(|(k, v)| format!("{k}={v}")).collect(),
        _ => Vec::new(),
    }
}

fn manifest_json<T: Real>(model: &Model<T>) -> Value {
    let params: Vec<Value> = model
        .manifest()
        .into_iter()
        .map(|(name, shape)| json!({"name": name, "shape": shape}))
        .collect();
    let experts: Vec<usize> = model.arch.layers.iter().map(|l| l.experts.len()).collect();
    json!({
        "config_hash": model.cfg.hash(),
        "architecture_hash": model.cfg.architecture_hash(),
        "config": model.cfg,
        "experts_per_layer": experts,
        "trainable_params": model.params.trainable_count(),
        "total_params": model.params.total_count(),
        "params": params,
    })
}

fn cmd_inspect(ckpt: Option<&Path>, cargs: &ConfigArgs) -> CliResult<Value> {
    match ckpt {
        Some(p) => match checkpoint_dtype(p)? {
            Dtype::F32 => Ok(manifest_json(&load_state::<f32>(p, None)?.model)),
            Dtype::F64 => Ok(manifest_json(&load_state::<f64>(p, None)?.model)),
        },
        None => {
            let (cfg, _) = load_config(cargs)?;
            Ok(manifest_json(&Model::<f32>::new(cfg)?))
        }
    }
}

fn context_json(g: &TextAttributedGraph, vocab: &h2gfm::feature_space::MetaRelationVocab, c: &ContextGraph) -> Value {
    let ids = g.original_ids();
    let texts = vocab.texts();
    let neighbors: Vec<Value> = c
        .neighbors
        .iter()
        .map(|p| {
            json!({
                "endpoint": ids[p.endpoint],
                "length": p.len(),
                "relation_ids": p.relation_ids,
                "relations": p.relation_ids.iter().map(|&r| texts[r]).collect::<Vec<_>>(),
                "edges": p.edges,
            })
        })
        .collect();
    json!({"target": ids[c.target], "traversals": c.traversals, "neighbors": neighbors})
}

fn find_node(g: &TextAttributedGraph, id: &str) -> CliResult<usize> {
    g.original_ids()
        .iter()
        .position(|x| x == id)
        .ok_or_else(|| Failure::invalid(format!("unknown node id {id:?}")))
}

fn attention_typed<T: Real>(ckpt: &Path, ds: &Dataset, u: usize) -> CliResult<Value> {
    let state = load_state::<T>(ckpt, None)?;
    let model = &state.model;
    if ds.features.dim() != model.cfg.dim {
        return Err(Failure::invalid(format!(
            "embeddings have dim {}, checkpoint expects {}",
            ds.features.dim(),
            model.cfg.dim
        )));
    }
    let tables = Tables::<T>::from_features(&ds.features);
    let input = GraphInput {
        graph: &ds.graph,
        vocab: &ds.vocab,
        tables: &tables,
    };
    let mut tape = Tape::with_params(&model.params);
    let mut rng = rng_for(model.cfg.seed, &[]);
    let mut ctx = ForwardCtx::eval(&mut rng);
    ctx.slope = model.cfg.leaky_slope;
    let (_, trace) = model.embed(&mut tape, input, &[u], Sampling::eval(ExecMode::Sequential), &mut ctx, true)?;
    let last = trace.last_layer.as_ref().expect("recorded on request");
    let context = &trace.contexts[0];
    let weights = tape.value(last.gate.weights).row(0).to_vec();
    let experts: Vec<Value> = last
        .traces
        .iter()
        .map(|t| {
            let alpha: Vec<f64> = tape.value(t.alpha).iter().map(|a| a.to_f64_lossless()).collect();
            let entries: Vec<Value> = t
                .neighbors
                .iter()
                .zip(&alpha)
                .map(|(&n, &a)| {
                    let p = &context.neighbors[n];
                    json!({"endpoint": ds.graph.original_ids()[p.endpoint], "relation_ids": p.relation_ids, "alpha": a})
                })
                .collect();
            json!({"expert": t.expert, "gate_weight": weights[t.expert].to_f64_lossless(), "attention": entries})
        })
        .collect();
    Ok(json!({
        "context": context_json(&ds.graph, &ds.vocab, context),
        "selected": trace.selected.first(),
        "experts": experts,
    }))
}

fn cmd_inspect_context(
    graph: &Path,
    node: &str,
    cargs: &ConfigArgs,
    attention: bool,
    ckpt: Option<&Path>,
    emb: Option<&Path>,
) -> CliResult<Value> {
    if attention {
        let ckpt = ckpt.expect("clap requires --checkpoint");
        let dtype = checkpoint_dtype(ckpt)?;
        let dim = match dtype {
            Dtype::F32 => load_state::<f32>(ckpt, None)?.cfg().dim,
            Dtype::F64 => load_state::<f64>(ckpt, None)?.cfg().dim,
        };
        let id = graph.display().to_string();
        let ds = load_dataset(graph, emb, id, dim)?;
        let u = find_node(&ds.graph, node)?;
        return match dtype {
            Dtype::F32 => attention_typed::<f32>(ckpt, &ds, u),
            Dtype::F64 => attention_typed::<f64>(ckpt, &ds, u),
        };
    }
    require(graph)?;
    let g = ingest_graph_dir(graph)?;
    let vocab = build_meta_relation_texts(&g);
    let (cfg, _) = load_config(cargs)?;
    let u = find_node(&g, node)?;
    let seed = context_seed(cfg.seed, Sampling::EVAL_KEY, 0, u);
    let c = sample_context(&g, &vocab, u, cfg.sampler(), seed);
    Ok(json!({"context": context_json(&g, &vocab, &c), "seed": cfg.seed, "n_walks": cfg.n_walks, "l_max": cfg.l_max}))
}

fn parse_ratios(s: Option<&str>, default: (f64, f64, f64)) -> CliResult<(f64, f64, f64)> {
    let Some(s) = s else { return Ok(default) };
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::invalid(format!("bad --ratios {s:?}")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Failure::invalid("--ratios needs three comma-separated values")),
    }
}

fn run(cli: Cli) -> CliResult<Value> {
    match cli.command {
        Command::Ingest { input, out } => {
            require(&input)?;
            let g = ingest_graph_dir(&input)?;
            export_graph(&g, &out)?;
            Ok(json!({
                "nodes": g.num_nodes(),
                "edges": g.num_edges(),
                "kind": g.kind(),
                "node_types": g.node_type_names(),
                "edge_types": g.edge_type_names(),
                "classes": g.num_classes(),
                "meta_relations": build_meta_relation_texts(&g).len(),
                "out": out,
            }))
        }
        Command::EmbedFallback { graph, dim, seed, out } => {
            require(&graph)?;
            if dim == 0 {
                return Err(Failure::invalid("--dim must be positive"));
            }
            let g = ingest_graph_dir(&graph)?;
            let vocab = build_meta_relation_texts(&g);
            let f = FeatureSet::fallback(&g, &vocab, dim, seed);
            let dir = out.unwrap_or(graph);
            f.save_dir(&dir)?;
            Ok(json!({
                "dim": dim,
                "nodes": f.nodes.count(),
                "relations": f.relations.count(),
                "labels": f.labels.as_ref().map(|l| l.count()),
                "out": dir,
            }))
        }
        Command::Split { graph, task, seed, ratios, cap_train, cap_eval, out } => {
            require(&graph)?;
            let g = ingest_graph_dir(&graph)?;
            let split = match task {
                TaskArg::Nc => build_nc_splits(&g, parse_ratios(ratios.as_deref(), (0.6, 0.2, 0.2))?, seed, cap_train, cap_eval)?,
                TaskArg::Lp => build_lp_splits(&g, parse_ratios(ratios.as_deref(), (0.8, 0.1, 0.1))?, seed, cap_train, cap_eval)?,
            };
            write_json(&out, &serde_json::to_value(&split)?)?;
            let sizes = match &split {
                SplitSet::Nc(s) => [s.train.len(), s.valid.len(), s.test.len()],
                SplitSet::Lp(s) => [s.train.len(), s.valid.len(), s.test.len()],
            };
            Ok(json!({"task": split.task(), "seed": seed, "sizes": sizes, "out": out}))
        }
        Command::Train(args) => cmd_train(&args, None),
        Command::Ablate { name, train } => cmd_train(&train, Some(Ablation::parse(&name)?)),
        Command::Eval { checkpoint, job, split, mode, out } => cmd_eval(&checkpoint, &job, split, mode, out.as_deref()),
        Command::Finetune { checkpoint, job, cfg, head_only, out } => match checkpoint_dtype(&checkpoint)? {
            Dtype::F32 => finetune_typed::<f32>(&checkpoint, &job, &cfg, head_only, &out),
            Dtype::F64 => finetune_typed::<f64>(&checkpoint, &job, &cfg, head_only, &out),
        },
        Command::Inspect { checkpoint, cfg } => cmd_inspect(checkpoint.as_deref(), &cfg),
        Command::InspectContext { graph, node, cfg, attention, checkpoint, embeddings } => {
            cmd_inspect_context(&graph, &node, &cfg, attention, checkpoint.as_deref(), embeddings.as_deref())
        }
        Command::Synth { kind, flavor, nodes, seed, out } => {
            let kind = match kind {
                KindArg::Hotag => SynthKind::HoTag,
                KindArg::Hetag => SynthKind::HeTag,
            };
            let flavor = match flavor {
                FlavorArg::Primary => Flavor::Primary,
                FlavorArg::Transfer => Flavor::Transfer,
            };
            if nodes < 40 {
                return Err(Failure::invalid("--nodes must be at least 40"));
            }
            let g = generate(&SynthConfig::sized(kind, flavor, nodes, seed));
            export_graph(&g, &out)?;
            Ok(json!({"nodes": g.num_nodes(), "edges": g.num_edges(), "kind": g.kind(), "out": out}))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "validation", "message": first}));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(v) => {
            print(&v);
            ExitCode::SUCCESS
        }
        Err(f) => {
            let kind = if f.validation { "validation" } else { "runtime" };
            eprintln!("{}", json!({"error": kind, "message": f.message}));
            ExitCode::from(if f.validation { 1 } else { 2 })
        }
    }
}

//! Multi-job co-training, evaluation, fine-tuning and checkpointing.
//!
//! An epoch walks every job's shuffled training batches round-robin
//! (J1, J2, ..., J1, J2, ...). It ends when the job with the most batches is
//! exhausted; jobs with fewer batches wrap around. Every random draw is
//! derived from the run seed plus the epoch or global step, so a run resumed
//! from a checkpoint replays the same trajectory.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Archive, Real, Tape};
use crate::cgt_layer::ForwardCtx;
use crate::config::{Ablation, RunConfig};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::feature_space::{build_meta_relation_texts, FeatureSet, MetaRelationVocab};
use crate::graph_store::{SplitSet, Task, TextAttributedGraph};
use crate::metrics::{accuracy, argmax, auc};
use crate::model::{GraphInput, Model, Sampling, Tables};
use crate::moe_gating::load_histogram;
use crate::rng::{rng_for, stream};
use crate::task_heads::{lp_loss, nc_loss};

/// A graph with its meta-relation vocabulary and embedding tables.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub graph: TextAttributedGraph,
    pub vocab: MetaRelationVocab,
    pub features: FeatureSet,
}

impl Dataset {
    pub fn new(id: impl Into<String>, graph: TextAttributedGraph, features: FeatureSet) -> Result<Self> {
        let vocab = build_meta_relation_texts(&graph);
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::CountMismatch { expected, found })
            }
        };
        check(graph.num_nodes(), features.nodes.count())?;
        check(vocab.len(), features.relations.count())?;
        if let Some(l) = &features.labels {
            check(graph.num_classes(), l.count())?;
        }
        Ok(Dataset {
            id: id.into(),
            graph,
            vocab,
            features,
        })
    }

    /// Dataset embedded with the deterministic fallback embedder.
    pub fn with_fallback(id: impl Into<String>, graph: TextAttributedGraph, dim: usize, seed: u64) -> Self {
        let vocab = build_meta_relation_texts(&graph);
        let features = FeatureSet::fallback(&graph, &vocab, dim, seed);
        Dataset {
            id: id.into(),
            graph,
            vocab,
            features,
        }
    }
}

/// One (dataset, task) pair bound to its splits.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    /// Index into the dataset list passed alongside the jobs.
    pub dataset: usize,
    pub split: SplitSet,
    /// Overrides the config batch size.
    pub batch_size: Option<usize>,
}

impl TrainingJob {
    pub fn task(&self) -> Task {
        self.split.task()
    }

    fn train_len(&self) -> usize {
        match &self.split {
            SplitSet::Nc(s) => s.train.len(),
            SplitSet::Lp(s) => s.train.len(),
        }
    }

    fn validate(&self, datasets: &[Dataset]) -> Result<()> {
        let ds = datasets
            .get(self.dataset)
            .ok_or_else(|| Error::Validation(format!("job refers to missing dataset #{}", self.dataset)))?;
        if self.train_len() == 0 {
            return Err(Error::Validation(format!("{} job on {} has an empty train split", self.task(), ds.id)));
        }
        if self.task() == Task::Nc && ds.features.labels.is_none() {
            return Err(Error::Validation(format!("NC job on {} needs label-text embeddings", ds.id)));
        }
        let n = ds.graph.num_nodes();
        let bad = match &self.split {
            SplitSet::Nc(s) => s.train.iter().chain(&s.valid).chain(&s.test).any(|&u| u >= n),
            SplitSet::Lp(s) => s
                .train
                .iter()
                .chain(&s.valid)
                .chain(&s.test)
                .chain(&s.train_negatives)
                .any(|&(u, v)| u >= n || v >= n),
        };
        if bad {
            return Err(Error::Validation(format!("split for {} references unknown nodes", ds.id)));
        }
        Ok(())
    }
}

/// Per-job graph and tables in compute precision.
struct Prepared<T> {
    graph: TextAttributedGraph,
    tables: Tables<T>,
}

fn prepare<T: Real>(datasets: &[Dataset], job: &TrainingJob) -> Prepared<T> {
    let ds = &datasets[job.dataset];
    let graph = match &job.split {
        SplitSet::Lp(s) => s.training_graph(&ds.graph),
        SplitSet::Nc(_) => ds.graph.clone(),
    };
    Prepared {
        graph,
        tables: Tables::from_features(&ds.features),
    }
}

/// Which split of a job to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Dataset may have been seen in training.
    Test,
    /// Dataset must be absent from the model's training history.
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task: Task,
    pub split: EvalSplit,
    pub mode: EvalMode,
    /// `acc` for NC, `auc` for LP.
    pub metric: String,
    pub value: f64,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub dataset: String,
    pub task: Task,
    pub batches: usize,
    pub loss: f64,
    pub val_metric: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub jobs: Vec<JobRecord>,
    pub val_mean: f64,
    pub best_val: f64,
    /// How often each expert was selected this epoch, over all layers.
    pub gate_load: Vec<usize>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub best: f64,
    pub best_epoch: u64,
    pub bad_epochs: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }
}

/// Parameters, optimizer moments and loop position.
#[derive(Debug, Clone)]
pub struct ModelState<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    /// Optimizer steps taken.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
    pub early: EarlyStop,
    /// Dataset ids the parameters have been trained on.
    pub trained_on: Vec<String>,
}

impl<T: Real> ModelState<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let model = Model::new(cfg)?;
        let adam = make_adam(&model);
        Ok(ModelState {
            model,
            adam,
            step: 0,
            epoch: 0,
            early: EarlyStop::default(),
            trained_on: Vec::new(),
        })
    }

    pub fn cfg(&self) -> &RunConfig {
        &self.model.cfg
    }

    pub fn to_archive(&self) -> Archive<T> {
        let cfg = &self.model.cfg;
        let header = serde_json::json!({
            "kind": "h2gfm-model",
            "config": cfg,
            "config_hash": cfg.hash(),
            "architecture_hash": cfg.architecture_hash(),
            "step": self.step,
            "epoch": self.epoch,
            "adam_step": self.adam.state.step,
            "early_stop": {
                "best": finite_or_null(self.early.best),
                "best_epoch": self.early.best_epoch,
                "bad_epochs": self.early.bad_epochs,
            },
            "trained_on": self.trained_on,
        });
        let mut tensors = self.model.tensors();
        for (i, id) in self.model.params.ids().enumerate() {
            let name = self.model.params.name(id);
            tensors.push((format!("adam.m/{name}"), self.adam.state.m[i].clone()));
            tensors.push((format!("adam.v/{name}"), self.adam.state.v[i].clone()));
        }
        Archive { header, tensors }
    }

    /// Restores a state. `cfg` must describe the same architecture; other
    /// fields (learning rate, epochs, ...) may differ.
    pub fn from_archive(archive: &Archive<T>, cfg: Option<RunConfig>) -> Result<Self> {
        let h = &archive.header;
        let stored: RunConfig = serde_json::from_value(h["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad config in header: {e}")))?;
        let cfg = cfg.unwrap_or_else(|| stored.clone());
        let want = h["architecture_hash"].as_str().unwrap_or_default();
        if cfg.architecture_hash() != want {
            return Err(Error::Checkpoint(
                "checkpoint architecture does not match the run configuration".into(),
            ));
        }
        let model = Model::from_archive(cfg, archive)?;
        let mut adam = make_adam(&model);
        adam.state.step = h["adam_step"].as_u64().unwrap_or(0);
        for (i, id) in model.params.ids().enumerate() {
            let name = model.params.name(id);
            for (slot, prefix) in [(&mut adam.state.m, "adam.m/"), (&mut adam.state.v, "adam.v/")] {
                let t = archive
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor for {name}")))?;
                slot[i] = t.clone();
            }
        }
        let es = &h["early_stop"];
        Ok(ModelState {
            model,
            adam,
            step: h["step"].as_u64().unwrap_or(0),
            epoch: h["epoch"].as_u64().unwrap_or(0),
            early: EarlyStop {
                best: es["best"].as_f64().unwrap_or(f64::NEG_INFINITY),
                best_epoch: es["best_epoch"].as_u64().unwrap_or(0),
                bad_epochs: es["bad_epochs"].as_u64().unwrap_or(0) as usize,
            },
            trained_on: serde_json::from_value(h["trained_on"].clone()).unwrap_or_default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path, cfg: Option<RunConfig>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?, cfg)
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn make_adam<T: Real>(model: &Model<T>) -> Adam<T> {
    let cfg = &model.cfg;
    let mut adam = Adam::new(&model.params, cfg.lr);
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    adam
}

/// Options that do not belong in the hashed run configuration.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub mode: ExecMode,
    /// Directory for `metrics.jsonl`, `timing.jsonl` and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Write `checkpoint.h2gc` every this many epochs (0: never).
    pub checkpoint_every: usize,
    /// Stop after this many epochs in this call, as if interrupted.
    pub stop_after: Option<usize>,
    /// Train only the task heads.
    pub head_only: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: ModelState<T>,
    pub history: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch, kept apart from the deterministic history.
    pub seconds: Vec<f64>,
    pub trainable_params: usize,
    /// The job each optimizer step used, in order.
    pub schedule: Vec<usize>,
}

/// Round-robin order of `(job, batch)` pairs for one epoch.
pub fn schedule(batch_counts: &[usize]) -> Vec<(usize, usize)> {
    let rounds = batch_counts.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (j, &n) in batch_counts.iter().enumerate() {
            if n > 0 {
                out.push((j, r % n));
            }
        }
    }
    out
}

enum Batch {
    Nc(Vec<usize>, Vec<usize>),
    Lp(Vec<(usize, usize)>, Vec<bool>),
}

fn epoch_batches(job: &TrainingJob, graph: &TextAttributedGraph, bs: usize, seed: u64, epoch: u64, j: usize) -> Vec<Batch> {
    let mut rng = rng_for(seed, &[stream::SHUFFLE, epoch, j as u64]);
    match &job.split {
        SplitSet::Nc(s) => {
            let mut idx = s.train.clone();
            idx.shuffle(&mut rng);
            idx.chunks(bs)
                .map(|c| {
                    let y = c.iter().map(|&u| graph.node(u).label_id.expect("labeled")).collect();
                    Batch::Nc(c.to_vec(), y)
                })
                .collect()
        }
        SplitSet::Lp(s) => {
            let mut order: Vec<usize> = (0..s.train.len()).collect();
            order.shuffle(&mut rng);
            order
                .chunks(bs)
                .map(|c| {
                    let mut pairs: Vec<(usize, usize)> = c.iter().map(|&i| s.train[i]).collect();
                    let mut labels = vec![true; pairs.len()];
                    pairs.extend(c.iter().filter_map(|&i| s.train_negatives.get(i).copied()));
                    labels.resize(pairs.len(), false);
                    Batch::Lp(pairs, labels)
                })
                .collect()
        }
    }
}

fn input<'a, T: Real>(datasets: &'a [Dataset], job: &TrainingJob, p: &'a Prepared<T>) -> GraphInput<'a, T> {
    GraphInput {
        graph: &p.graph,
        vocab: &datasets[job.dataset].vocab,
        tables: &p.tables,
    }
}

struct StepResult {
    loss: f64,
    selected: Vec<Vec<usize>>,
}

fn train_step<T: Real>(
    state: &mut ModelState<T>,
    inp: GraphInput<'_, T>,
    batch: &Batch,
    mode: ExecMode,
) -> Result<StepResult> {
    let cfg = state.model.cfg.clone();
    let key = if cfg.frozen_sampling { 0 } else { state.step };
    let mut rng = rng_for(cfg.seed, &[stream::DROPOUT, state.step]);
    let (loss_value, selected, grads) = {
        let model = &state.model;
        let mut tape = Tape::with_params(&model.params);
        let mut ctx = ForwardCtx {
            train: true,
            dropout: cfg.dropout,
            slope: cfg.leaky_slope,
            rng: &mut rng,
            stats: Default::default(),
        };
        let (loss, trace) = match batch {
            Batch::Nc(targets, y) => {
                let s = Sampling {
                    key,
                    hidden_pairs: None,
                    mode,
                };
                let (z, trace) = model.nc_logits(&mut tape, inp, targets, s, &mut ctx)?;
                (nc_loss(&mut tape, z, y)?, trace)
            }
            Batch::Lp(pairs, labels) => {
                let hidden: HashSet<(usize, usize)> =
                    pairs.iter().zip(labels).filter(|(_, &l)| l).map(|(&p, _)| p).collect();
                let s = Sampling {
                    key,
                    hidden_pairs: Some(&hidden),
                    mode,
                };
                let (z, trace) = model.lp_logits(&mut tape, inp, pairs, s, &mut ctx)?;
                (lp_loss(&mut tape, z, labels)?, trace)
            }
        };
        let grads = tape.backward(loss)?;
        (tape.scalar(loss).to_f64_lossless(), trace.selected, grads)
    };
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    state.model.params.zero_grad();
    state.model.params.accumulate(&grads);
    state.adam.step(&mut state.model.params);
    state.step += 1;
    Ok(StepResult {
        loss: loss_value,
        selected,
    })
}

fn open_append(path: &Path, append: bool) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn write_line(f: &mut File, path: &Path, value: &impl Serialize) -> Result<()> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Co-trains `jobs` from scratch, or continues `resume` when given.
pub fn cotrain<T: Real>(
    datasets: &[Dataset],
    jobs: &[TrainingJob],
    cfg: &RunConfig,
    resume: Option<ModelState<T>>,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if jobs.is_empty() {
        return Err(Error::Validation("no training jobs".into()));
    }
    for j in jobs {
        j.validate(datasets)?;
    }
    let mut state = match resume {
        Some(s) => s,
        None => ModelState::new(cfg.clone())?,
    };
    if state.model.cfg.architecture_hash() != cfg.architecture_hash() {
        return Err(Error::Checkpoint("resumed state has a different architecture".into()));
    }
    state.model.cfg = cfg.clone();
    state.adam.lr = cfg.lr;
    state.model.set_body_frozen(opts.head_only);
    for j in jobs {
        let id = &datasets[j.dataset].id;
        if !state.trained_on.contains(id) {
            state.trained_on.push(id.clone());
        }
    }
    let trainable_params = state.model.params.trainable_count();
    let prepared: Vec<Prepared<T>> = jobs.iter().map(|j| prepare(datasets, j)).collect();
    let resuming = state.epoch > 0;
    let mut files = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let m = dir.join("metrics.jsonl");
            let t = dir.join("timing.jsonl");
            Some(((open_append(&m, resuming)?, m), (open_append(&t, resuming)?, t)))
        }
        None => None,
    };

    let mut history = Vec::new();
    let mut seconds = Vec::new();
    let mut sched_log = Vec::new();
    let mut ran = 0;
    while (state.epoch as usize) < cfg.max_epochs && state.early.bad_epochs < cfg.patience.max(1) {
        if opts.stop_after.is_some_and(|n| ran >= n) {
            break;
        }
        let started = Instant::now();
        let epoch = state.epoch;
        let batches: Vec<Vec<Batch>> = jobs
            .iter()
            .zip(&prepared)
            .enumerate()
            .map(|(j, (job, p))| {
                let bs = job.batch_size.unwrap_or(cfg.batch_size);
                epoch_batches(job, &p.graph, bs, cfg.seed, epoch, j)
            })
            .collect();
        let counts: Vec<usize> = batches.iter().map(Vec::len).collect();
        let mut loss_sum = vec![0.0; jobs.len()];
        let mut gate_load = vec![0; cfg.n_experts];
        for (j, b) in schedule(&counts) {
            let inp = input(datasets, &jobs[j], &prepared[j]);
            let r = train_step(&mut state, inp, &batches[j][b], opts.mode)?;
            loss_sum[j] += r.loss;
            for (e, c) in load_histogram(&r.selected, cfg.n_experts).into_iter().enumerate() {
                gate_load[e] += c;
            }
            sched_log.push(j);
        }
        let mut job_records = Vec::with_capacity(jobs.len());
        for (j, job) in jobs.iter().enumerate() {
            let val = evaluate_prepared(&state, datasets, job, &prepared[j], EvalSplit::Valid, opts.mode)?;
            let rounds = counts.iter().copied().max().unwrap_or(0);
            job_records.push(JobRecord {
                dataset: datasets[job.dataset].id.clone(),
                task: job.task(),
                batches: rounds,
                loss: loss_sum[j] / rounds.max(1) as f64,
                val_metric: val.0,
            });
        }
        let val_mean = job_records.iter().map(|r| r.val_metric).sum::<f64>() / jobs.len() as f64;
        if val_mean > state.early.best {
            state.early = EarlyStop {
                best: val_mean,
                best_epoch: epoch,
                bad_epochs: 0,
            };
        } else {
            state.early.bad_epochs += 1;
        }
        state.epoch += 1;
        ran += 1;
        let record = EpochRecord {
            epoch,
            step: state.step,
            jobs: job_records,
            val_mean,
            best_val: state.early.best,
            gate_load,
            config_hash: cfg.hash(),
        };
        let secs = started.elapsed().as_secs_f64();
        if let Some(((mf, mp), (tf, tp))) = files.as_mut() {
            write_line(mf, mp, &record)?;
            write_line(tf, tp, &serde_json::json!({"epoch": epoch, "seconds": secs}))?;
        }
        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && ran % opts.checkpoint_every == 0 {
                state.save(&dir.join("checkpoint.h2gc"))?;
            }
        }
        history.push(record);
        seconds.push(secs);
    }
    if opts.head_only {
        state.model.set_body_frozen(false);
    }
    Ok(TrainOutcome {
        state,
        history,
        seconds,
        trainable_params,
        schedule: sched_log,
    })
}

/// Continues training a pretrained state on a single job with a fresh
/// optimizer and epoch counter.
pub fn finetune<T: Real>(
    state: ModelState<T>,
    datasets: &[Dataset],
    job: &TrainingJob,
    cfg: &RunConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    let mut state = state;
    state.model.cfg = cfg.clone();
    state.adam = make_adam(&state.model);
    state.epoch = 0;
    state.early = EarlyStop::default();
    cotrain(datasets, std::slice::from_ref(job), cfg, Some(state), opts)
}

/// Returns (metric, count) for one split of a job.
fn evaluate_prepared<T: Real>(
    state: &ModelState<T>,
    datasets: &[Dataset],
    job: &TrainingJob,
    p: &Prepared<T>,
    split: EvalSplit,
    mode: ExecMode,
) -> Result<(f64, usize)> {
    let model = &state.model;
    let inp = input(datasets, job, p);
    let bs = job.batch_size.unwrap_or(model.cfg.batch_size);
    // chunks are independent, so they may run concurrently without changing results
    let run_chunk = |f: &dyn Fn(&mut Tape<'_, T>, &mut ForwardCtx<'_>) -> Result<Vec<f64>>| -> Result<Vec<f64>> {
        let mut tape = Tape::with_params(&model.params);
        let mut rng = rng_for(model.cfg.seed, &[stream::EVAL]);
        let mut ctx = ForwardCtx::eval(&mut rng);
        ctx.slope = model.cfg.leaky_slope;
        f(&mut tape, &mut ctx)
    };
    match &job.split {
        SplitSet::Nc(s) => {
            let nodes = match split {
                EvalSplit::Train => &s.train,
                EvalSplit::Valid => &s.valid,
                EvalSplit::Test => &s.test,
            };
            if nodes.is_empty() {
                return Ok((0.0, 0));
            }
            let chunks: Vec<&[usize]> = nodes.chunks(bs).collect();
            let preds = exec::map(mode, &chunks, |c| {
                run_chunk(&|tape, ctx| {
                    let (z, _) = model.nc_logits(tape, inp, c, Sampling::eval(ExecMode::Sequential), ctx)?;
                    Ok(tape
                        .value(z)
                        .rows()
                        .into_iter()
                        .map(|r| argmax(r.iter().copied()).unwrap_or(0) as f64)
                        .collect())
                })
            });
            let preds: Vec<usize> = preds
                .into_iter()
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .map(|x| x as usize)
                .collect();
            let truth: Vec<usize> = nodes.iter().map(|&u| p.graph.node(u).label_id.expect("labeled")).collect();
            Ok((accuracy(&preds, &truth), nodes.len()))
        }
        SplitSet::Lp(s) => {
            let (pos, neg) = match split {
                EvalSplit::Train => (&s.train, &s.train_negatives),
                EvalSplit::Valid => (&s.valid, &s.valid_negatives),
                EvalSplit::Test => (&s.test, &s.test_negatives),
            };
            let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
            let labels: Vec<bool> = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
            if pairs.is_empty() {
                return Ok((0.5, 0));
            }
            let chunks: Vec<&[(usize, usize)]> = pairs.chunks(bs).collect();
            let scores = exec::map(mode, &chunks, |c| {
                run_chunk(&|tape, ctx| {
                    let (z, _) = model.lp_logits(tape, inp, c, Sampling::eval(ExecMode::Sequential), ctx)?;
                    Ok(tape.value(z).iter().map(|v| v.to_f64_lossless()).collect())
                })
            });
            let scores: Vec<f64> = scores.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
            Ok((auc(&scores, &labels), pairs.len()))
        }
    }
}

/// Scores one split of `job` without touching the parameters.
pub fn evaluate<T: Real>(
    state: &ModelState<T>,
    datasets: &[Dataset],
    job: &TrainingJob,
    split: EvalSplit,
    mode: EvalMode,
    exec_mode: ExecMode,
) -> Result<EvalReport> {
    job.validate(datasets).or_else(|e| match e {
        // an empty train split does not prevent evaluation
        Error::Validation(ref m) if m.contains("empty train split") => Ok(()),
        other => Err(other),
    })?;
    let ds = &datasets[job.dataset];
    if mode == EvalMode::ZeroShot && state.trained_on.contains(&ds.id) {
        return Err(Error::Validation(format!(
            "zero-shot evaluation on {} which was seen in training",
            ds.id
        )));
    }
    let p = prepare(datasets, job);
    let (value, count) = evaluate_prepared(state, datasets, job, &p, split, exec_mode)?;
    Ok(EvalReport {
        dataset: ds.id.clone(),
        task: job.task(),
        split,
        mode,
        metric: match job.task() {
            Task::Nc => "acc".into(),
            Task::Lp => "auc".into(),
        },
        value,
        count,
        seed: state.model.cfg.seed,
        config_hash: state.model.cfg.hash(),
    })
}

/// Config delta for a named ablation.
pub fn ablation_config(name: &str) -> Result<Ablation> {
    Ablation::parse(name)
}

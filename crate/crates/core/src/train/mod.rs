//! Losses, optimizer, metrics, the mini-batch training loop and checkpoints.

mod adam;
mod checkpoint;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, CheckpointModel, Manifest, ModelSpec, TensorEntry};
pub use metrics::{classify, mean_std, Confusion, MetricReport};

use crate::encoder::SceneModel;
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numeric::{ParamStore, Rng, Scalar, Tape, Tensor, Var};
use crate::scene::{assemble_graph, SceneDescription, Task};

/// Mean binary cross-entropy on logits.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Contract(format!("{} logits for {} labels", logits.len(), labels.len())));
    }
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_vec(logits.len(), 1, logits.to_vec())?);
    let loss = tape.bce_with_logits(z, labels, &vec![1.0; labels.len()])?;
    tape.value(loss).item()
}

/// Mean negative log-softmax of the labelled class.
pub fn cross_entropy_loss(logits: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = tape.cross_entropy(z, labels)?;
    tape.value(loss).item()
}

/// A model producing one logit column per task for every agent of a graph.
pub trait AgentClassifier<T: Scalar> {
    fn tasks(&self) -> &[Task];
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn logits(&self, tape: &mut Tape<T>, g: &HeteroGraph, training: bool, rng: &mut Rng) -> Result<Vec<Var>>;
}

impl<T: Scalar> AgentClassifier<T> for SceneModel<T> {
    fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn logits(&self, tape: &mut Tape<T>, g: &HeteroGraph, training: bool, rng: &mut Rng) -> Result<Vec<Var>> {
        self.forward(tape, g, training, rng)
    }
}

/// An assembled scene graph with per-task targets and label masks.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub name: String,
    pub graph: HeteroGraph,
    targets: [(Vec<f64>, Vec<bool>); 2],
}

impl SceneSample {
    pub fn new(name: impl Into<String>, scene: &SceneDescription) -> Result<Self> {
        Ok(SceneSample {
            name: name.into(),
            graph: assemble_graph(scene)?,
            targets: Task::ALL.map(|t| scene.targets(t)),
        })
    }

    pub fn targets(&self, task: Task) -> (&[f64], &[bool]) {
        let (y, m) = &self.targets[task as usize];
        (y, m)
    }

    pub fn labeled(&self, task: Task) -> usize {
        self.targets(task).1.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Mean validation F1 over the task heads after each epoch.
    pub val_scores: Vec<f64>,
    pub best_epoch: usize,
}

/// Union of several scenes with the targets of each head stacked in order.
struct Batch {
    graph: HeteroGraph,
    targets: Vec<(Vec<f64>, Vec<f64>)>,
}

fn make_batch(samples: &[&SceneSample], tasks: &[Task]) -> Result<Batch> {
    let graph = match samples {
        [one] => one.graph.clone(),
        many => HeteroGraph::disjoint_union(&many.iter().map(|s| &s.graph).collect::<Vec<_>>())?,
    };
    let targets = tasks
        .iter()
        .map(|&t| {
            let mut y = Vec::new();
            let mut w = Vec::new();
            for s in samples {
                let (ys, ms) = s.targets(t);
                y.extend_from_slice(ys);
                w.extend(ms.iter().map(|&m| if m { 1.0 } else { 0.0 }));
            }
            (y, w)
        })
        .collect();
    Ok(Batch { graph, targets })
}

/// Sum over heads of the masked mean BCE; `None` when no agent is labeled.
fn batch_loss<T: Scalar>(tape: &mut Tape<T>, logits: &[Var], batch: &Batch) -> Result<Option<Var>> {
    let mut parts = Vec::new();
    for (z, (y, w)) in logits.iter().zip(&batch.targets) {
        if w.iter().all(|&v| v == 0.0) {
            continue;
        }
        let y: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
        let w: Vec<T> = w.iter().map(|&v| T::from_f64(v)).collect();
        parts.push(tape.bce_with_logits(*z, &y, &w)?);
    }
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(tape.add_all(&parts)?))
}

const EVAL_CHUNK: usize = 64;

/// Evaluation-mode probabilities for every agent of every sample, per head.
pub fn predict<T: Scalar, M: AgentClassifier<T>>(model: &M, samples: &[SceneSample]) -> Result<Vec<Vec<Vec<f64>>>> {
    let heads = model.tasks().len();
    let mut out = vec![Vec::with_capacity(samples.len()); heads];
    let mut unused = Rng::seed_from_u64(0);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&SceneSample> = chunk.iter().collect();
        let batch = make_batch(&refs, model.tasks())?;
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, &batch.graph, false, &mut unused)?;
        for (h, z) in logits.into_iter().enumerate() {
            let probs: Vec<f64> = tape.value(z).data().iter().map(|v| sigmoid(v.as_f64())).collect();
            let mut offset = 0;
            for s in chunk {
                let n = s.graph.node_count(crate::scene::AGENT);
                out[h].push(probs[offset..offset + n].to_vec());
                offset += n;
            }
        }
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Confusion matrix per head over the labeled agents of `samples`.
pub fn evaluate<T: Scalar, M: AgentClassifier<T>>(model: &M, samples: &[SceneSample]) -> Result<Vec<Confusion>> {
    let probs = predict(model, samples)?;
    Ok(model
        .tasks()
        .iter()
        .zip(&probs)
        .map(|(&task, per_scene)| confusion_for(samples, task, |k, i| classify(per_scene[k][i])))
        .collect())
}

/// Confusion of an arbitrary per-agent rule over the labeled agents.
pub fn confusion_for(samples: &[SceneSample], task: Task, mut predict: impl FnMut(usize, usize) -> bool) -> Confusion {
    let mut c = Confusion::default();
    for (k, s) in samples.iter().enumerate() {
        let (y, m) = s.targets(task);
        for i in 0..y.len() {
            if m[i] {
                c.record(predict(k, i), y[i] > 0.5);
            }
        }
    }
    c
}

fn val_score<T: Scalar, M: AgentClassifier<T>>(model: &M, val: &[SceneSample]) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let c = evaluate(model, val)?;
    Ok(c.iter().map(Confusion::f1).sum::<f64>() / c.len() as f64)
}

/// Mini-batch training with per-epoch model selection on validation F1.
///
/// The model ends up holding the parameters of the best epoch (the earliest
/// one on ties). Deterministic for a given `seed`.
pub fn train<T: Scalar, M: AgentClassifier<T>>(
    model: &mut M,
    config: &TrainConfig,
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let tasks = model.tasks().to_vec();
    if !train_set.iter().any(|s| tasks.iter().any(|&t| s.labeled(t) > 0)) {
        return Err(Error::Contract("no labeled agents in the training set".into()));
    }
    let mut order_rng = Rng::seed_from_u64(seed);
    let mut dropout_rng = Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);
    let mut opt = Adam::new(config.optimizer, model.store())?;
    let mut outcome = TrainOutcome::default();
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&SceneSample> = chunk.iter().map(|&k| &train_set[k]).collect();
            let batch = make_batch(&refs, &tasks)?;
            let mut tape = Tape::new();
            let logits = model.logits(&mut tape, &batch.graph, true, &mut dropout_rng)?;
            let Some(loss) = batch_loss(&mut tape, &logits, &batch)? else {
                continue;
            };
            let grads = tape.backward(loss)?;
            outcome.step_losses.push(tape.value(loss).item()?.as_f64());
            let store = model.store_mut();
            store.zero_grad();
            store.accumulate(&tape, &grads);
            opt.step(store)?;
        }
        let score = val_score(model, val_set)?;
        outcome.val_scores.push(score);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.store().clone()));
            outcome.best_epoch = epoch;
        }
    }
    if let Some((_, store)) = best {
        *model.store_mut() = store;
    }
    Ok(outcome)
}

/// Mean masked training loss of `samples` in evaluation mode.
pub fn dataset_loss<T: Scalar, M: AgentClassifier<T>>(model: &M, samples: &[SceneSample]) -> Result<f64> {
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let batch = make_batch(&refs, model.tasks())?;
    let mut tape = Tape::new();
    let mut unused = Rng::seed_from_u64(0);
    let logits = model.logits(&mut tape, &batch.graph, false, &mut unused)?;
    match batch_loss(&mut tape, &logits, &batch)? {
        Some(l) => Ok(tape.value(l).item()?.as_f64()),
        None => Err(Error::Contract("no labeled agents".into())),
    }
}

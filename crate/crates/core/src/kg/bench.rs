//! Dataset loading, full-batch training and the multi-seed benchmark.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::graph::{build_kg_graph_with, BuildOptions, KgGraph, KgTask, DEFAULT_PRUNE_THRESHOLD};
use super::model::{KgModel, KgModelConfig};
use super::ntriples::{parse_ntriples, TripleStore};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Scalar, Tape};
use crate::train::{mean_std, Adam, AdamConfig};

pub const TRAIN_SPLIT_FILE: &str = "train.tsv";
pub const TEST_SPLIT_FILE: &str = "test.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    pub model: KgModelConfig,
    pub prune_threshold: usize,
    pub merge_below: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig {
            model: KgModelConfig::default(),
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            merge_below: 0,
            epochs: 50,
            optimizer: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }
}

impl KgConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("kg training needs at least one epoch".into()));
        }
        Ok(())
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            prune_threshold: self.prune_threshold,
            merge_below: self.merge_below,
        }
    }
}

/// Reads `(entity, class)` rows. Columns are tab separated; further columns
/// are ignored, IRIs may be wrapped in angle brackets, and a first line whose
/// entity field has no `:` is a header.
pub fn read_split_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let entity = cols.next().unwrap_or("").trim();
        let entity = entity.strip_prefix('<').and_then(|e| e.strip_suffix('>')).unwrap_or(entity);
        if i == 0 && !entity.contains(':') {
            continue;
        }
        let class = cols.next().map(str::trim).unwrap_or("");
        if entity.is_empty() || class.is_empty() {
            return Err(Error::Parse {
                location: format!("{}: line {}", path.display(), i + 1),
                message: "expected an entity and a class column".into(),
            });
        }
        rows.push((entity.to_string(), class.to_string()));
    }
    Ok(rows)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

/// A dataset directory: every `*.nt` file (read in name order) plus
/// `train.tsv` and `test.tsv`.
#[derive(Clone, Debug)]
pub struct KgDataset {
    pub name: String,
    pub store: TripleStore,
    pub task: KgTask,
}

impl KgDataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
            ErrorKind::NotFound => Error::MissingFile(dir.to_path_buf()),
            _ => e.into(),
        })?;
        let mut files: Vec<PathBuf> = entries
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|x| x == "nt"));
        files.sort();
        if files.is_empty() {
            return Err(Error::MissingFile(dir.join("*.nt")));
        }
        let mut store = TripleStore::default();
        for f in &files {
            store.extend(parse_ntriples(f)?);
        }
        let task = KgTask::new(
            &read_split_tsv(dir.join(TRAIN_SPLIT_FILE))?,
            &read_split_tsv(dir.join(TEST_SPLIT_FILE))?,
        )?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(KgDataset { name, store, task })
    }
}

/// Result of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgRun {
    pub seed: u64,
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

/// Index of the largest logit; ties go to the lower class.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Full-batch training on the training mask; returns the test accuracy
/// after the last epoch.
pub fn train_kg<T: Scalar>(kg: &KgGraph, task: &KgTask, config: &KgConfig, seed: u64) -> Result<(KgModel<T>, KgRun)> {
    config.validate()?;
    if task.train.is_empty() {
        return Err(Error::Contract("the kg task has no training entities".into()));
    }
    let g = &kg.graph;
    let mut rng = Rng::seed_from_u64(seed);
    let mut model = KgModel::<T>::new(config.model.clone(), g, task.num_classes(), &mut rng)?;
    let mut opt = Adam::new(config.optimizer, &model.store)?;
    let train_rows: Arc<[usize]> = task.train.clone().into();
    let train_labels: Vec<usize> = task.train.iter().map(|&k| task.labels[k]).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, g)?;
        let rows = tape.gather_rows(logits, train_rows.clone())?;
        let loss = tape.cross_entropy(rows, &train_labels)?;
        losses.push(tape.value(loss).item()?.as_f64());
        let grads = tape.backward(loss)?;
        model.store.zero_grad();
        model.store.accumulate(&tape, &grads);
        opt.step(&mut model.store)?;
    }
    let accuracy = kg_accuracy(&model, kg, task, &task.test)?;
    Ok((model, KgRun { seed, losses, accuracy }))
}

/// Share of `rows` whose arg-max class equals the label.
pub fn kg_accuracy<T: Scalar>(model: &KgModel<T>, kg: &KgGraph, task: &KgTask, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, &kg.graph)?;
    let z = tape.value(logits);
    let hits = rows.iter().filter(|&&k| argmax(z.row(k)) == task.labels[k]).count();
    Ok(hits as f64 / rows.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgReport {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub target_nodes: usize,
    pub other_nodes: usize,
    pub edges: usize,
    pub relations: usize,
}

impl KgReport {
    pub fn new(dataset: &str, kg: &KgGraph, runs: &[KgRun]) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (acc_mean, acc_std) = mean_std(&accuracies);
        let g = &kg.graph;
        KgReport {
            dataset: dataset.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracies,
            acc_mean,
            acc_std,
            target_nodes: g.node_count(super::TARGET),
            other_nodes: g.node_count(super::OTHER),
            edges: g.total_edges(),
            relations: g.schema().relations().len(),
        }
    }
}

/// Builds the graph once and trains one model per seed, in seed order.
pub fn run_benchmark(dataset: &KgDataset, config: &KgConfig, seeds: &[u64]) -> Result<KgReport> {
    config.validate()?;
    let kg = build_kg_graph_with(&dataset.store, &dataset.task, &config.build_options())?;
    let runs = seeds
        .iter()
        .map(|&s| train_kg::<f32>(&kg, &dataset.task, config, s).map(|(_, run)| run))
        .collect::<Result<Vec<_>>>()?;
    Ok(KgReport::new(&dataset.name, &kg, &runs))
}

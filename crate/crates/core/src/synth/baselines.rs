//! Graph-free reference predictors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numeric::{Linear, ParamStore, Rng, Scalar, Tape, Var};
use crate::scene::{SceneDescription, Task, AGENT, AGENT_FEATURE_DIM};
use crate::train::AgentClassifier;

/// Speed below which the velocity rule calls an agent parked.
pub const STATIONARY_SPEED: f64 = 0.1;

/// Parked iff the current speed is below [`STATIONARY_SPEED`].
pub fn velocity_baseline(scene: &SceneDescription) -> Vec<bool> {
    scene.agents.iter().map(|a| a.speed() < STATIONARY_SPEED).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 64 }
    }
}

/// Four linear layers with ReLU in between on the raw agent features; one
/// output column per task.
#[derive(Clone, Debug)]
pub struct MlpBaseline<T: Scalar> {
    pub config: MlpConfig,
    pub tasks: Vec<Task>,
    pub store: ParamStore<T>,
    layers: [Linear; 4],
}

impl<T: Scalar> MlpBaseline<T> {
    pub fn new<R: rand::Rng + ?Sized>(config: MlpConfig, tasks: &[Task], rng: &mut R) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("mlp hidden width must be positive".into()));
        }
        if tasks.is_empty() {
            return Err(Error::Config("a baseline needs at least one task".into()));
        }
        let h = config.hidden;
        let mut store = ParamStore::new();
        let dims = [AGENT_FEATURE_DIM, h, h, h, tasks.len()];
        let mut make = |k: usize| Linear::new(&mut store, &format!("mlp.{k}"), dims[k], dims[k + 1], rng);
        let layers = [make(0)?, make(1)?, make(2)?, make(3)?];
        Ok(MlpBaseline {
            config,
            tasks: tasks.to_vec(),
            store,
            layers,
        })
    }

    pub fn layers(&self) -> &[Linear; 4] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }
}

impl<T: Scalar> AgentClassifier<T> for MlpBaseline<T> {
    fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn logits(&self, tape: &mut Tape<T>, g: &HeteroGraph, _training: bool, _rng: &mut Rng) -> Result<Vec<Var>> {
        let feats = &g.nodes(AGENT).features;
        if feats.cols() != AGENT_FEATURE_DIM {
            return Err(Error::shape("mlp input", feats.shape(), (feats.rows(), AGENT_FEATURE_DIM)));
        }
        let mut x = tape.constant(feats.cast());
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, &self.store, x)?;
            if k < 3 {
                x = tape.relu(x);
            }
        }
        (0..self.tasks.len()).map(|h| tape.slice_cols(x, h, 1)).collect()
    }
}

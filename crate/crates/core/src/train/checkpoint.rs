//! Checkpoint container: `u64` little-endian manifest length, the JSON
//! manifest, then every tensor as little-endian `f32` in manifest order.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::AgentClassifier;
use crate::encoder::{EncoderConfig, SceneModel};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numeric::{ParamStore, Rng, Tape, Tensor, Var};
use crate::scene::Task;
use crate::synth::{MlpBaseline, MlpConfig};

const FORMAT: &str = "hetscene-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Scene { encoder: EncoderConfig },
    Mlp { mlp: MlpConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the data section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub model: ModelSpec,
    pub tasks: Vec<Task>,
    pub tensors: Vec<TensorEntry>,
}

/// Any model that can be stored in a checkpoint, at 32-bit precision.
#[derive(Clone, Debug)]
pub enum CheckpointModel {
    Scene(SceneModel<f32>),
    Mlp(MlpBaseline<f32>),
}

impl CheckpointModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            CheckpointModel::Scene(m) => ModelSpec::Scene {
                encoder: m.config.clone(),
            },
            CheckpointModel::Mlp(m) => ModelSpec::Mlp { mlp: m.config.clone() },
        }
    }

    /// A freshly initialized model of the given structure.
    pub fn build(spec: &ModelSpec, tasks: &[Task], seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        Ok(match spec {
            ModelSpec::Scene { encoder } => CheckpointModel::Scene(SceneModel::new(encoder.clone(), tasks, &mut rng)?),
            ModelSpec::Mlp { mlp } => CheckpointModel::Mlp(MlpBaseline::new(mlp.clone(), tasks, &mut rng)?),
        })
    }
}

impl AgentClassifier<f32> for CheckpointModel {
    fn tasks(&self) -> &[Task] {
        match self {
            CheckpointModel::Scene(m) => m.tasks(),
            CheckpointModel::Mlp(m) => m.tasks(),
        }
    }

    fn store(&self) -> &ParamStore<f32> {
        match self {
            CheckpointModel::Scene(m) => &m.store,
            CheckpointModel::Mlp(m) => &m.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            CheckpointModel::Scene(m) => &mut m.store,
            CheckpointModel::Mlp(m) => &mut m.store,
        }
    }

    fn logits(&self, tape: &mut Tape<f32>, g: &HeteroGraph, training: bool, rng: &mut Rng) -> Result<Vec<Var>> {
        match self {
            CheckpointModel::Scene(m) => m.logits(tape, g, training, rng),
            CheckpointModel::Mlp(m) => m.logits(tape, g, training, rng),
        }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &CheckpointModel) -> Result<()> {
    let store = model.store();
    let mut tensors = Vec::with_capacity(store.len());
    let mut data = Vec::with_capacity(4 * store.num_scalars());
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
            offset: data.len() as u64,
        });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32".into(),
        model: model.spec(),
        tasks: model.tasks().to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&(json.len() as u64).to_le_bytes())?;
    file.write_all(&json)?;
    file.write_all(&data)?;
    Ok(())
}

/// Parses the container and returns the manifest with its tensors in order.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Manifest, Vec<Tensor<f32>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let corrupt = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| corrupt("truncated header"))?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| corrupt("manifest length overflow"))?;
    let body = bytes.get(8..).ok_or_else(|| corrupt("truncated header"))?;
    if len > body.len() {
        return Err(corrupt("manifest extends past the end of the file"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..len]).map_err(|e| corrupt(&format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f32" {
        return Err(corrupt(&format!(
            "unsupported format {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }
    let data = &body[len..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let [r, c] = entry.shape;
        let start = usize::try_from(entry.offset).map_err(|_| corrupt("offset overflow"))?;
        let end = r
            .checked_mul(c)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(start))
            .ok_or_else(|| corrupt("tensor size overflow"))?;
        let raw = data
            .get(start..end)
            .ok_or_else(|| corrupt(&format!("tensor `{}` extends past the end of the file", entry.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::from_vec(r, c, values)?);
    }
    Ok((manifest, tensors))
}

/// Rebuilds the model named in the manifest and loads every tensor into it,
/// checking names and shapes against the configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointModel> {
    let (manifest, tensors) = read_checkpoint(path)?;
    let mut model = CheckpointModel::build(&manifest.model, &manifest.tasks, 0)?;
    let store = model.store_mut();
    if manifest.tensors.len() != store.len() {
        let expected: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        if let Some(extra) = manifest.tensors.iter().find(|e| !expected.contains(&e.name.as_str())) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{}`", extra.name)));
        }
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let k = manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        let expected = store.value(id).shape();
        let found = tensors[k].shape();
        if expected != found {
            return Err(Error::TensorShape { name, expected, found });
        }
        *store.value_mut(id) = tensors[k].clone();
    }
    Ok(model)
}
